"""Max-min secrecy energy efficiency for RIS-aided cell-free networks."""
__version__ = "0.1.0"
