"""Network configuration: counts, powers, geometry and channel statistics.

Everything a run treats as a parameter (rather than an optimization variable)
lives in :class:`ScenarioConfig`. Powers are stored in linear mW; dBm is only
accepted when a config is built from a document or overrides.
"""
from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema

# Reflection amplitude of every RIS element; fixed, not configurable.
REFLECTION_EFFICIENCY = 1.0

Point = tuple[float, float, float]


class ScenarioError(ValueError):
    """Raised for unparsable scenario documents or out-of-range fields."""


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    num_bs: int = 2
    num_ris: int = 2
    num_users: int = 2
    num_eves: int = 2
    num_antennas: int = 2
    num_elements: int = 4
    p_max_mw: float = dbm_to_mw(15.0)
    zeta: float = 1.0 / 3.0
    p_bs_mw: float = 100.0
    p_user_mw: float = 20.0
    p_ris_mw: float = 1.0
    noise_user_mw: float = dbm_to_mw(-80.0)
    noise_eve_mw: float = dbm_to_mw(-80.0)
    phi_outage: float = 0.1
    rate_redundancy: float = 0.5
    sigma_bar: float = 0.01
    l0: float = db_to_linear(-30.0)
    ple_bu: float = 3.6
    ple_be: float = 3.6
    ple_ru: float = 2.2
    ple_re: float = 2.2
    ple_br: float = 2.0
    k_bu: float = 0.0
    k_be: float = 0.0
    k_ru: float = 0.0
    k_re: float = 0.0
    k_br: float = math.inf
    antenna_spacing: float = 0.5
    bs_pos: tuple[Point, ...] = field(default=())
    ris_pos: tuple[Point, ...] = field(default=())
    user_pos: tuple[Point, ...] = field(default=())
    eve_pos: tuple[Point, ...] = field(default=())
    rng_seed: int = 0

    def __post_init__(self):
        # Positions left empty follow the default layout for the given counts.
        defaults = default_positions(
            self.num_bs, self.num_ris, self.num_users, self.num_eves
        )
        for name in ("bs_pos", "ris_pos", "user_pos", "eve_pos"):
            if not getattr(self, name) and defaults[name]:
                object.__setattr__(self, name, defaults[name])
        validate(self)

    @property
    def MB(self) -> int:
        return self.num_antennas * self.num_bs

    @property
    def RN(self) -> int:
        return self.num_elements * self.num_ris

    # short aliases matching the usual symbols
    B = property(lambda self: self.num_bs)
    R = property(lambda self: self.num_ris)
    K = property(lambda self: self.num_users)
    J = property(lambda self: self.num_eves)
    M = property(lambda self: self.num_antennas)
    N = property(lambda self: self.num_elements)

    @property
    def with_ris(self) -> bool:
        return self.num_ris > 0

    def replace(self, **changes) -> "ScenarioConfig":
        # Count changes invalidate default positions unless positions are given too.
        moved = {
            "num_bs": "bs_pos",
            "num_ris": "ris_pos",
            "num_users": "user_pos",
            "num_eves": "eve_pos",
        }
        for count, pos in moved.items():
            if count in changes and pos not in changes:
                if changes[count] != getattr(self, count):
                    changes[pos] = ()
        return dataclasses.replace(self, **changes)


HEIGHTS = {"bs": 12.0, "ris": 8.0, "user": 1.5, "eve": 1.5}


def default_positions(B: int, R: int, K: int, J: int, heights=None):
    h = dict(HEIGHTS, **(heights or {}))
    return {
        "bs_pos": tuple((0.0, 40.0 * b + 30.0, h["bs"]) for b in range(B)),
        "ris_pos": tuple((65.0, 40.0 * r + 30.0, h["ris"]) for r in range(R)),
        "user_pos": tuple((60.0, 5.0 * k + 30.0, h["user"]) for k in range(K)),
        "eve_pos": tuple((55.0, 5.0 * j + 32.0, h["eve"]) for j in range(J)),
    }


def validate(cfg: ScenarioConfig) -> None:
    for name in ("num_bs", "num_users", "num_eves", "num_antennas", "num_elements"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or value < 1:
            raise ScenarioError(f"{name} must be an integer >= 1, got {value!r}")
    # num_ris = 0 is the no-RIS ablation.
    if not isinstance(cfg.num_ris, int) or cfg.num_ris < 0:
        raise ScenarioError(f"num_ris must be an integer >= 0, got {cfg.num_ris!r}")
    for name in (
        "p_max_mw", "p_bs_mw", "p_user_mw", "noise_user_mw", "noise_eve_mw", "l0",
    ):
        if not getattr(cfg, name) > 0:
            raise ScenarioError(f"{name} must be > 0, got {getattr(cfg, name)!r}")
    if not cfg.p_ris_mw >= 0:
        raise ScenarioError(f"p_ris_mw must be >= 0, got {cfg.p_ris_mw!r}")
    if not 0 < cfg.zeta <= 1:
        raise ScenarioError(f"zeta must lie in (0, 1], got {cfg.zeta!r}")
    if not 0 < cfg.phi_outage < 1:
        raise ScenarioError(f"phi_outage must lie in (0, 1), got {cfg.phi_outage!r}")
    if not cfg.sigma_bar >= 0:
        raise ScenarioError(f"sigma_bar must be >= 0, got {cfg.sigma_bar!r}")
    if not cfg.rate_redundancy >= 0:
        raise ScenarioError(f"rate_redundancy must be >= 0, got {cfg.rate_redundancy!r}")
    if not cfg.antenna_spacing > 0:
        raise ScenarioError(f"antenna_spacing must be > 0, got {cfg.antenna_spacing!r}")
    for name in ("k_bu", "k_be", "k_ru", "k_re", "k_br"):
        if not getattr(cfg, name) >= 0:
            raise ScenarioError(f"{name} must be >= 0, got {getattr(cfg, name)!r}")
    for name in ("ple_bu", "ple_be", "ple_ru", "ple_re", "ple_br"):
        if not getattr(cfg, name) > 0:
            raise ScenarioError(f"{name} must be > 0, got {getattr(cfg, name)!r}")

    counts = {
        "bs_pos": cfg.num_bs,
        "ris_pos": cfg.num_ris,
        "user_pos": cfg.num_users,
        "eve_pos": cfg.num_eves,
    }
    seen: dict[Point, str] = {}
    for name, count in counts.items():
        pos = getattr(cfg, name)
        if len(pos) != count:
            raise ScenarioError(f"{name} has {len(pos)} entries but the count is {count}")
        for i, p in enumerate(pos):
            if len(p) != 3:
                raise ScenarioError(f"{name}[{i}] must be a 3-D point")
            key = tuple(float(c) for c in p)
            if key in seen:
                warnings.warn(
                    f"{name}[{i}] coincides with {seen[key]}", stacklevel=3
                )
            seen[key] = f"{name}[{i}]"


def circuit_power(cfg: ScenarioConfig) -> float:
    """Static hardware power in mW: every BS, the user side, and all RIS elements."""
    return cfg.num_bs * cfg.p_bs_mw + cfg.p_user_mw + cfg.num_ris * cfg.num_elements * cfg.p_ris_mw


def without_ris(cfg: ScenarioConfig) -> ScenarioConfig:
    return cfg.replace(num_ris=0)


# ---------------------------------------------------------------------------
# geometry presets used by individual sweeps


def eve_sweep_geometry(cfg: ScenarioConfig) -> ScenarioConfig:
    """Users at (60, 8k+30), Eves at (55, 4j+31); k, j zero-based."""
    return cfg.replace(
        user_pos=tuple((60.0, 8.0 * k + 30.0, HEIGHTS["user"]) for k in range(cfg.num_users)),
        eve_pos=tuple((55.0, 4.0 * j + 31.0, HEIGHTS["eve"]) for j in range(cfg.num_eves)),
    )


def bs_sweep_geometry(cfg: ScenarioConfig) -> ScenarioConfig:
    """Base stations at (0, 15b+20)."""
    return cfg.replace(
        bs_pos=tuple((0.0, 15.0 * b + 20.0, HEIGHTS["bs"]) for b in range(cfg.num_bs))
    )


FAIRNESS_USERS = ((60.0, 70.0), (60.0, 90.0), (60.0, 120.0))


def fairness_geometry(cfg: ScenarioConfig) -> ScenarioConfig:
    """Three users spread along the street."""
    return cfg.replace(
        num_users=3,
        user_pos=tuple((x, y, HEIGHTS["user"]) for x, y in FAIRNESS_USERS),
    )


# ---------------------------------------------------------------------------
# document boundary

_SCALAR_FIELDS = {
    "num_bs": "num_bs",
    "num_ris": "num_ris",
    "num_users": "num_users",
    "num_eves": "num_eves",
    "num_antennas": "num_antennas",
    "num_elements": "num_elements",
    "zeta": "zeta",
    "p_bs_mw": "p_bs_mw",
    "p_user_mw": "p_user_mw",
    "p_ris_mw": "p_ris_mw",
    "phi_outage": "phi_outage",
    "rate_redundancy": "rate_redundancy",
    "sigma_bar": "sigma_bar",
    "antenna_spacing": "antenna_spacing",
    "rng_seed": "rng_seed",
}

_DBM_FIELDS = {
    "pb_dbm": "p_max_mw",
    "noise_user_dbm": "noise_user_mw",
    "noise_eve_dbm": "noise_eve_mw",
}

_POSITION_FIELDS = {
    "bs_positions": ("bs_pos", "bs"),
    "ris_positions": ("ris_pos", "ris"),
    "user_positions": ("user_pos", "user"),
    "eve_positions": ("eve_pos", "eve"),
}

_LINKS = ("bu", "be", "ru", "re", "br")


def load_schema() -> dict:
    text = resources.files("ris_see").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def _parse_source(source) -> dict:
    if source is None:
        return {}
    if isinstance(source, Mapping):
        return dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario file {source}: {exc}") from exc
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    return doc


def _as_float(value, name):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name} must be numeric, got {value!r}") from exc


def build_scenario(source=None, overrides: Mapping[str, Any] | None = None) -> ScenarioConfig:
    """Build a config from a JSON document (path, text or mapping) plus overrides.

    Unset fields take the default network of the simulation section. Override
    keys use the document field names, e.g. ``{"pb_dbm": 20, "num_users": 3}``.
    """
    doc = _parse_source(source)
    doc.update(overrides or {})
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"field {where}: {exc.message}") from exc

    kwargs: dict[str, Any] = {}
    for key, attr in _SCALAR_FIELDS.items():
        if key in doc:
            kwargs[attr] = doc[key]
    for key, attr in _DBM_FIELDS.items():
        if key in doc:
            kwargs[attr] = dbm_to_mw(_as_float(doc[key], key))
    if "pb_mw" in doc:
        kwargs["p_max_mw"] = _as_float(doc["pb_mw"], "pb_mw")
    if "noise_dbm" in doc:
        noise = dbm_to_mw(_as_float(doc["noise_dbm"], "noise_dbm"))
        kwargs.setdefault("noise_user_mw", noise)
        kwargs.setdefault("noise_eve_mw", noise)
    if "l0_db" in doc:
        kwargs["l0"] = db_to_linear(_as_float(doc["l0_db"], "l0_db"))
    for link, value in (doc.get("pathloss_exponents") or {}).items():
        kwargs[f"ple_{link}"] = _as_float(value, f"pathloss_exponents.{link}")
    for link, value in (doc.get("rician_factors") or {}).items():
        kwargs[f"k_{link}"] = _as_float(value, f"rician_factors.{link}")
    if "phi_outage" in kwargs:
        kwargs["phi_outage"] = _as_float(kwargs["phi_outage"], "phi_outage")

    heights = dict(HEIGHTS, **(doc.get("heights") or {}))
    counts = {
        "bs": kwargs.get("num_bs", 2),
        "ris": kwargs.get("num_ris", 2),
        "user": kwargs.get("num_users", 2),
        "eve": kwargs.get("num_eves", 2),
    }
    defaults = default_positions(
        counts["bs"], counts["ris"], counts["user"], counts["eve"], heights
    )
    for key, (attr, node) in _POSITION_FIELDS.items():
        if key in doc:
            pts = []
            for p in doc[key]:
                z = p[2] if len(p) == 3 else heights[node]
                pts.append((float(p[0]), float(p[1]), float(z)))
            kwargs[attr] = tuple(pts)
        else:
            kwargs[attr] = defaults[attr]

    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc


def scenario_to_doc(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`build_scenario` (document field names, dBm at the boundary)."""
    doc = {key: getattr(cfg, attr) for key, attr in _SCALAR_FIELDS.items()}
    doc["pb_dbm"] = mw_to_dbm(cfg.p_max_mw)
    doc["noise_user_dbm"] = mw_to_dbm(cfg.noise_user_mw)
    doc["noise_eve_dbm"] = mw_to_dbm(cfg.noise_eve_mw)
    doc["l0_db"] = 10.0 * math.log10(cfg.l0)
    doc["pathloss_exponents"] = {link: getattr(cfg, f"ple_{link}") for link in _LINKS}
    doc["rician_factors"] = {
        link: ("inf" if math.isinf(getattr(cfg, f"k_{link}")) else getattr(cfg, f"k_{link}"))
        for link in _LINKS
    }
    for key, (attr, _) in _POSITION_FIELDS.items():
        doc[key] = [list(p) for p in getattr(cfg, attr)]
    return doc
