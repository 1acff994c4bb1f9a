"""Channel synthesis, effective-channel assembly and the Eve CSI error model.

Conventions. A single-antenna receiver sees ``h^H x`` from a transmitter
sending ``x``; RIS reflected paths read ``theta^H diag(f^H) G x`` with
``G`` the N x M BS-to-RIS matrix. Aggregates stack per-BS blocks of M
antennas and per-RIS blocks of N elements in index order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .scenario import ScenarioConfig

# stream identifiers for the per-link random generators
LINK_CODES = {"bu": 1, "be": 2, "ru": 3, "re": 4, "br": 5, "eve_error": 6, "mc": 7}


def link_rng(seed: int, link: str, *index: int) -> np.random.Generator:
    """Independent counter-based stream for one link, keyed by its indices."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(LINK_CODES[link],) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly symmetric CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def path_loss_amplitude(d: float, upsilon: float, l0: float) -> float:
    """Large-scale amplitude sqrt(L0 * d^-upsilon), reference distance 1 m."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d!r}")
    return math.sqrt(l0 * d ** (-upsilon))


def steering_vector(angle: float, count: int, spacing: float = 0.5) -> np.ndarray:
    """Uniform linear array response; ``spacing`` is in wavelengths."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count!r}")
    p = np.arange(count)
    return np.exp(1j * 2.0 * np.pi * spacing * p * math.sin(angle))


def azimuth(src, dst) -> float:
    """Direction from ``src`` towards ``dst`` in the horizontal plane."""
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def rician_weights(kfactor: float) -> tuple[float, float]:
    if math.isinf(kfactor):
        return 1.0, 0.0
    return math.sqrt(kfactor / (kfactor + 1.0)), math.sqrt(1.0 / (kfactor + 1.0))


def link_matrix(tx, rx, n_tx, n_rx, upsilon, kfactor, cfg, rng) -> np.ndarray:
    """n_rx x n_tx link: path loss times a Rician small-scale sample."""
    d = math.dist(tx, rx)
    amp = path_loss_amplitude(d, upsilon, cfg.l0)
    w_los, w_nlos = rician_weights(kfactor)
    nlos = crandn(rng, (n_rx, n_tx))
    los = np.outer(
        steering_vector(azimuth(rx, tx), n_rx, cfg.antenna_spacing),
        steering_vector(azimuth(tx, rx), n_tx, cfg.antenna_spacing).conj(),
    )
    return amp * (w_los * los + w_nlos * nlos)


@dataclass(frozen=True)
class ChannelSet:
    """Per-link channels; aggregates are derived on access.

    Shapes: h_bu (B, K, M), h_be (B, J, M), f_ru (R, K, N), f_re (R, J, N),
    G_br (B, R, N, M).
    """

    h_bu: np.ndarray
    h_be: np.ndarray
    f_ru: np.ndarray
    f_re: np.ndarray
    G_br: np.ndarray

    @property
    def dims(self):
        B, K, M = self.h_bu.shape
        R, _, N = self.f_ru.shape
        J = self.h_be.shape[1]
        return B, R, K, J, M, N

    @property
    def MB(self) -> int:
        B, _, _, _, M, _ = self.dims
        return M * B

    @property
    def RN(self) -> int:
        _, R, _, _, _, N = self.dims
        return R * N

    # aggregates ---------------------------------------------------------
    @property
    def h_d(self) -> np.ndarray:
        """(K, MB) direct user channels."""
        return np.concatenate(list(self.h_bu), axis=-1)

    @property
    def h_de(self) -> np.ndarray:
        """(J, MB) direct Eve channels."""
        return np.concatenate(list(self.h_be), axis=-1)

    @property
    def f(self) -> np.ndarray:
        """(K, RN) RIS-to-user channels."""
        K = self.h_bu.shape[1]
        if self.RN == 0:
            return np.zeros((K, 0), complex)
        return np.concatenate(list(self.f_ru), axis=-1)

    @property
    def f_e(self) -> np.ndarray:
        J = self.h_be.shape[1]
        if self.RN == 0:
            return np.zeros((J, 0), complex)
        return np.concatenate(list(self.f_re), axis=-1)

    @property
    def G(self) -> np.ndarray:
        """(RN, MB) stacked BS-to-RIS matrix."""
        B, R, _, _, M, N = self.dims
        G = np.zeros((R * N, B * M), complex)
        for b in range(B):
            for r in range(R):
                G[r * N:(r + 1) * N, b * M:(b + 1) * M] = self.G_br[b, r]
        return G

    @property
    def H_users(self) -> np.ndarray:
        """(K, RN+1, MB) effective channels of the legitimate users."""
        return assemble_effective(self.h_d, self.f, self.G)

    @property
    def H_eves(self) -> np.ndarray:
        return assemble_effective(self.h_de, self.f_e, self.G)

    def scaled(self, user: float, eve: float) -> "ChannelSet":
        """Multiply user-side links by ``user`` and Eve-side links by ``eve``."""
        return ChannelSet(
            self.h_bu * user, self.h_be * eve, self.f_ru * user, self.f_re * eve, self.G_br
        )

    def with_eve(self, h_de: np.ndarray, f_e: np.ndarray) -> "ChannelSet":
        """Replace the Eve aggregates, splitting them back into link blocks."""
        B, R, _, J, M, N = self.dims
        h_be = np.stack([h_de[:, b * M:(b + 1) * M] for b in range(B)])
        f_re = np.stack([f_e[:, r * N:(r + 1) * N] for r in range(R)]) if R else self.f_re
        return replace(self, h_be=h_be, f_re=f_re)


def assemble_effective(h_d: np.ndarray, f: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Stack ``diag(f^H) G`` over ``h_d^H`` for each row of ``h_d``/``f``.

    Returns an array of shape (count, RN+1, MB) such that
    ``theta_hat^H H w = (h_d^H + theta^H diag(f^H) G) w``.
    """
    h_d = np.atleast_2d(h_d)
    f = np.atleast_2d(f) if f.size else np.zeros((h_d.shape[0], 0), complex)
    if f.shape[1] != G.shape[0] or G.shape[1] != h_d.shape[1] or f.shape[0] != h_d.shape[0]:
        raise ValueError(
            f"dimension mismatch: h_d {h_d.shape}, f {f.shape}, G {G.shape}"
        )
    top = f.conj()[:, :, None] * G[None, :, :]
    return np.concatenate([top, h_d.conj()[:, None, :]], axis=1)


def sample_channels(cfg: ScenarioConfig, seed: int | None = None) -> ChannelSet:
    """Draw every link from its own stream; same seed gives identical output."""
    seed = cfg.rng_seed if seed is None else seed
    B, R, K, J, M, N = cfg.num_bs, cfg.num_ris, cfg.num_users, cfg.num_eves, cfg.num_antennas, cfg.num_elements

    def draw(link, i, j, tx, rx, n_tx, n_rx, ple, kf):
        return link_matrix(tx, rx, n_tx, n_rx, ple, kf, cfg, link_rng(seed, link, i, j))

    # single-antenna receivers: h = (1 x n_tx row)^H
    h_bu = np.array([[draw("bu", b, k, cfg.bs_pos[b], cfg.user_pos[k], M, 1, cfg.ple_bu, cfg.k_bu)[0].conj()
                      for k in range(K)] for b in range(B)])
    h_be = np.array([[draw("be", b, j, cfg.bs_pos[b], cfg.eve_pos[j], M, 1, cfg.ple_be, cfg.k_be)[0].conj()
                      for j in range(J)] for b in range(B)])
    f_ru = np.array([[draw("ru", r, k, cfg.ris_pos[r], cfg.user_pos[k], N, 1, cfg.ple_ru, cfg.k_ru)[0].conj()
                      for k in range(K)] for r in range(R)]).reshape(R, K, N)
    f_re = np.array([[draw("re", r, j, cfg.ris_pos[r], cfg.eve_pos[j], N, 1, cfg.ple_re, cfg.k_re)[0].conj()
                      for j in range(J)] for r in range(R)]).reshape(R, J, N)
    G_br = np.array([[draw("br", b, r, cfg.bs_pos[b], cfg.ris_pos[r], M, N, cfg.ple_br, cfg.k_br)
                      for r in range(R)] for b in range(B)]).reshape(B, R, N, M)
    return ChannelSet(h_bu, h_be, f_ru, f_re, G_br)


def noise_normalized(ch: ChannelSet, cfg: ScenarioConfig) -> ChannelSet:
    """Scale links so both noise powers become 1 (powers stay in mW)."""
    return ch.scaled(1.0 / math.sqrt(cfg.noise_user_mw), 1.0 / math.sqrt(cfg.noise_eve_mw))


# ---------------------------------------------------------------------------
# Eve CSI errors


@dataclass(frozen=True)
class EveErrorModel:
    """Per-Eve error standard deviations on the direct and reflected links."""

    sigma_d: np.ndarray  # (J,)
    sigma_f: np.ndarray  # (J,)

    def __post_init__(self):
        if np.any(np.asarray(self.sigma_d) < 0) or np.any(np.asarray(self.sigma_f) < 0):
            raise ValueError("error standard deviations must be nonnegative")

    @classmethod
    def from_sigma_bar(cls, ch: ChannelSet, sigma_bar: float) -> "EveErrorModel":
        """Error energy is a ``sigma_bar`` fraction of the estimate energy."""
        h_de, f_e = ch.h_de, ch.f_e
        sd = np.sqrt(sigma_bar * np.sum(np.abs(h_de) ** 2, axis=1) / h_de.shape[1])
        if f_e.shape[1]:
            sf = np.sqrt(sigma_bar * np.sum(np.abs(f_e) ** 2, axis=1) / f_e.shape[1])
        else:
            sf = np.zeros(h_de.shape[0])
        return cls(sd, sf)

    @classmethod
    def zero(cls, J: int) -> "EveErrorModel":
        return cls(np.zeros(J), np.zeros(J))

    def E_d(self, j: int, MB: int) -> np.ndarray:
        return self.sigma_d[j] ** 2 * np.eye(MB)

    def E_f(self, j: int, RN: int) -> np.ndarray:
        return self.sigma_f[j] ** 2 * np.eye(RN)

    def scaled(self, factor: float) -> "EveErrorModel":
        return EveErrorModel(self.sigma_d * factor, self.sigma_f * factor)


def perturb_eve_channels(ch: ChannelSet, err: EveErrorModel, rng: np.random.Generator) -> ChannelSet:
    """True Eve channels = estimates + CN(0, E) errors; user links untouched."""
    h_de, f_e = ch.h_de, ch.f_e
    dh = crandn(rng, h_de.shape) * np.asarray(err.sigma_d)[:, None]
    df = crandn(rng, f_e.shape) * np.asarray(err.sigma_f)[:, None]
    return ch.with_eve(h_de + dh, f_e + df)


# ---------------------------------------------------------------------------
# textual dump


def _encode(a: np.ndarray):
    a = np.asarray(a, complex)
    return {"shape": list(a.shape), "data": np.stack([a.real.ravel(), a.imag.ravel()], -1).tolist()}


def _decode(obj) -> np.ndarray:
    data = np.asarray(obj["data"], float).reshape(-1, 2)
    return (data[:, 0] + 1j * data[:, 1]).reshape(obj["shape"])


_FIELDS = ("h_bu", "h_be", "f_ru", "f_re", "G_br")


def dump_channels(ch: ChannelSet, path=None) -> str:
    """JSON text with [re, im] pairs; written to ``path`` if given."""
    text = json.dumps({name: _encode(getattr(ch, name)) for name in _FIELDS})
    if path is not None:
        Path(path).write_text(text)
    return text


def load_channels(source) -> ChannelSet:
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    doc = json.loads(text)
    return ChannelSet(**{name: _decode(doc[name]) for name in _FIELDS})
