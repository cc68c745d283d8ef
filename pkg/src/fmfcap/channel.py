"""Few-mode fiber IM/DD channel: MZM, crosstalk matrices and AWGN.

All powers are linear mW internally; dB/dBm only appear at the edges
(``ComponentSpec`` fields and ``LinkConfig.p_tot_dbm`` / ``snr_db``).
A transfer matrix is a plain ``(N, N)`` float array, a batch of them is
``(n, N, N)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Invalid physical or numerical configuration."""


def db_to_lin(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def lin_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


dbm_to_mw = db_to_lin
mw_to_dbm = lin_to_db


@dataclass(frozen=True)
class ComponentSpec:
    """Stochastic description of one MUX / splice / DEMUX.

    ``mean_xt_db[i]`` is the expected leakage out of mode ``i`` and may be
    ``-inf`` for an ideal component. Each realisation draws the crosstalk
    uniformly in dB over ``mean +- xt_range_db / 2``; losses are fixed.
    """

    mean_xt_db: tuple
    loss_db: tuple
    xt_range_db: float = 6.0

    def __post_init__(self):
        xt = np.asarray(self.mean_xt_db, dtype=float)
        loss = np.asarray(self.loss_db, dtype=float)
        if xt.ndim != 1 or xt.shape != loss.shape:
            raise ConfigError("mean_xt_db and loss_db must be vectors of equal length")
        if np.any(xt >= 0) or np.any(np.isnan(xt)):
            raise ConfigError(f"mean crosstalk must be negative dB, got {xt}")
        if np.any(loss < 0):
            raise ConfigError(f"losses must be >= 0 dB, got {loss}")
        if not self.xt_range_db >= 0:
            raise ConfigError("xt_range_db must be >= 0")
        if np.any(xt + self.xt_range_db / 2 >= 0):
            raise ConfigError("crosstalk window reaches 0 dB")
        object.__setattr__(self, "mean_xt_db", tuple(float(v) for v in xt))
        object.__setattr__(self, "loss_db", tuple(float(v) for v in loss))

    @property
    def n_modes(self) -> int:
        return len(self.mean_xt_db)

    def with_xt(self, index: int, value_db: float) -> "ComponentSpec":
        xt = list(self.mean_xt_db)
        xt[index] = value_db
        return dataclasses.replace(self, mean_xt_db=tuple(xt))


# Measured lantern components, 2 modes (LP01, LP11).
MEASURED_COMPONENTS = {
    "mux": ComponentSpec((-18.0, -15.0), (0.7, 1.4)),
    "demux": ComponentSpec((-11.0, -11.0), (1.5, 3.0)),
    "spl": ComponentSpec((-25.0, -25.0), (0.04, 0.04)),
}


@dataclass(frozen=True)
class NoiseModel:
    sigma_w: float

    def __post_init__(self):
        if not self.sigma_w > 0:
            raise ConfigError(f"sigma_w must be > 0, got {self.sigma_w}")


@dataclass(frozen=True)
class LinkConfig:
    n_modes: int = 2
    mod_order: int = 8
    v_pi: float = 1.0
    p_tot_dbm: float = 3.0
    snr_db: float = 20.0
    mux: ComponentSpec = field(default_factory=lambda: MEASURED_COMPONENTS["mux"])
    spl: ComponentSpec = field(default_factory=lambda: MEASURED_COMPONENTS["spl"])
    demux: ComponentSpec = field(default_factory=lambda: MEASURED_COMPONENTS["demux"])
    tied_splices: bool = False

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigError("n_modes must be >= 1")
        if self.mod_order < 2:
            raise ConfigError("mod_order must be >= 2")
        if not self.v_pi > 0:
            raise ConfigError("v_pi must be > 0")
        for name in ("mux", "spl", "demux"):
            if getattr(self, name).n_modes != self.n_modes:
                raise ConfigError(f"{name} spec has wrong number of modes")

    @property
    def p_tot(self) -> float:
        """Total optical power in mW."""
        return float(dbm_to_mw(self.p_tot_dbm))

    @property
    def sigma_w(self) -> float:
        return snr_to_sigma(self.snr_db, self.p_tot_dbm, self.n_modes)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma_w)

    def equal_split(self) -> np.ndarray:
        return np.full(self.n_modes, self.p_tot / self.n_modes)

    def replace(self, **changes) -> "LinkConfig":
        return dataclasses.replace(self, **changes)

    def without_drift(self) -> "LinkConfig":
        return self.replace(
            mux=dataclasses.replace(self.mux, xt_range_db=0.0),
            spl=dataclasses.replace(self.spl, xt_range_db=0.0),
            demux=dataclasses.replace(self.demux, xt_range_db=0.0),
        )


# ---------------------------------------------------------------- modulator


def _check_powers(powers, v_pi):
    powers = np.asarray(powers, dtype=float)
    if np.any(powers <= 0):
        raise ConfigError("carrier powers must be > 0")
    if not v_pi > 0:
        raise ConfigError("v_pi must be > 0")
    return powers


def mzm_modulate(v, powers, v_pi=1.0):
    """Quadrature-biased MZM: ``P * cos^2(pi/2 * v / v_pi)``, any drive voltage."""
    powers = _check_powers(powers, v_pi)
    v = np.asarray(v, dtype=float)
    return powers * np.cos(0.5 * np.pi * v / v_pi) ** 2


def mzm_invert(s, powers, v_pi=1.0):
    """Inverse of :func:`mzm_modulate` on the bijective branch ``[0, v_pi]``."""
    powers = _check_powers(powers, v_pi)
    s = np.asarray(s, dtype=float)
    ratio = s / powers
    if np.any(ratio < 0) or np.any(ratio > 1 + 1e-12):
        raise ValueError("intensity outside [0, P_i]")
    return (2.0 * v_pi / np.pi) * np.arccos(np.sqrt(np.clip(ratio, 0.0, 1.0)))


# ---------------------------------------------------------------- crosstalk


def _assemble(xt_lin, alpha_lin):
    """Component transfer matrices from crosstalk draws of shape ``(n, N)``.

    Column ``i`` keeps ``1 - xt_i`` on the diagonal and spreads ``xt_i``
    evenly over the other ``N - 1`` modes; everything divided by ``alpha_i``.
    """
    n, N = xt_lin.shape
    if N == 1:
        return np.broadcast_to(1.0 / alpha_lin, (n, 1, 1)).copy()
    leak = xt_lin / (N - 1)
    H = np.broadcast_to(leak[:, None, :], (n, N, N)).copy()
    idx = np.arange(N)
    H[:, idx, idx] = 1.0 - xt_lin
    return H / alpha_lin[None, None, :]


def draw_component_matrices(spec: ComponentSpec, rng, n: int) -> np.ndarray:
    """``n`` independent realisations of one component, shape ``(n, N, N)``."""
    mean = np.asarray(spec.mean_xt_db)
    half = spec.xt_range_db / 2.0
    u = rng.uniform(-half, half, size=(n, spec.n_modes))
    with np.errstate(invalid="ignore"):
        xt_db = np.where(np.isneginf(mean), -np.inf, mean + u)
    return _assemble(db_to_lin(xt_db), db_to_lin(spec.loss_db))


def draw_component_matrix(spec: ComponentSpec, rng) -> np.ndarray:
    return draw_component_matrices(spec, rng, 1)[0]


def expected_component_matrix(spec: ComponentSpec) -> np.ndarray:
    """Matrix at the mean crosstalk (no drift)."""
    xt = db_to_lin(np.asarray(spec.mean_xt_db))[None, :]
    return _assemble(xt, db_to_lin(spec.loss_db))[0]


def compose_channel(mux, spl_a, spl_b, demux):
    """``H = DEMUX . SPL_b . SPL_a . MUX``; works on single matrices or batches."""
    mats = [np.asarray(m, dtype=float) for m in (mux, spl_a, spl_b, demux)]
    shapes = {m.shape[-2:] for m in mats}
    if len(shapes) != 1 or mats[0].shape[-1] != mats[0].shape[-2]:
        raise ConfigError(f"non-conformable transfer matrices: {[m.shape for m in mats]}")
    return mats[3] @ mats[2] @ mats[1] @ mats[0]


def draw_channels(link: LinkConfig, rng, n: int) -> np.ndarray:
    """``n`` end-to-end channel realisations, shape ``(n, N, N)``.

    Draw order (fixed, part of the reproducibility contract): MUX, splice a,
    splice b, DEMUX.
    """
    mux = draw_component_matrices(link.mux, rng, n)
    spl_a = draw_component_matrices(link.spl, rng, n)
    spl_b = spl_a if link.tied_splices else draw_component_matrices(link.spl, rng, n)
    demux = draw_component_matrices(link.demux, rng, n)
    return compose_channel(mux, spl_a, spl_b, demux)


def expected_channel(link: LinkConfig) -> np.ndarray:
    spl = expected_component_matrix(link.spl)
    return compose_channel(
        expected_component_matrix(link.mux), spl, spl, expected_component_matrix(link.demux)
    )


def channel_ensemble(link: LinkConfig, n: int, seed: int) -> np.ndarray:
    """Seeded, fixed ensemble shared by the bound and BAA computations."""
    return draw_channels(link, np.random.default_rng(seed), n)


# ---------------------------------------------------------------- noise / SNR


def snr_to_sigma(snr_db, p_tot_dbm, n_modes):
    """sigma_w from ``SNR = 10 log10(P_tot / (2 N sigma_w))``."""
    if n_modes < 1:
        raise ConfigError("n_modes must be >= 1")
    return float(dbm_to_mw(p_tot_dbm) / (2.0 * n_modes * db_to_lin(snr_db)))


def sigma_to_snr(sigma_w, p_tot_dbm, n_modes):
    return float(lin_to_db(dbm_to_mw(p_tot_dbm) / (2.0 * n_modes * sigma_w)))


def apply_channel(s, h, noise: NoiseModel | float, rng=None):
    """``y = H s + w``; ``s`` is ``(N,)`` or a batch ``(n, N)``, ``h`` matches.

    A zero noise scale returns ``H s`` exactly without touching ``rng``.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("intensities must be nonnegative")
    sigma = noise.sigma_w if isinstance(noise, NoiseModel) else float(noise)
    h = np.asarray(h, dtype=float)
    if h.ndim == 2:
        y = s @ h.T
    else:
        y = np.einsum("nij,nj->ni", h, s)
    if sigma == 0:
        return y
    return y + sigma * rng.standard_normal(y.shape)
