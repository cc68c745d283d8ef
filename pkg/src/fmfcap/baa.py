"""Blahut-Arimoto lower bound on the ergodic MIMO IM/DD capacity.

Mass points live on the MZM-constrained hypercube ``[0, P_1] x ... x [0, P_N]``
and stay fixed; only their probabilities move. The channel output is
continuous, so the per-point divergence is a Gauss-Hermite expectation
(see :mod:`fmfcap.kernels`), averaged over a fixed, seeded set of channel
draws to get the ergodic quantity.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.spatial import cKDTree
from scipy.special import ndtr

from . import kernels
from .bounds import allocation_grid
from .channel import ConfigError, LinkConfig, channel_ensemble, mzm_invert, mzm_modulate

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
MAX_POINTS = 1 << 16
DEFAULT_NODES = 16
DEFAULT_CUTOFF = 8.0
BINS_PER_SIGMA = 4
BIN_WINDOW = 6.0
ITER_CHANNELS = 32
EVAL_CHANNELS = 200


@dataclass
class DiscreteDistribution:
    points: np.ndarray  # (K, N) intensities in mW
    weights: np.ndarray  # (K,)
    powers: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("one weight per mass point required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        if self.powers is not None:
            self.powers = np.asarray(self.powers, dtype=float)
            if np.any(self.points < 0) or np.any(self.points > self.powers * (1 + 1e-12)):
                raise ValueError("mass point outside the MZM hypercube")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n_modes(self) -> int:
        return self.points.shape[1]

    def with_weights(self, w) -> "DiscreteDistribution":
        return DiscreteDistribution(self.points, w, self.powers)

    def voltages(self, v_pi=1.0):
        """Drive voltages on ``[0, v_pi]`` that produce the mass points."""
        if self.powers is None:
            raise ValueError("distribution has no carrier powers attached")
        return mzm_invert(self.points, self.powers, v_pi)

    def entropy_bits(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log2(w)).sum())


@dataclass(frozen=True)
class QuadratureScheme:
    """Gauss-Hermite rule for ``E[f(c + sigma g)]``, ``g ~ N(0, I)``.

    ``z`` are the physicists' nodes (use ``sqrt(2) * sigma * z`` offsets) and
    ``w`` the matching weights normalised to sum to one.
    """

    z: np.ndarray
    w: np.ndarray

    @classmethod
    def gauss_hermite(cls, n_per_dim: int = DEFAULT_NODES) -> "QuadratureScheme":
        z, w = hermgauss(n_per_dim)
        return cls(z, w / w.sum())

    @property
    def n_per_dim(self) -> int:
        return self.z.size

    def tensor(self, n_dims: int):
        """Flattened product rule: node index table ``(n^N, N)`` and weights."""
        grid = np.array(list(itertools.product(range(self.n_per_dim), repeat=n_dims)), dtype=np.int64)
        wt = np.prod(self.w[grid], axis=1)
        return grid, wt


@dataclass
class BaaResult:
    distribution: DiscreteDistribution
    mi_trace: np.ndarray  # bits, on the iteration ensemble
    alloc: np.ndarray
    converged: bool
    mi_bits: float = float("nan")  # re-evaluated on the evaluation ensemble
    uniform_mi_bits: float = float("nan")
    n_iter: int = 0
    search: list = field(default_factory=list)  # (alloc, mi_bits) pairs from a power search

    @property
    def shaping_gain_bits(self) -> float:
        return self.mi_bits - self.uniform_mi_bits


def init_uniform_grid(m_per_dim: int, alloc, v_pi: float = 1.0, max_points: int = MAX_POINTS):
    """Equidistant voltages ``{0, v_pi/(M-1), ..., v_pi}^N`` pushed through the MZM."""
    if m_per_dim < 2:
        raise ConfigError("m_per_dim must be >= 2")
    alloc = np.atleast_1d(np.asarray(alloc, dtype=float))
    n = alloc.size
    if m_per_dim**n > max_points:
        raise ConfigError(f"{m_per_dim}^{n} mass points exceed the cap of {max_points}")
    volts = np.linspace(0.0, v_pi, m_per_dim)
    grid = np.stack(np.meshgrid(*([volts] * n), indexing="ij"), axis=-1).reshape(-1, n)
    pts = mzm_modulate(grid, alloc, v_pi)
    k = pts.shape[0]
    return DiscreteDistribution(pts, np.full(k, 1.0 / k), alloc)


# ------------------------------------------------------------------ plumbing


class _Workspace:
    """Channel-dependent data that stays fixed across BAA iterations."""

    def __init__(self, points, h_samples, sigma_w, quad, cutoff=DEFAULT_CUTOFF, backend=None):
        h = np.asarray(h_samples, dtype=float)
        if h.ndim == 2:
            h = h[None]
        self.centers = np.ascontiguousarray(np.einsum("hij,kj->hki", h, points))
        self.sigma = float(sigma_w)
        self.quad = quad
        self.node_idx, self.wnode = quad.tensor(points.shape[1])
        self.backend = backend
        n_h, K, _ = self.centers.shape
        ptr = np.zeros(n_h * K + 1, dtype=np.int64)
        chunks = []
        radius = cutoff * self.sigma
        for hh in range(n_h):
            c = self.centers[hh]
            if K > 1 and radius < np.inf:
                lists = cKDTree(c).query_ball_point(c, r=radius)
            else:
                lists = [list(range(K))] * K
            for k, lst in enumerate(lists):
                arr = np.sort(np.asarray(lst, dtype=np.int64))
                chunks.append(arr)
                ptr[hh * K + k + 1] = arr.size
        self.ptr = np.cumsum(ptr)
        self.idx = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)

    def divergences(self, weights):
        """``(n_h, K)`` divergence terms in nats."""
        return kernels.divergences(
            self.centers, self.ptr, self.idx, weights, self.sigma,
            self.quad.z, self.wnode, self.node_idx, backend=self.backend,
        )

    def mean_divergence(self, weights):
        d = self.divergences(weights)
        # fixed-order reduction over channel draws
        return d.sum(axis=0) / d.shape[0]


class _BinnedWorkspace:
    """Quantised-output version of the channel used to drive the iteration.

    Each draw's output plane is cut into square bins of width
    ``sigma / bins_per_sigma``; a point only reaches the bins within
    ``window`` sigmas of its noiseless image (tail mass is folded into the
    window). The result is an honest discrete memoryless channel, so every
    Blahut-Arimoto step is guaranteed not to decrease its MI.
    """

    def __init__(self, points, h_samples, sigma_w, bins_per_sigma=BINS_PER_SIGMA,
                 window=BIN_WINDOW, backend=None):
        h = np.asarray(h_samples, dtype=float)
        if h.ndim == 2:
            h = h[None]
        c = np.einsum("hij,kj->hki", h, points)  # (n_h, K, N)
        n_h, K, N = c.shape
        delta = sigma_w / bins_per_sigma
        L = int(np.ceil(2 * window * bins_per_sigma)) + 1
        origin = c.min(axis=1) - window * sigma_w  # (n_h, N)
        off = np.floor((c - window * sigma_w - origin[:, None, :]) / delta).astype(np.int64)
        off = np.maximum(off, 0)
        shape = (off.max(axis=1) + L).astype(np.int64)  # (n_h, N)
        edges = origin[:, None, :, None] + (off[..., None] + np.arange(L + 1)) * delta
        cdf = ndtr((edges - c[..., None]) / sigma_w)
        cdf[..., 0] = 0.0
        cdf[..., -1] = 1.0
        U = np.diff(cdf, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ulogu = np.where(U > 0, U * np.log(U), 0.0)
        self.U = np.ascontiguousarray(U)
        self.off = np.ascontiguousarray(off)
        self.shape = np.ascontiguousarray(shape)
        self.neg_ent = ulogu.sum(axis=(2, 3))
        self.backend = backend
        dense = np.prod(shape, axis=1)
        self.cell = None
        if N > 2 or dense.sum() > K * L**N * n_h:
            # sparse: only the cells some row can reach
            self.cell = np.empty((n_h, K, L**N), dtype=np.int64)
            sizes = np.empty(n_h, dtype=np.int64)
            strides = np.ones((n_h, N), dtype=np.int64)
            for d in range(N - 2, -1, -1):
                strides[:, d] = strides[:, d + 1] * shape[:, d + 1]
            win = np.stack(np.meshgrid(*([np.arange(L)] * N), indexing="ij"), axis=-1).reshape(-1, N)
            for i in range(n_h):
                flat = ((off[i][:, None, :] + win[None]) * strides[i]).sum(-1)
                uniq, inv = np.unique(flat, return_inverse=True)
                self.cell[i] = inv.reshape(K, -1)
                sizes[i] = uniq.size
            self.grid_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        else:
            self.grid_ptr = np.concatenate([[0], np.cumsum(dense)]).astype(np.int64)

    def mean_divergence(self, weights):
        if self.cell is not None:
            d = kernels.mapped_divergences(self.U, self.cell, self.grid_ptr, self.neg_ent, weights,
                                           backend=self.backend)
        else:
            d = kernels.binned_divergences(
                self.U, self.off, self.shape, self.grid_ptr, self.neg_ent, weights, backend=self.backend
            )
        return d.sum(axis=0) / d.shape[0]


def _quad(quad):
    return quad if quad is not None else QuadratureScheme.gauss_hermite()


def kl_divergence_term(k: int, dist: DiscreteDistribution, h, sigma_w, quad=None, cutoff=DEFAULT_CUTOFF):
    """``D_k(H)`` in nats for mass point ``k`` under the mixture ``dist``."""
    ws = _Workspace(dist.points, np.asarray(h, dtype=float)[None], sigma_w, _quad(quad), cutoff)
    return float(ws.divergences(dist.weights)[0, k])


def _update(weights, dbar):
    """``a_k <- a_k exp(D_k) / sum_j a_j exp(D_j)``; no flooring."""
    logw = np.full_like(weights, -np.inf)
    pos = weights > 0
    logw[pos] = np.log(weights[pos]) + dbar[pos]
    logw -= logw[pos].max()
    w = np.exp(logw)
    return w / w.sum()


def baa_iterate(dist: DiscreteDistribution, h_samples, sigma_w, quad=None, cutoff=DEFAULT_CUTOFF):
    """One Blahut-Arimoto weight update averaged over ``h_samples``."""
    ws = _Workspace(dist.points, h_samples, sigma_w, _quad(quad), cutoff)
    return dist.with_weights(_update(dist.weights, ws.mean_divergence(dist.weights)))


def ergodic_mi(dist: DiscreteDistribution, h_samples, sigma_w, quad=None, cutoff=DEFAULT_CUTOFF) -> float:
    """``E_H I(Y; S | H)`` in bits for a fixed input distribution."""
    ws = _Workspace(dist.points, h_samples, sigma_w, _quad(quad), cutoff)
    return float(dist.weights @ ws.mean_divergence(dist.weights) / LN2)


def make_workspace(points, h_samples, sigma_w, engine="binned", quad=None, cutoff=DEFAULT_CUTOFF,
                   bins_per_sigma=BINS_PER_SIGMA, backend=None):
    """Precomputed channel data for repeated divergence evaluations.

    ``engine="binned"`` quantises the output (exact DMC, monotone iterations);
    ``engine="quadrature"`` uses the continuous-output Gauss-Hermite rule.
    """
    if engine == "binned":
        return _BinnedWorkspace(points, h_samples, sigma_w, bins_per_sigma, backend=backend)
    if engine == "quadrature":
        return _Workspace(points, h_samples, sigma_w, _quad(quad), cutoff, backend)
    raise ConfigError(f"unknown BAA engine {engine!r}")


def run_baa(dist, h_iter, sigma_w, tol=1e-6, max_iter=5000, engine="binned", **ws_kw):
    """Iterate to convergence on a fixed ensemble.

    Returns ``(distribution, mi_trace, converged)``. The returned weights are
    the ones whose MI is the last trace entry.
    """
    if not tol > 0:
        raise ConfigError("tol must be > 0")
    ws = make_workspace(dist.points, h_iter, sigma_w, engine, **ws_kw)
    w = dist.weights.copy()
    trace = []
    converged = False
    for it in range(max_iter):
        dbar = ws.mean_divergence(w)
        mi = float(w @ dbar / LN2)
        trace.append(mi)
        if it > 0 and mi - trace[-2] < tol:
            converged = True
            break
        if it == max_iter - 1:
            break
        w = _update(w, dbar)
    return dist.with_weights(w), np.asarray(trace), converged


def baa_capacity(
    link: LinkConfig,
    m_per_dim: int,
    alloc=None,
    tol: float = 1e-6,
    max_iter: int = 5000,
    seed: int = 0,
    n_iter_channels: int = ITER_CHANNELS,
    n_eval_channels: int = EVAL_CHANNELS,
    quad: QuadratureScheme | None = None,
    cutoff: float = DEFAULT_CUTOFF,
    h_samples=None,
    engine: str = "binned",
    bins_per_sigma: int = BINS_PER_SIGMA,
) -> BaaResult:
    """BAA from the uniform voltage grid for one power allocation.

    The iteration runs on the first ``n_iter_channels`` draws of the seeded
    ensemble; the reported MI (and the uniform-weight baseline) are
    continuous-output quadrature values on all ``n_eval_channels`` draws.
    """
    alloc = link.equal_split() if alloc is None else np.asarray(alloc, dtype=float)
    quad = _quad(quad)
    if h_samples is None:
        h_samples = channel_ensemble(link, max(n_eval_channels, n_iter_channels), seed)
    h_samples = np.asarray(h_samples, dtype=float)
    dist0 = init_uniform_grid(m_per_dim, alloc, link.v_pi)
    sigma = link.sigma_w
    dist, trace, converged = run_baa(
        dist0, h_samples[:n_iter_channels], sigma, tol, max_iter, engine,
        quad=quad, cutoff=cutoff, bins_per_sigma=bins_per_sigma,
    )
    if not converged:
        log.warning("BAA did not converge in %d iterations (last gain %.3g bits)",
                    max_iter, trace[-1] - trace[-2] if trace.size > 1 else np.nan)
    ws = _Workspace(dist0.points, h_samples[:n_eval_channels], sigma, quad, cutoff)
    mi = float(dist.weights @ ws.mean_divergence(dist.weights) / LN2)
    mi_u = float(dist0.weights @ ws.mean_divergence(dist0.weights) / LN2)
    return BaaResult(dist, trace, alloc, converged, mi, mi_u, len(trace))


def baa_power_search(
    link: LinkConfig,
    m_per_dim: int,
    grid_step_db: float = 0.05,
    tol: float = 1e-6,
    p1_window_dbm: tuple[float, float] | None = None,
    **kw,
) -> BaaResult:
    """Run :func:`baa_capacity` over the allocation grid and keep the best.

    ``p1_window_dbm`` restricts the N = 2 line search to a sub-interval of
    ``P_1`` (a full 0.01..0.99 sweep at 0.05 dB is ~400 BAA runs).
    """
    if p1_window_dbm is not None and link.n_modes == 2:
        lo, hi = p1_window_dbm
        p1 = 10 ** (np.arange(lo, hi + 1e-9, grid_step_db) / 10)
        p1 = p1[p1 < link.p_tot]
        grid = np.stack([p1, link.p_tot - p1], axis=1)
    else:
        grid = allocation_grid(link.p_tot, link.n_modes, grid_step_db)
    if len(grid) == 0:
        raise ConfigError("empty power grid")
    h_samples = kw.pop("h_samples", None)
    if h_samples is None:
        n = max(kw.get("n_eval_channels", EVAL_CHANNELS), kw.get("n_iter_channels", ITER_CHANNELS))
        h_samples = channel_ensemble(link, n, kw.get("seed", 0))
    best = None
    search = []
    for alloc in grid:
        res = baa_capacity(link, m_per_dim, alloc, tol=tol, h_samples=h_samples, **kw)
        search.append((alloc.copy(), res.mi_bits))
        log.info("P = %s dBm -> %.5f bits", np.round(10 * np.log10(alloc), 3), res.mi_bits)
        if best is None or res.mi_bits > best.mi_bits:
            best = res
    best.search = search
    return best


def shaping_gain_db(snr_db, mi_shaped, mi_uniform, window=(15.0, 20.0)) -> float:
    """Mean horizontal SNR gap between the shaped and uniform MI curves.

    For each shaped-curve point with SNR inside ``window``, find the SNR at
    which the uniform curve reaches the same rate (linear interpolation in dB)
    and average the differences.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    mi_shaped = np.asarray(mi_shaped, dtype=float)
    mi_uniform = np.asarray(mi_uniform, dtype=float)
    if np.any(np.diff(mi_uniform) <= 0):
        raise ValueError("uniform MI curve must increase with SNR")
    sel = (snr_db >= window[0] - 1e-9) & (snr_db <= window[1] + 1e-9)
    gaps = []
    for s, r in zip(snr_db[sel], mi_shaped[sel]):
        if r > mi_uniform[-1]:
            raise ValueError("uniform curve does not reach the shaped rate; extend the SNR grid")
        gaps.append(np.interp(r, mi_uniform, snr_db) - s)
    return float(np.mean(gaps))
