"""Ergodic capacity upper bound through a QR split into scalar IM/DD channels.

For each channel draw ``H = QR`` the receiver rotates by ``Q^T`` and the
triangular system is bounded by a sum of scalar peak-constrained channels
``y_i = R_ii s_i + w_i`` with ``s_i in [0, P_i]``. Two scalar bounds are
available and the tighter one is used per sub-channel:

* UB1, sphere packing: ``log2(1 + A / (sqrt(2 pi e) sigma))``; tight at high SNR.
* UB2, variance bound: ``1/2 log2(1 + A^2 / (4 sigma^2))``; better at low SNR.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .channel import ConfigError

_SQRT_2PIE = np.sqrt(2.0 * np.pi * np.e)
SINGULAR_TOL = 1e-12


class SingularChannelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class QRFactors:
    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class UpperBoundReport:
    ub1_bits: float
    ub2_bits: float
    min_ub_bits: float
    best_alloc: np.ndarray
    n_channel_samples: int
    n_skipped: int = 0


def _qr_batch(h):
    q, r = np.linalg.qr(h)
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1)).copy()
    d[d == 0] = 1.0
    q = q * d[..., None, :]
    r = r * d[..., :, None]
    return q, r


def qr_decompose(h) -> QRFactors:
    """QR with a nonnegative diagonal of R (unique for full-rank H)."""
    h = np.asarray(h, dtype=float)
    q, r = _qr_batch(h)
    if np.any(np.abs(np.diagonal(r)) < SINGULAR_TOL):
        raise SingularChannelError("rank-deficient channel matrix")
    return QRFactors(q, r)


def ub1(peak, sigma_w):
    peak = np.asarray(peak, dtype=float)
    return np.log2(1.0 + peak / (_SQRT_2PIE * sigma_w))


def ub2(peak, sigma_w):
    peak = np.asarray(peak, dtype=float)
    return 0.5 * np.log2(1.0 + peak**2 / (4.0 * sigma_w**2))


def ub_scalar(kind: str, peak, sigma_w):
    """Upper bound in bits on ``y = s + w``, ``s in [0, peak]``, ``w ~ N(0, sigma^2)``."""
    if not sigma_w > 0:
        raise ConfigError("sigma_w must be > 0")
    kind = kind.upper()
    if kind == "UB1":
        return ub1(peak, sigma_w)
    if kind == "UB2":
        return ub2(peak, sigma_w)
    if kind == "MIN":
        return np.minimum(ub1(peak, sigma_w), ub2(peak, sigma_w))
    raise ValueError(f"unknown bound kind {kind!r}")


def _diag_r(h_samples):
    h = np.asarray(h_samples, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if h.shape[0] == 0:
        raise ConfigError("empty channel ensemble")
    _, r = _qr_batch(h)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    ok = np.all(diag >= SINGULAR_TOL, axis=-1)
    return diag, ok


def _bound_terms(diag, ok, alloc, sigma_w):
    """Ergodic sums of UB1, UB2 and of the per-sub-channel minimum."""
    peak = diag[ok] * alloc
    b1 = ub1(peak, sigma_w)
    b2 = ub2(peak, sigma_w)
    return b1.sum(-1).mean(), b2.sum(-1).mean(), np.minimum(b1, b2).sum(-1).mean()


def ub_mimo(h_samples, alloc, sigma_w, kind: str = "min") -> float:
    """Monte-Carlo estimate of ``E_H sum_i UB(R_ii P_i, sigma)`` for a fixed allocation.

    Singular draws are dropped with a warning.
    """
    diag, ok = _diag_r(h_samples)
    if not ok.any():
        raise SingularChannelError("every channel sample is singular")
    if not ok.all():
        warnings.warn(f"skipped {int((~ok).sum())} singular channel samples")
    alloc = np.asarray(alloc, dtype=float)
    b1, b2, bmin = _bound_terms(diag, ok, alloc, sigma_w)
    return float({"ub1": b1, "ub2": b2, "min": bmin}[kind.lower()])


def allocation_grid(p_tot: float, n_modes: int, grid_step_db: float, simplex_divisions: int = 20):
    """Candidate power allocations, always including the equal split.

    N = 2: ``P_1`` stepped in dB over ``[0.01, 0.99] P_tot`` and ``P_2 = P_tot - P_1``.
    N > 2: a regular simplex lattice with interior points only.
    """
    if not grid_step_db > 0:
        raise ConfigError("grid_step_db must be > 0")
    if n_modes == 1:
        return np.array([[p_tot]])
    if n_modes == 2:
        lo, hi = 10 * np.log10(0.01 * p_tot), 10 * np.log10(0.99 * p_tot)
        p1_db = np.arange(lo, hi + 1e-9, grid_step_db)
        if p1_db.size == 0:
            raise ConfigError("empty power grid")
        p1 = np.append(10 ** (p1_db / 10), 0.5 * p_tot)
        p1 = np.unique(p1)
        return np.stack([p1, p_tot - p1], axis=1)
    d = simplex_divisions
    rows = [c for c in itertools.product(range(1, d), repeat=n_modes - 1) if sum(c) < d]
    fr = np.array([list(c) + [d - sum(c)] for c in rows], dtype=float) / d
    fr = np.vstack([fr, np.full(n_modes, 1.0 / n_modes)])
    return fr * p_tot


def optimize_allocation_grid(
    h_samples, sigma_w, grid_step_db=0.05, p_tot: float | None = None, simplex_divisions: int = 20
) -> UpperBoundReport:
    """Grid search of the allocation maximising the ergodic min(UB1, UB2) sum."""
    h = np.asarray(h_samples, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if p_tot is None:
        raise ConfigError("p_tot (mW) is required")
    grid = allocation_grid(p_tot, h.shape[-1], grid_step_db, simplex_divisions)
    diag, ok = _diag_r(h)
    if not ok.any():
        raise SingularChannelError("every channel sample is singular")
    peak = diag[ok][:, None, :] * grid[None, :, :]
    b1 = ub1(peak, sigma_w)
    b2 = ub2(peak, sigma_w)
    bmin = np.minimum(b1, b2).sum(-1).mean(0)
    best = int(np.argmax(bmin))
    return UpperBoundReport(
        ub1_bits=float(b1.sum(-1).mean(0)[best]),
        ub2_bits=float(b2.sum(-1).mean(0)[best]),
        min_ub_bits=float(bmin[best]),
        best_alloc=grid[best].copy(),
        n_channel_samples=int(ok.sum()),
        n_skipped=int((~ok).sum()),
    )
