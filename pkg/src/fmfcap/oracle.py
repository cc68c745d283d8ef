"""Brute-force mutual information for small instances.

Deliberately shares nothing with :mod:`fmfcap.baa`: full mixtures (no
neighbour truncation), a denser Gauss-Hermite rule built here, and
``scipy.special.logsumexp`` for the log-domain sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp

MAX_DIMS = 2
MAX_POINTS = 4096


@dataclass(frozen=True)
class MiEstimate:
    value_bits: float
    method: str
    error_bar: float = 0.0  # 95% half-width, Monte Carlo only


def _prep(dist, h):
    pts = np.atleast_2d(np.asarray(dist.points, dtype=float))
    w = np.asarray(dist.weights, dtype=float)
    h = np.atleast_2d(np.asarray(h, dtype=float))
    K, N = pts.shape
    if N > MAX_DIMS or K > MAX_POINTS:
        raise ValueError(f"oracle limited to N <= {MAX_DIMS}, K <= {MAX_POINTS}")
    return pts @ h.T, w


def _log_mix(y, centers, logw, sigma):
    """``log sum_j a_j N(y; c_j, sigma^2 I)`` without the shared normaliser."""
    d2 = ((y[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return logsumexp(logw[None, :] - 0.5 * d2 / sigma**2, axis=1)


def mi_quadrature(dist, h, sigma_w, nodes: int = 32) -> MiEstimate:
    """``I(Y; S | H)`` for one channel matrix by probabilists' Gauss-Hermite."""
    centers, w = _prep(dist, h)
    K, N = centers.shape
    x, wx = hermegauss(nodes)
    wx = wx / wx.sum()
    grids = np.meshgrid(*([x] * N), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1) * sigma_w
    wts = np.prod(np.meshgrid(*([wx] * N), indexing="ij"), axis=0).ravel()
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    total = 0.0
    for k in np.flatnonzero(w > 0):
        y = centers[k] + offs
        own = -0.5 * (offs**2).sum(1) / sigma_w**2
        total += w[k] * np.sum(wts * (own - _log_mix(y, centers, logw, sigma_w)))
    return MiEstimate(float(total / np.log(2)), "quadrature")


def mi_monte_carlo(dist, h_sampler, sigma_w, n_samples: int, rng, chunk: int = 100_000) -> MiEstimate:
    """Sampled ``E_H I(Y; S | H)``.

    ``h_sampler`` is a fixed matrix or ``callable(rng, n) -> (n, N, N)``.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be >= 1e4")
    pts = np.atleast_2d(np.asarray(dist.points, dtype=float))
    w = np.asarray(dist.weights, dtype=float)
    K, N = pts.shape
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    vals = np.empty(n_samples)
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        k = rng.choice(K, size=n, p=w)
        if callable(h_sampler):
            H = h_sampler(rng, n)
        else:
            H = np.broadcast_to(np.asarray(h_sampler, dtype=float), (n, N, N))
        noise = sigma_w * rng.standard_normal((n, N))
        c_all = np.einsum("nij,kj->nki", H, pts)  # (n, K, N)
        y = c_all[np.arange(n), k] + noise
        d2 = ((y[:, None, :] - c_all) ** 2).sum(-1)
        own = -0.5 * (noise**2).sum(1) / sigma_w**2
        vals[done:done + n] = own - logsumexp(logw[None, :] - 0.5 * d2 / sigma_w**2, axis=1)
        done += n
    vals /= np.log(2)
    half = 1.96 * vals.std(ddof=1) / np.sqrt(n_samples)
    return MiEstimate(float(vals.mean()), "monte_carlo", float(half))


def posterior_exact(dist, h, sigma_w, y):
    """Posterior over mass points for received vector(s) ``y``."""
    centers, w = _prep(dist, h)
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    d2 = ((y[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    lp = logw[None, :] - 0.5 * d2 / sigma_w**2
    post = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    return post[0] if single else post


def ergodic_mi_quadrature(dist, h_samples, sigma_w, nodes: int = 32) -> float:
    """Average of :func:`mi_quadrature` over a list of channel matrices."""
    return float(np.mean([mi_quadrature(dist, h, sigma_w, nodes).value_bits for h in h_samples]))
