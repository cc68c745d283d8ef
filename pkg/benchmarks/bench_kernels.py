"""Numba versus numpy backends for the divergence kernels.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. Each line
reports the best-of-N wall time per backend, the speed-up, and the largest
disagreement between the two results.
"""

import argparse
import time

import numpy as np

from fmfcap import baa, kernels
from fmfcap._accel import HAS_NUMBA
from fmfcap.channel import LinkConfig, channel_ensemble


def _best(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _cases(m, snr_db, n_h):
    link = LinkConfig(snr_db=snr_db)
    d = baa.init_uniform_grid(m, link.equal_split())
    h = channel_ensemble(link, n_h, 0)
    w = np.random.default_rng(0).dirichlet(np.ones(d.size))
    quad = baa.QuadratureScheme.gauss_hermite(16)
    ws = baa._Workspace(d.points, h, link.sigma_w, quad, baa.DEFAULT_CUTOFF)
    qargs = (ws.centers, ws.ptr, ws.idx, w, link.sigma_w, quad.z, ws.wnode, ws.node_idx)
    yield f"quadrature M={m} {snr_db:g} dB", lambda b: kernels.divergences(*qargs, backend=b)
    bw = baa._BinnedWorkspace(d.points, h, link.sigma_w)
    if bw.cell is None:
        bargs = (bw.U, bw.off, bw.shape, bw.grid_ptr, bw.neg_ent, w)
        yield f"binned dense M={m} {snr_db:g} dB", lambda b: kernels.binned_divergences(*bargs, backend=b)
    else:
        margs = (bw.U, bw.cell, bw.grid_ptr, bw.neg_ent, w)
        yield f"binned sparse M={m} {snr_db:g} dB", lambda b: kernels.mapped_divergences(*margs, backend=b)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--channels", type=int, default=8)
    args = p.parse_args(argv)
    if not HAS_NUMBA:
        print("numba unavailable or disabled (FMFCAP_NO_NUMBA); nothing to compare")
        return
    print(f"{'case':32s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for m, snr in ((8, 15.0), (16, 20.0), (16, 30.0)):
        for name, fn in _cases(m, snr, args.channels):
            tn, a = _best(lambda: fn("numba"), args.repeat)
            tp, b = _best(lambda: fn("numpy"), args.repeat)
            print(f"{name:32s} {tn:10.4f} {tp:10.4f} {tp / tn:9.1f} {np.max(np.abs(a - b)):10.2e}")


if __name__ == "__main__":
    main()
