"""Hot loops of the Blahut-Arimoto step.

``divergences`` evaluates, for every (channel draw, mass point) row,

    D_k = - sum_n W_n log sum_j a_j exp(-|d_kj|^2 / 2 - sqrt(2) z_n . d_kj)

with ``d_kj = (c_k - c_j) / sigma``, which is the Gauss-Hermite estimate of
``E[log p(y|k) / sum_j a_j p(y|j)]`` for ``y ~ N(c_k, sigma^2 I)``. Only the
neighbours ``j`` listed in a CSR structure enter the sum. The exponent
factorises over dimensions, so per (row, neighbour) we only need ``N * n``
exponentials.

Two interchangeable implementations: a numba kernel and a padded numpy path.
"""

import numpy as np

from ._accel import HAS_NUMBA, njit

# log of the smallest mixture value we keep; a row whose whole neighbourhood
# has underflowed is otherwise log(0)
_LOG_FLOOR = -700.0


@njit(fastmath=False)
def _divergences_numba(centers, ptr, idx, a, inv_sigma, z, wnode, node_idx):
    n_h, K, N = centers.shape
    n = z.shape[0]
    n_nodes = node_idx.shape[0]
    out = np.empty((n_h, K))
    sq2 = np.sqrt(2.0)
    tmax = 0
    for r in range(n_h * K):
        jn = ptr[r + 1] - ptr[r]
        if jn > tmax:
            tmax = jn
    E = np.empty((tmax, N, n))
    T = np.empty(n_nodes)
    for r in range(n_h * K):
        h = r // K
        k = r - h * K
        lo = ptr[r]
        jn = ptr[r + 1] - lo
        for jj in range(jn):
            j = idx[lo + jj]
            for d in range(N):
                dd = (centers[h, k, d] - centers[h, j, d]) * inv_sigma
                base = -0.5 * dd * dd
                for m in range(n):
                    E[jj, d, m] = np.exp(base - sq2 * z[m] * dd)
        for q in range(n_nodes):
            T[q] = 0.0
        if N == 2:
            for jj in range(jn):
                aj = a[idx[lo + jj]]
                if aj == 0.0:
                    continue
                q = 0
                for m1 in range(n):
                    b = aj * E[jj, 0, m1]
                    for m2 in range(n):
                        T[q] += b * E[jj, 1, m2]
                        q += 1
        else:
            for jj in range(jn):
                aj = a[idx[lo + jj]]
                if aj == 0.0:
                    continue
                for q in range(n_nodes):
                    p = aj
                    for d in range(N):
                        p *= E[jj, d, node_idx[q, d]]
                    T[q] += p
        acc = 0.0
        for q in range(n_nodes):
            t = T[q]
            lt = np.log(t) if t > 0.0 else _LOG_FLOOR
            if lt < _LOG_FLOOR:
                lt = _LOG_FLOOR
            acc -= wnode[q] * lt
        out[h, k] = acc
    return out


def _divergences_numpy(centers, ptr, idx, a, inv_sigma, z, wnode, node_idx, chunk=256):
    n_h, K, N = centers.shape
    n = z.shape[0]
    flat_c = centers.reshape(n_h * K, N)
    rows = n_h * K
    counts = np.diff(ptr)
    out = np.empty(rows)
    for start in range(0, rows, chunk):
        stop = min(rows, start + chunk)
        cnt = counts[start:stop]
        jmax = int(cnt.max())
        R = stop - start
        pos = np.arange(jmax)[None, :]
        valid = pos < cnt[:, None]
        gather = np.where(valid, ptr[start:stop, None] + pos, 0)
        j = idx[np.minimum(gather, idx.size - 1)]
        h = (np.arange(start, stop) // K)[:, None]
        cj = flat_c[h * K + j]  # (R, J, N)
        dd = (flat_c[start:stop, None, :] - cj) * inv_sigma
        aj = np.where(valid, a[j], 0.0)
        expo = -0.5 * dd[..., None] ** 2 - np.sqrt(2.0) * dd[..., None] * z  # (R, J, N, n)
        E = np.exp(expo)
        # product over dimensions on the tensor node grid
        prod = aj.reshape(R, jmax, *([1] * N))
        for d in range(N):
            shape = [R, jmax] + [1] * N
            shape[2 + d] = n
            prod = prod * E[:, :, d, :].reshape(shape)
        T = prod.sum(axis=1).reshape(R, -1)
        with np.errstate(divide="ignore"):
            lt = np.maximum(np.log(T), _LOG_FLOOR)
        out[start:stop] = -(lt * wnode).sum(axis=1)
    return out.reshape(n_h, K)


def divergences(centers, ptr, idx, a, sigma, z, wnode, node_idx, backend=None):
    """Per-row divergence terms in nats, shape ``(n_h, K)``.

    ``backend`` is ``"numba"``, ``"numpy"`` or ``None`` (numba when available).
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    if backend is None:
        backend = "numba" if HAS_NUMBA else "numpy"
    args = (centers, ptr, idx, a, 1.0 / sigma, z, wnode, node_idx)
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is disabled")
        return _divergences_numba(*args)
    if backend == "numpy":
        return _divergences_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")


# ------------------------------------------------------------ binned outputs
#
# Quantised-output channel: every (draw, point) row owns a window of ``L``
# bins per dimension starting at global bin ``off[h, k, d]`` of its draw's
# grid; ``U[h, k, d, :]`` are the per-dimension bin probabilities (rows sum
# to one), the row's output law is their outer product.


@njit(fastmath=False)
def _binned_divergences_numba(U, off, shape, grid_ptr, neg_ent, a):
    n_h, K, N, L = U.shape
    q = np.zeros(grid_ptr[-1])
    out = np.empty((n_h, K))
    for h in range(n_h):
        base = grid_ptr[h]
        stride = shape[h, 1] if N == 2 else 1
        for k in range(K):
            ak = a[k]
            if ak == 0.0:
                continue
            if N == 1:
                o = base + off[h, k, 0]
                for l1 in range(L):
                    q[o + l1] += ak * U[h, k, 0, l1]
            else:
                o = base + off[h, k, 0] * stride + off[h, k, 1]
                for l1 in range(L):
                    b = ak * U[h, k, 0, l1]
                    row = o + l1 * stride
                    for l2 in range(L):
                        q[row + l2] += b * U[h, k, 1, l2]
        for c in range(base, grid_ptr[h + 1]):
            q[c] = np.log(q[c]) if q[c] > 0.0 else _LOG_FLOOR
        for k in range(K):
            acc = 0.0
            if N == 1:
                o = base + off[h, k, 0]
                for l1 in range(L):
                    acc += U[h, k, 0, l1] * q[o + l1]
            else:
                o = base + off[h, k, 0] * stride + off[h, k, 1]
                for l1 in range(L):
                    u1 = U[h, k, 0, l1]
                    if u1 == 0.0:
                        continue
                    row = o + l1 * stride
                    inner = 0.0
                    for l2 in range(L):
                        inner += U[h, k, 1, l2] * q[row + l2]
                    acc += u1 * inner
            out[h, k] = neg_ent[h, k] - acc
    return out


def _binned_divergences_numpy(U, off, shape, grid_ptr, neg_ent, a):
    n_h, K, N, L = U.shape
    out = np.empty((n_h, K))
    for h in range(n_h):
        strides = np.ones(N, dtype=np.int64)
        for d in range(N - 2, -1, -1):
            strides[d] = strides[d + 1] * shape[h, d + 1]
        cell = np.zeros((K,) + (1,) * N, dtype=np.int64)
        prob = np.ones((K,) + (1,) * N)
        for d in range(N):
            sh = [K] + [1] * N
            sh[1 + d] = L
            cell = cell + ((off[h, :, d, None] + np.arange(L)) * strides[d]).reshape(sh)
            prob = prob * U[h, :, d, :].reshape(sh)
        cell = np.broadcast_to(cell, (K,) + (L,) * N)
        prob = np.broadcast_to(prob, (K,) + (L,) * N)
        size = int(grid_ptr[h + 1] - grid_ptr[h])
        q = np.bincount(cell.ravel(), weights=(a[:, None] * prob.reshape(K, -1)).ravel(), minlength=size)
        with np.errstate(divide="ignore"):
            logq = np.maximum(np.log(q), _LOG_FLOOR)
        out[h] = neg_ent[h] - (prob.reshape(K, -1) * logq[cell.reshape(K, -1)]).sum(axis=1)
    return out


def binned_divergences(U, off, shape, grid_ptr, neg_ent, a, backend=None):
    """``(n_h, K)`` divergences ``sum_y W(y|k) log W(y|k) / q(y)`` in nats."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    N = U.shape[2]
    if backend is None:
        backend = "numba" if HAS_NUMBA and N <= 2 else "numpy"
    if backend == "numba":
        if not HAS_NUMBA or N > 2:
            raise RuntimeError("numba binned kernel needs numba and N <= 2")
        return _binned_divergences_numba(U, off, shape, grid_ptr, neg_ent, a)
    if backend == "numpy":
        return _binned_divergences_numpy(U, off, shape, grid_ptr, neg_ent, a)
    raise ValueError(f"unknown backend {backend!r}")


# Sparse variant: at high SNR the dense per-draw grid is mostly empty, so
# rows address a compacted cell list through ``cell[h, k, l]`` (flat window
# index ``l`` in C order over the N window axes).


@njit(fastmath=False)
def _window_prob_numba(U, h, prob):
    """C-order outer products of the per-dimension bin laws, last dimension fastest."""
    K, N, L = U.shape[1:]
    for k in range(K):
        size = 1
        prob[k, 0] = 1.0
        for d in range(N):
            for j in range(size - 1, -1, -1):
                pj = prob[k, j]
                for l in range(L):
                    prob[k, j * L + l] = pj * U[h, k, d, l]
            size *= L


@njit(fastmath=False)
def _mapped_scatter_numba(U, cell, grid_ptr, a):
    n_h, K = U.shape[:2]
    F = cell.shape[2]
    q = np.zeros(grid_ptr[-1])
    prob = np.empty((K, F))
    for h in range(n_h):
        _window_prob_numba(U, h, prob)
        base = grid_ptr[h]
        for k in range(K):
            ak = a[k]
            if ak == 0.0:
                continue
            for f in range(F):
                q[base + cell[h, k, f]] += ak * prob[k, f]
    return q


@njit(fastmath=False)
def _mapped_gather_numba(U, cell, grid_ptr, neg_ent, logq):
    n_h, K = U.shape[:2]
    F = cell.shape[2]
    out = np.empty((n_h, K))
    prob = np.empty((K, F))
    for h in range(n_h):
        _window_prob_numba(U, h, prob)
        base = grid_ptr[h]
        for k in range(K):
            acc = 0.0
            for f in range(F):
                acc += prob[k, f] * logq[base + cell[h, k, f]]
            out[h, k] = neg_ent[h, k] - acc
    return out


def _mapped_divergences_numba(U, cell, grid_ptr, neg_ent, a):
    q = _mapped_scatter_numba(U, cell, grid_ptr, a)
    # numpy's vectorised log beats numba's scalar one on millions of cells
    with np.errstate(divide="ignore"):
        logq = np.maximum(np.log(q), _LOG_FLOOR)
    return _mapped_gather_numba(U, cell, grid_ptr, neg_ent, logq)


def _window_probs(U_h):
    """``(K, L**N)`` outer products of the per-dimension bin laws."""
    K, N, L = U_h.shape
    prob = np.ones((K,) + (1,) * N)
    for d in range(N):
        sh = [K] + [1] * N
        sh[1 + d] = L
        prob = prob * U_h[:, d, :].reshape(sh)
    return prob.reshape(K, -1)


def _mapped_divergences_numpy(U, cell, grid_ptr, neg_ent, a):
    n_h, K = U.shape[:2]
    out = np.empty((n_h, K))
    for h in range(n_h):
        prob = _window_probs(U[h])
        size = int(grid_ptr[h + 1] - grid_ptr[h])
        q = np.bincount(cell[h].ravel(), weights=(a[:, None] * prob).ravel(), minlength=size)
        with np.errstate(divide="ignore"):
            logq = np.maximum(np.log(q), _LOG_FLOOR)
        out[h] = neg_ent[h] - (prob * logq[cell[h]]).sum(axis=1)
    return out


def mapped_divergences(U, cell, grid_ptr, neg_ent, a, backend=None):
    """Same quantity as :func:`binned_divergences` on a compacted grid."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if backend is None:
        backend = "numba" if HAS_NUMBA else "numpy"
    if backend == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is disabled")
        return _mapped_divergences_numba(U, cell, grid_ptr, neg_ent, a)
    if backend == "numpy":
        return _mapped_divergences_numpy(U, cell, grid_ptr, neg_ent, a)
    raise ValueError(f"unknown backend {backend!r}")
