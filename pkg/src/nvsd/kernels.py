"""Hot convolution kernels: numba-jitted loops with a pure-numpy fallback.

The causal grouped 1D convolution (forward and backward) is where nearly all
compute goes. The numba path is the default; set NVSD_NO_NUMBA=1 to force the
numpy (BLAS) fallback.

Both paths implement the same left-zero-padded causal convolution: output
row t depends on input rows [t-k+1, t]. In the numba path every output
element is reduced with a trip count that does not depend on the number of
rows, so chunked streaming reproduces batch results bit-for-bit. BLAS gemm
results can vary in the last bit with the row count, so the numpy fallback
only guarantees streaming equivalence up to float rounding.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("NVSD_NO_NUMBA", "") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def _pad_left(x, k):
    if k == 1:
        return x
    pad = np.zeros((k - 1, x.shape[1]), dtype=x.dtype)
    return np.concatenate([pad, x], axis=0)


# ---------------------------------------------------------------------------
# numpy fallback (im2col + BLAS matmul per group)

def _conv_fwd_np(x, w, b, groups):
    T = x.shape[0]
    cout, cpg, k = w.shape
    gout = cout // groups
    xp = _pad_left(x, k)
    y = np.empty((T, cout), dtype=x.dtype)
    for g in range(groups):
        xg = xp[:, g * cpg:(g + 1) * cpg]
        cols = np.concatenate([xg[j:j + T] for j in range(k)], axis=1)
        wg = w[g * gout:(g + 1) * gout].transpose(2, 1, 0).reshape(k * cpg, gout)
        y[:, g * gout:(g + 1) * gout] = cols @ wg
    y += b
    return y


def _conv_bwd_np(x, w, dy, groups):
    T, cin = x.shape
    cout, cpg, k = w.shape
    gout = cout // groups
    xp = _pad_left(x, k)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    db = dy.sum(axis=0)
    for g in range(groups):
        xg = xp[:, g * cpg:(g + 1) * cpg]
        dxg = dxp[:, g * cpg:(g + 1) * cpg]
        wg = w[g * gout:(g + 1) * gout]
        dyg = dy[:, g * gout:(g + 1) * gout]
        for j in range(k):
            dw[g * gout:(g + 1) * gout, :, j] = dyg.T @ xg[j:j + T]
            dxg[j:j + T] += dyg @ wg[:, :, j]
    dx = dxp[k - 1:] if k > 1 else dxp
    return dx, dw, db


# ---------------------------------------------------------------------------
# numba path (contiguous inner loops; per-element reduction independent of T)

if USE_NUMBA:

    @njit(parallel=True, cache=True, fastmath=True)
    def _conv_fwd_nb(xp, wt, b, groups, T):
        # wt: (cout, k, cpg) so the innermost reduction is contiguous
        cout, k, cpg = wt.shape
        gout = cout // groups
        y = np.empty((T, cout), dtype=xp.dtype)
        for t in prange(T):
            for co in range(cout):
                base = (co // gout) * cpg
                acc = b[co]
                for j in range(k):
                    for ci in range(cpg):
                        acc += xp[t + j, base + ci] * wt[co, j, ci]
                y[t, co] = acc
        return y

    @njit(parallel=True, cache=True, fastmath=True)
    def _conv_bwd_dx_nb(wx, dy, groups, T, cin, k):
        # wx: (cpg, k, cout) so dy-row access is contiguous
        cpg, _, cout = wx.shape
        gout = cout // groups
        dx = np.zeros((T, cin), dtype=dy.dtype)
        for t in prange(T):
            for ci in range(cin):
                g = ci // cpg
                cig = ci - g * cpg
                acc = dy.dtype.type(0.0)
                for j in range(k):
                    s = t + (k - 1) - j
                    if s < T:
                        for cog in range(gout):
                            acc += dy[s, g * gout + cog] * wx[cig, j, g * gout + cog]
                dx[t, ci] = acc
        return dx

    @njit(parallel=True, cache=True, fastmath=True)
    def _conv_bwd_dw_nb(xp, dy, groups, cout, cpg, k):
        T = dy.shape[0]
        gout = cout // groups
        dw = np.zeros((cout, cpg, k), dtype=dy.dtype)
        db = np.zeros(cout, dtype=dy.dtype)
        for co in prange(cout):
            base = (co // gout) * cpg
            local = np.zeros((k, cpg), dtype=dy.dtype)
            s = dy.dtype.type(0.0)
            for t in range(T):
                d = dy[t, co]
                s += d
                for j in range(k):
                    for ci in range(cpg):
                        local[j, ci] += d * xp[t + j, base + ci]
            db[co] = s
            for j in range(k):
                for ci in range(cpg):
                    dw[co, ci, j] = local[j, ci]
        return dw, db

    @njit(parallel=True, cache=True, fastmath=True)
    def _matmul_rows_nb(x, w):
        T, K = x.shape
        n = w.shape[0]
        y = np.empty((T, n), dtype=x.dtype)
        for t in prange(T):
            for o in range(n):
                acc = x.dtype.type(0.0)
                for i in range(K):
                    acc += x[t, i] * w[o, i]
                y[t, o] = acc
        return y


def matmul_rows(x, w):
    """x @ w.T with a per-row summation pattern independent of x's row count."""
    if USE_NUMBA:
        return _matmul_rows_nb(np.ascontiguousarray(x), np.ascontiguousarray(w))
    return x @ w.T


def conv1d_causal(x, w, b, groups=1):
    """Causal grouped 1D convolution.

    x: (T, cin), w: (cout, cin//groups, k), b: (cout,). Returns (T, cout);
    row t is a function of x rows [t-k+1, t] with zeros before row 0.
    """
    T = x.shape[0]
    if USE_NUMBA:
        wt = np.ascontiguousarray(w.transpose(0, 2, 1))
        return _conv_fwd_nb(_pad_left(x, w.shape[2]), wt, b, groups, T)
    return _conv_fwd_np(x, w, b, groups)


def conv1d_causal_backward(x, w, dy, groups=1):
    """Gradients of conv1d_causal: returns (dx, dw, db)."""
    if USE_NUMBA:
        T, cin = x.shape
        cout, cpg, k = w.shape
        xp = _pad_left(x, k)
        wx = np.ascontiguousarray(w.transpose(1, 2, 0))
        dy = np.ascontiguousarray(dy)
        dx = _conv_bwd_dx_nb(wx, dy, groups, T, cin, k)
        dw, db = _conv_bwd_dw_nb(xp, dy, groups, cout, cpg, k)
        return dx, dw, db
    return _conv_bwd_np(x, w, dy, groups)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
