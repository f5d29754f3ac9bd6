"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The data-movement kernels exist twice: ``_nb_*`` (``@njit``) and ``_np_*``
(vectorised numpy); matrix products always go through numpy/BLAS. The active
backend is picked at import time from the ``TEXTVIN_NUMBA`` environment
variable (``0``/``false``/``off`` selects numpy) and can be switched at
runtime with :func:`set_backend`.

All arrays are float64, image tensors are NCHW.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba as nb

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_njit_kwargs = {"nogil": True, "cache": True, "fastmath": False}


def _env_wants_numba():
    flag = os.environ.get("TEXTVIN_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


_BACKEND = "numba" if (HAS_NUMBA and _env_wants_numba()) else "numpy"


def get_backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _BACKEND = _BACKEND, name
    return prev


def conv_out_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# shared pieces
#
# Stride-1 convolutions are computed "contract then shift": one batched matmul
# projects every input cell onto all (di, dj, o) taps, then the taps are added
# into the output at their offsets. Strided convolutions use im2col + matmul.
# Only the data movement differs between backends; matmuls go through BLAS.
# ---------------------------------------------------------------------------


def _tap_range(k, pad, size_in, size_out):
    """Output span ``[lo, hi)`` reading input ``[lo - pad + k, hi - pad + k)``."""
    lo = max(0, pad - k)
    hi = min(size_out, size_in + pad - k)
    return lo, hi, lo - pad + k


def _tap_matrix(w):
    O, C, kh, kw = w.shape
    return w.transpose(2, 3, 0, 1).reshape(kh * kw * O, C)


def _col_matrix(w):
    O, C, kh, kw = w.shape
    return w.transpose(2, 3, 1, 0).reshape(kh * kw * C, O)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _np_shift_add(Z, y, pad):
    # Z: (B, kh, kw, O, H, W) taps; y: (B, O, Ho, Wo) accumulated in place
    _, kh, kw, _, H, W = Z.shape
    Ho, Wo = y.shape[2:]
    for di in range(kh):
        i0, i1, r0 = _tap_range(di, pad, H, Ho)
        for dj in range(kw):
            j0, j1, c0 = _tap_range(dj, pad, W, Wo)
            if i1 > i0 and j1 > j0:
                y[:, :, i0:i1, j0:j1] += Z[:, di, dj, :, r0:r0 + i1 - i0, c0:c0 + j1 - j0]
    return y


def _np_shift_gather(gy, kh, kw, H, W, pad):
    B, O, Ho, Wo = gy.shape
    gZ = np.zeros((B, kh, kw, O, H, W))
    for di in range(kh):
        i0, i1, r0 = _tap_range(di, pad, H, Ho)
        for dj in range(kw):
            j0, j1, c0 = _tap_range(dj, pad, W, Wo)
            if i1 > i0 and j1 > j0:
                gZ[:, di, dj, :, r0:r0 + i1 - i0, c0:c0 + j1 - j0] = gy[:, :, i0:i1, j0:j1]
    return gZ


def _gather_index(H, W, kh, kw, stride, pad):
    Wp = W + 2 * pad
    Ho = conv_out_size(H, kh, stride, pad)
    Wo = conv_out_size(W, kw, stride, pad)
    i = np.arange(Ho)[:, None, None, None] * stride + np.arange(kh)[None, None, :, None]
    j = np.arange(Wo)[None, :, None, None] * stride + np.arange(kw)[None, None, None, :]
    return (i * Wp + j).reshape(Ho * Wo, kh * kw)


def _np_padded_nhwc(x, pad):
    B, C, H, W = x.shape
    xp = np.zeros((B, H + 2 * pad, W + 2 * pad, C))
    xp[:, pad:pad + H, pad:pad + W] = x.transpose(0, 2, 3, 1)
    return xp.reshape(B, -1, C)


def _np_im2col(x, kh, kw, stride, pad):
    B, C = x.shape[:2]
    idx = _gather_index(x.shape[2], x.shape[3], kh, kw, stride, pad)
    return _np_padded_nhwc(x, pad)[:, idx.reshape(-1)].reshape(-1, kh * kw * C)


def _np_col2im(gcols, shape, kh, kw, stride, pad):
    B, C, H, W = shape
    idx = _gather_index(H, W, kh, kw, stride, pad)
    gxp = np.zeros((B, (H + 2 * pad) * (W + 2 * pad), C))
    gcols = gcols.reshape(B, idx.shape[0], kh * kw, C)
    # positions are distinct within one tap, so fancy-index += is safe per tap
    for k in range(kh * kw):
        gxp[:, idx[:, k]] += gcols[:, :, k]
    gx = gxp.reshape(B, H + 2 * pad, W + 2 * pad, C)[:, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))


def _np_scatter_cells(out, bidx, rows, cols, slot, vecs):
    # out is (B, C, H, W); add vecs[slot[e]] at (bidx[e], :, rows[e], cols[e])
    view = out.transpose(0, 2, 3, 1)
    np.add.at(view, (bidx, rows, cols), vecs[slot])
    return out


def _np_gather_cells(gphi, bidx, rows, cols, slot, n_slots):
    g = np.zeros((n_slots, gphi.shape[1]))
    np.add.at(g, slot, gphi.transpose(0, 2, 3, 1)[bidx, rows, cols])
    return g


def _sparse_taps(rows, cols, kh, kw, stride, pad, Ho, Wo):
    # every (cell, tap) pair that lands on a valid output position
    di = np.arange(kh)[None, :, None]
    dj = np.arange(kw)[None, None, :]
    ni = rows[:, None, None] + pad - di
    nj = cols[:, None, None] + pad - dj
    ok = (ni % stride == 0) & (nj % stride == 0)
    i, j = np.broadcast_arrays(ni // stride, nj // stride)
    ok &= (i >= 0) & (i < Ho) & (j >= 0) & (j < Wo)
    e, a, c = np.nonzero(ok)
    return e, a, c, i[e, a, c], j[e, a, c]


def _np_sparse_conv_forward(P, y, bidx, rows, cols, slot, stride, pad):
    # P: (S, kh, kw, O) projected slot vectors; y: (B, O, Ho, Wo) in place
    _, kh, kw, _ = P.shape
    e, a, c, i, j = _sparse_taps(rows, cols, kh, kw, stride, pad, *y.shape[2:])
    np.add.at(y.transpose(0, 2, 3, 1), (bidx[e], i, j), P[slot[e], a, c])
    return y


def _np_sparse_conv_backward(gy, n_slots, kh, kw, bidx, rows, cols, slot, stride, pad):
    gP = np.zeros((n_slots, kh, kw, gy.shape[1]))
    e, a, c, i, j = _sparse_taps(rows, cols, kh, kw, stride, pad, *gy.shape[2:])
    np.add.at(gP, (slot[e], a, c), gy.transpose(0, 2, 3, 1)[bidx[e], i, j])
    return gP


def _np_vin_sweeps(r, t_w, t_b, k):
    B, m, n = r.shape
    v_hist = np.zeros((k, B, m, n))
    am_hist = np.zeros((k, B, m, n), dtype=np.int64)
    q = None
    for it in range(k):
        x = np.stack([r, v_hist[it]], axis=1)
        q = conv2d_forward(x, t_w, t_b, 1, 1)
        am = q.argmax(axis=1)
        am_hist[it] = am
        if it + 1 < k:
            v_hist[it + 1] = np.take_along_axis(q, am[:, None], axis=1)[:, 0]
    return q, v_hist, am_hist


def _np_vin_sweeps_backward(r, t_w, v_hist, am_hist, gq):
    k = v_hist.shape[0]
    gtw = np.zeros_like(t_w)
    gtb = np.zeros(t_w.shape[0])
    gr = np.zeros_like(r)
    for it in range(k - 1, -1, -1):
        x = np.stack([r, v_hist[it]], axis=1)
        gx, w, b = conv2d_backward(x, t_w, gq, 1, 1)
        gtw += w
        gtb += b
        gr += gx[:, 0]
        if it == 0:
            break
        gq = np.zeros_like(gq)
        np.put_along_axis(gq, am_hist[it - 1][:, None], gx[:, 1:2], axis=1)
    return gr, gtw, gtb


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @nb.njit(**_njit_kwargs)
    def _nb_shift_add(Z, y, pad):
        B, kh, kw, O, H, W = Z.shape
        Ho = y.shape[2]
        Wo = y.shape[3]
        for n in range(B):
            for di in range(kh):
                for dj in range(kw):
                    for o in range(O):
                        for i in range(Ho):
                            r = i - pad + di
                            if r < 0 or r >= H:
                                continue
                            for j in range(Wo):
                                c = j - pad + dj
                                if 0 <= c < W:
                                    y[n, o, i, j] += Z[n, di, dj, o, r, c]
        return y

    @nb.njit(**_njit_kwargs)
    def _nb_shift_gather(gy, kh, kw, H, W, pad):
        B, O, Ho, Wo = gy.shape
        gZ = np.zeros((B, kh, kw, O, H, W))
        for n in range(B):
            for di in range(kh):
                for dj in range(kw):
                    for o in range(O):
                        for i in range(Ho):
                            r = i - pad + di
                            if r < 0 or r >= H:
                                continue
                            for j in range(Wo):
                                c = j - pad + dj
                                if 0 <= c < W:
                                    gZ[n, di, dj, o, r, c] = gy[n, o, i, j]
        return gZ

    @nb.njit(**_njit_kwargs)
    def _nb_im2col(x, kh, kw, stride, pad):
        B, C, H, W = x.shape
        Ho = (H + 2 * pad - kh) // stride + 1
        Wo = (W + 2 * pad - kw) // stride + 1
        cols = np.zeros((B * Ho * Wo, kh * kw * C))
        for n in range(B):
            for i in range(Ho):
                for j in range(Wo):
                    row = (n * Ho + i) * Wo + j
                    for di in range(kh):
                        r = i * stride - pad + di
                        if r < 0 or r >= H:
                            continue
                        for dj in range(kw):
                            cc = j * stride - pad + dj
                            if cc < 0 or cc >= W:
                                continue
                            base = (di * kw + dj) * C
                            for c in range(C):
                                cols[row, base + c] = x[n, c, r, cc]
        return cols

    @nb.njit(**_njit_kwargs)
    def _nb_col2im_impl(gcols, B, C, H, W, kh, kw, stride, pad):
        Ho = (H + 2 * pad - kh) // stride + 1
        Wo = (W + 2 * pad - kw) // stride + 1
        gx = np.zeros((B, C, H, W))
        for n in range(B):
            for i in range(Ho):
                for j in range(Wo):
                    row = (n * Ho + i) * Wo + j
                    for di in range(kh):
                        r = i * stride - pad + di
                        if r < 0 or r >= H:
                            continue
                        for dj in range(kw):
                            cc = j * stride - pad + dj
                            if cc < 0 or cc >= W:
                                continue
                            base = (di * kw + dj) * C
                            for c in range(C):
                                gx[n, c, r, cc] += gcols[row, base + c]
        return gx

    def _nb_col2im(gcols, shape, kh, kw, stride, pad):
        B, C, H, W = shape
        return _nb_col2im_impl(np.ascontiguousarray(gcols), B, C, H, W, kh, kw, stride, pad)

    @nb.njit(**_njit_kwargs)
    def _nb_vin_sweeps(r, t_w, t_b, k):
        B, m, n = r.shape
        A = t_w.shape[0]
        v_hist = np.zeros((k, B, m, n))
        am_hist = np.zeros((k, B, m, n), dtype=np.int64)
        q = np.empty((B, A, m, n))
        for it in range(k):
            v = v_hist[it]
            for b in range(B):
                for i in range(m):
                    for j in range(n):
                        best = 0
                        for a in range(A):
                            acc = t_b[a]
                            for di in range(3):
                                ii = i + di - 1
                                if ii < 0 or ii >= m:
                                    continue
                                for dj in range(3):
                                    jj = j + dj - 1
                                    if jj < 0 or jj >= n:
                                        continue
                                    acc += t_w[a, 0, di, dj] * r[b, ii, jj] \
                                        + t_w[a, 1, di, dj] * v[b, ii, jj]
                            q[b, a, i, j] = acc
                            if acc > q[b, best, i, j]:
                                best = a
                        am_hist[it, b, i, j] = best
                        if it + 1 < k:
                            v_hist[it + 1, b, i, j] = q[b, best, i, j]
        return q, v_hist, am_hist

    @nb.njit(**_njit_kwargs)
    def _nb_vin_sweeps_backward(r, t_w, v_hist, am_hist, gq_in):
        k, B, m, n = v_hist.shape
        A = t_w.shape[0]
        gtw = np.zeros(t_w.shape)
        gtb = np.zeros(A)
        gr = np.zeros((B, m, n))
        gq = gq_in.copy()
        gv = np.zeros((B, m, n))
        for it in range(k - 1, -1, -1):
            v = v_hist[it]
            gv[:] = 0.0
            for b in range(B):
                for i in range(m):
                    for j in range(n):
                        for a in range(A):
                            g = gq[b, a, i, j]
                            if g == 0.0:
                                continue
                            gtb[a] += g
                            for di in range(3):
                                ii = i + di - 1
                                if ii < 0 or ii >= m:
                                    continue
                                for dj in range(3):
                                    jj = j + dj - 1
                                    if jj < 0 or jj >= n:
                                        continue
                                    gtw[a, 0, di, dj] += g * r[b, ii, jj]
                                    gtw[a, 1, di, dj] += g * v[b, ii, jj]
                                    gr[b, ii, jj] += g * t_w[a, 0, di, dj]
                                    gv[b, ii, jj] += g * t_w[a, 1, di, dj]
            if it == 0:
                break
            gq[:] = 0.0
            for b in range(B):
                for i in range(m):
                    for j in range(n):
                        gq[b, am_hist[it - 1, b, i, j], i, j] = gv[b, i, j]
        return gr, gtw, gtb

    @nb.njit(**_njit_kwargs)
    def _nb_sparse_conv_forward(P, y, bidx, rows, cols, slot, stride, pad):
        _, kh, kw, O = P.shape
        Ho = y.shape[2]
        Wo = y.shape[3]
        for e in range(bidx.shape[0]):
            n = bidx[e]
            s = slot[e]
            for di in range(kh):
                ni = rows[e] + pad - di
                if ni < 0 or ni % stride != 0 or ni // stride >= Ho:
                    continue
                i = ni // stride
                for dj in range(kw):
                    nj = cols[e] + pad - dj
                    if nj < 0 or nj % stride != 0 or nj // stride >= Wo:
                        continue
                    j = nj // stride
                    for o in range(O):
                        y[n, o, i, j] += P[s, di, dj, o]
        return y

    @nb.njit(**_njit_kwargs)
    def _nb_sparse_conv_backward(gy, n_slots, kh, kw, bidx, rows, cols, slot, stride, pad):
        O = gy.shape[1]
        Ho = gy.shape[2]
        Wo = gy.shape[3]
        gP = np.zeros((n_slots, kh, kw, O))
        for e in range(bidx.shape[0]):
            n = bidx[e]
            s = slot[e]
            for di in range(kh):
                ni = rows[e] + pad - di
                if ni < 0 or ni % stride != 0 or ni // stride >= Ho:
                    continue
                i = ni // stride
                for dj in range(kw):
                    nj = cols[e] + pad - dj
                    if nj < 0 or nj % stride != 0 or nj // stride >= Wo:
                        continue
                    j = nj // stride
                    for o in range(O):
                        gP[s, di, dj, o] += gy[n, o, i, j]
        return gP

    @nb.njit(**_njit_kwargs)
    def _nb_scatter_cells(out, bidx, rows, cols, slot, vecs):
        C = vecs.shape[1]
        for e in range(bidx.shape[0]):
            s = slot[e]
            for c in range(C):
                out[bidx[e], c, rows[e], cols[e]] += vecs[s, c]
        return out

    @nb.njit(**_njit_kwargs)
    def _nb_gather_cells(gphi, bidx, rows, cols, slot, n_slots):
        C = gphi.shape[1]
        g = np.zeros((n_slots, C))
        for e in range(bidx.shape[0]):
            s = slot[e]
            for c in range(C):
                g[s, c] += gphi[bidx[e], c, rows[e], cols[e]]
        return g


def _ops():
    if _BACKEND == "numba":
        return _nb_shift_add, _nb_shift_gather, _nb_im2col, _nb_col2im
    return _np_shift_add, _np_shift_gather, _np_im2col, _np_col2im


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation ``y[n,o] = b[o] + sum_c w[o,c] * x[n,c]`` with zero padding."""
    shift_add, _, im2col, _ = _ops()
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho, Wo = conv_out_size(H, kh, stride, pad), conv_out_size(W, kw, stride, pad)
    if stride == 1:
        Z = np.matmul(_tap_matrix(w), x.reshape(B, C, H * W))
        y = np.empty((B, O, Ho, Wo))
        y[:] = b[None, :, None, None]
        return shift_add(Z.reshape(B, kh, kw, O, H, W), y, pad)
    y = im2col(x, kh, kw, stride, pad) @ _col_matrix(w) + b
    return np.ascontiguousarray(y.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, stride=1, pad=0):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    _, shift_gather, im2col, col2im = _ops()
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    gy = np.ascontiguousarray(gy)
    gb = gy.sum(axis=(0, 2, 3))
    if stride == 1:
        gZ = shift_gather(gy, kh, kw, H, W, pad).reshape(B, kh * kw * O, H * W)
        gx = np.matmul(_tap_matrix(w).T, gZ).reshape(B, C, H, W)
        gm = np.tensordot(gZ, x.reshape(B, C, H * W), axes=([0, 2], [0, 2]))
        gw = gm.reshape(kh, kw, O, C).transpose(2, 3, 0, 1)
        return gx, np.ascontiguousarray(gw), gb
    cols = im2col(x, kh, kw, stride, pad)
    g = gy.transpose(0, 2, 3, 1).reshape(-1, O)
    gw = (cols.T @ g).reshape(kh, kw, C, O).transpose(3, 2, 0, 1)
    gx = col2im(g @ _col_matrix(w).T, x.shape, kh, kw, stride, pad)
    return gx, np.ascontiguousarray(gw), gb


def sparse_conv_forward(vecs, placement, shape, w, b, stride=1, pad=0):
    """Convolution of a cell-sparse input without materialising it.

    The input is ``(B, C, H, W)`` zero everywhere except that cell ``e`` holds
    ``vecs[slot[e]]`` at ``(bidx[e], rows[e], cols[e])`` (summed when cells
    repeat); ``placement`` is ``(bidx, rows, cols, slot)`` and ``shape`` is
    ``(B, H, W)``. Matches ``conv2d_forward`` on the scattered tensor.
    """
    bidx, rows, cols, slot = placement
    B, H, W = shape
    O, C, kh, kw = w.shape
    Ho, Wo = conv_out_size(H, kh, stride, pad), conv_out_size(W, kw, stride, pad)
    P = (vecs @ _tap_matrix(w).T).reshape(-1, kh, kw, O)
    y = np.empty((B, O, Ho, Wo))
    y[:] = b[None, :, None, None]
    fn = _nb_sparse_conv_forward if _BACKEND == "numba" else _np_sparse_conv_forward
    return fn(np.ascontiguousarray(P), y, bidx, rows, cols, slot, stride, pad)


def sparse_conv_backward(vecs, placement, w, gy, stride=1, pad=0):
    """Return ``(grad_vecs, grad_w, grad_b)`` for :func:`sparse_conv_forward`."""
    bidx, rows, cols, slot = placement
    O, C, kh, kw = w.shape
    gy = np.ascontiguousarray(gy)
    fn = _nb_sparse_conv_backward if _BACKEND == "numba" else _np_sparse_conv_backward
    gP = fn(gy, vecs.shape[0], kh, kw, bidx, rows, cols, slot, stride, pad)
    gP = gP.reshape(vecs.shape[0], kh * kw * O)
    gvecs = gP @ _tap_matrix(w)
    gw = (gP.T @ vecs).reshape(kh, kw, O, C).transpose(2, 3, 0, 1)
    return gvecs, np.ascontiguousarray(gw), gy.sum(axis=(0, 2, 3))


def vin_sweeps(r, t_w, t_b, k):
    """``k`` planner sweeps from reward map ``r`` ``(B, m, n)``.

    Each sweep is a 3x3, pad-1 convolution of ``[r; v]`` into ``A`` action
    channels followed by ``v = max_a q`` (first maximal action on ties).
    Returns ``(q, v_hist, am_hist)``: the final ``(B, A, m, n)`` action map,
    the value map fed into each sweep (``v_hist[0] = 0``) and each sweep's
    argmax.
    """
    if t_w.shape[1:] != (2, 3, 3):
        raise ValueError(f"transition kernel must be (A, 2, 3, 3), got {t_w.shape}")
    r = np.ascontiguousarray(r, dtype=np.float64)
    if _BACKEND == "numba":
        return _nb_vin_sweeps(r, t_w, t_b, int(k))
    return _np_vin_sweeps(r, t_w, t_b, int(k))


def vin_sweeps_backward(r, t_w, v_hist, am_hist, gq):
    """Return ``(grad_r, grad_t_w, grad_t_b)`` for :func:`vin_sweeps` given ``dL/dq``."""
    gq = np.ascontiguousarray(gq, dtype=np.float64)
    if _BACKEND == "numba":
        return _nb_vin_sweeps_backward(r, t_w, v_hist, am_hist, gq)
    return _np_vin_sweeps_backward(r, t_w, v_hist, am_hist, gq)


def scatter_cells(out, bidx, rows, cols, slot, vecs):
    """Accumulate slot vectors into the grid cells of ``out`` in place."""
    if _BACKEND == "numba":
        return _nb_scatter_cells(out, bidx, rows, cols, slot, vecs)
    return _np_scatter_cells(out, bidx, rows, cols, slot, vecs)


def gather_cells(gphi, bidx, rows, cols, slot, n_slots):
    """Adjoint of :func:`scatter_cells`: sum cell gradients back per slot."""
    if _BACKEND == "numba":
        return _nb_gather_cells(gphi, bidx, rows, cols, slot, n_slots)
    return _np_gather_cells(gphi, bidx, rows, cols, slot, n_slots)
