"""Differentiable neural-network primitives.

Every op takes and returns :class:`Tensor` objects and registers an exact
vector-Jacobian product. Layouts are channel-first without a batch axis:
images are ``[C, H, W]`` and sequences fed to ``conv1d`` are ``[C, T]``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .rng import RngState
from .tensor import ConfigError, ShapeError, Tensor, as_tensor

ACTIVATIONS = ("relu", "sigmoid", "softmax_lastdim")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y[..., j] = sum_i W[j, i] x[..., i] + b[j]``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {W.shape}")
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    parents = [x, W]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
        out = out + b.data
        parents.append(b)
    n_in, n_out = Wd.shape[1], Wd.shape[0]

    def back(g):
        g2 = g.reshape(-1, n_out)
        gx = g @ Wd
        gW = g2.T @ xd.reshape(-1, n_in)
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return Tensor._make(out, parents, back)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    return Tensor._make(np.where(mask, xd, 0).astype(xd.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so large |x| never overflows exp
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    xd = x.data
    z = np.exp(xd - xd.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (x,), back)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax_lastdim":
        return softmax(x)
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def inverse_sigmoid(x: Tensor, eps: float = 1e-5) -> Tensor:
    from .tensor import clamp, log

    x = clamp(x, eps, 1 - eps)
    return log(x) - log(1.0 - x)


def dropout(x: Tensor, rate: float, training: bool, rng: RngState | np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, kept entries scaled by 1/(1-rate) in training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    gen = rng.generator if isinstance(rng, RngState) else rng
    keep = (gen.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(out, (x, gamma, beta), back)


def conv_out_len(n: int, k: int, s: int, p: int = 0) -> int:
    return (n + 2 * p - k) // s + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x [C_in, H, W]`` with ``w [C_out, C_in, k, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    c_in, H, W = x.shape
    c_out, _, kh, kw = w.shape
    Ho, Wo = conv_out_len(H, kh, stride, padding), conv_out_len(W, kw, stride, padding)
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} stride {stride} gives empty output on {H}x{W}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * kh * kw, Ho * Wo)
    wd = w.data
    out = (wd.reshape(c_out, -1) @ cols).reshape(c_out, Ho, Wo)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]
        parents.append(b)

    def back(g):
        g2 = g.reshape(c_out, Ho * Wo)
        gw = (g2 @ cols.T).reshape(wd.shape)
        gcols = (wd.reshape(c_out, -1).T @ g2).reshape(c_in, kh, kw, Ho, Wo)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, i, j]
        gx = gxp[:, padding : padding + H, padding : padding + W] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return Tensor._make(out, parents, back)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation of ``x [C_in, T]`` with ``w [C_out, C_in, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {w.shape}")
    c_in, T = x.shape
    c_out, _, k = w.shape
    To = conv_out_len(T, k, stride, padding)
    if To <= 0:
        raise ShapeError(f"conv1d: kernel {k} stride {stride} gives empty output on length {T}")
    xp = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, k, axis=1)[:, ::stride][:, :To]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_in * k, To)
    wd = w.data
    out = wd.reshape(c_out, -1) @ cols
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None]
        parents.append(b)

    def back(g):
        gw = (g @ cols.T).reshape(wd.shape)
        gcols = (wd.reshape(c_out, -1).T @ g).reshape(c_in, k, To)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        for i in range(k):
            gxp[:, i : i + stride * To : stride] += gcols[:, i]
        gx = gxp[:, padding : padding + T] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=1)

    return Tensor._make(out, parents, back)


def interp_matrix(src_len: int, dst_len: int, dtype=np.float64) -> np.ndarray:
    """Align-corners linear interpolation as a ``[dst_len, src_len]`` matrix."""
    if src_len < 1 or dst_len < 1:
        raise ShapeError(f"interpolation lengths must be >= 1, got {src_len} -> {dst_len}")
    A = np.zeros((dst_len, src_len), dtype=dtype)
    if src_len == 1 or dst_len == 1:
        A[:, 0] = 1.0
        return A
    pos = np.arange(dst_len) * ((src_len - 1) / (dst_len - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), src_len - 2)
    frac = pos - i0
    rows = np.arange(dst_len)
    A[rows, i0] = 1.0 - frac
    A[rows, i0 + 1] += frac
    return A


def interp_linear_1d(seq: Tensor, target_len: int) -> Tensor:
    """Resample ``seq [T, d]`` to ``[target_len, d]`` along the first axis."""
    seq = as_tensor(seq)
    if seq.ndim != 2:
        raise ShapeError(f"interp_linear_1d expects [T, d], got {seq.shape}")
    T = seq.shape[0]
    if T == target_len:
        return seq
    A = interp_matrix(T, target_len, seq.dtype)
    sd = seq.data
    return Tensor._make(A @ sd, (seq,), lambda g: (A.T @ g,))


def _corner_weights(px, py, H, W):
    """Return flat indices, validity, weights and coordinate derivatives for 4 corners."""
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    corners = []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        dwx = 1.0 if dx else -1.0
        dwy = 1.0 if dy else -1.0
        valid = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        flat = np.where(valid, yi * W + xi, 0)
        corners.append((flat, valid, wx * wy, dwx * wy, wx * dwy))
    return corners


def multiscale_sample(values: Tensor, shapes, points: Tensor) -> Tensor:
    """Bilinear sampling across several flattened feature levels at once.

    ``values`` is ``[G, S, c]`` where the S tokens are the row-major
    concatenation of levels with extents ``shapes = [(H_l, W_l), ...]``.
    ``points`` is ``[G, L, P, 2]`` holding normalized ``(x, y)`` per level.
    Returns ``[G, L, P, c]``. Cell centres sit at ``((j + 0.5)/W, (i + 0.5)/H)``
    and neighbours outside a level contribute zero.
    """
    values, points = as_tensor(values), as_tensor(points)
    G, S, c = values.shape
    _, L, P, _ = points.shape
    if len(shapes) != L:
        raise ShapeError(f"{len(shapes)} level shapes for {L} point sets")
    pd = points.data
    starts = np.concatenate([[0], np.cumsum([h * w for h, w in shapes])[:-1]])
    rows, cols, w, wdx, wdy = [], [], [], [], []
    g_off = (np.arange(G) * S)[:, None]
    out_ids = np.arange(G * L * P).reshape(G, L, P)
    for l, (H, W) in enumerate(shapes):
        px = pd[:, l, :, 0] * W - 0.5
        py = pd[:, l, :, 1] * H - 0.5
        for flat, valid, ww, dx, dy in _corner_weights(px, py, H, W):
            rows.append(out_ids[:, l][valid])
            cols.append((flat + starts[l] + g_off)[valid])
            w.append(ww[valid])
            wdx.append((dx * W)[valid])
            wdy.append((dy * H)[valid])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (G * L * P, G * S)
    dt = values.dtype
    M = sp.csr_matrix((np.concatenate(w).astype(dt), (rows, cols)), shape=shape)
    vd = values.data.reshape(G * S, c)
    out = (M @ vd).reshape(G, L, P, c)

    def back(g):
        g2 = g.reshape(G * L * P, c)
        gv = (M.T @ g2).reshape(G, S, c)
        if not points.requires_grad:
            return gv, None
        Mx = sp.csr_matrix((np.concatenate(wdx).astype(dt), (rows, cols)), shape=shape)
        My = sp.csr_matrix((np.concatenate(wdy).astype(dt), (rows, cols)), shape=shape)
        gx = ((Mx @ vd) * g2).sum(axis=1)
        gy = ((My @ vd) * g2).sum(axis=1)
        gp = np.stack([gx, gy], axis=-1).reshape(G, L, P, 2)
        return gv, gp

    return Tensor._make(out, (values, points), back)


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Sample ``fmap [d, H, W]`` at normalized ``points [P, 2]`` (or a single ``(x, y)``)."""
    fmap, points = as_tensor(fmap), as_tensor(points)
    single = points.ndim == 1
    if single:
        points = points.reshape(1, 2)
    d, H, W = fmap.shape
    vals = fmap.reshape(d, H * W).transpose(1, 0).reshape(1, H * W, d)
    out = multiscale_sample(vals, [(H, W)], points.reshape(1, 1, -1, 2))
    out = out.reshape(-1, d)
    return out.reshape(d) if single else out
