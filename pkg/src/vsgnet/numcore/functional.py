"""Neural-network layer primitives on :class:`Tensor`.

Layer functions accept either a single sample (``C x H x W`` or a vector) or
a batch with one extra leading dimension.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layers import LayerParams
from .tensor import (
    ShapeError,
    Tensor,
    _record,
    add,
    as_tensor,
    concat,
    matmul,
    mul,
    relu,
    sigmoid,
)

__all__ = [
    "conv2d",
    "fully_connected",
    "residual_block",
    "global_average_pool",
    "roi_pool",
    "roi_bins",
    "elementwise_mul",
    "concat",
    "relu",
    "sigmoid",
]

_EPS = 1e-9


class DegenerateBoxError(ValueError):
    pass


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, (n, ho, wo), x.shape


def conv2d(x: Tensor, params: LayerParams) -> Tensor:
    """Cross-correlation with bias, ``C_in x H x W -> C_out x H' x W'``."""
    if params.kind != "conv2d":
        raise ShapeError(f"conv2d given {params.kind} params")
    w, b = params["weight"], params["bias"]
    stride, padding = params.hyper.get("stride", 1), params.hyper.get("padding", 0)
    x = as_tensor(x)
    single = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d expects rank 3 or 4 input, got shape {x.shape}")
    xd = x.data[None] if single else x.data
    if xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {xd.shape[1]} channels, weight expects {w.shape[1]}")
    c_out, c_in, k, _ = w.shape
    if xd.shape[2] + 2 * padding < k or xd.shape[3] + 2 * padding < k:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {xd.shape[2:]}")
    cols, (n, ho, wo), padded_shape = _im2col(xd, k, stride, padding)
    w2 = w.data.reshape(c_out, -1)
    out = (cols @ w2.T + b.data).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if single else out)

    def backward(g):
        g2 = (g[None] if single else g).transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(w.shape)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            # C, k, k, N, Ho, Wo so each kernel offset is a contiguous block
            dcols = (w2.T @ g2.T).reshape(c_in, k, k, n, ho, wo)
            pn, pc, ph, pw = padded_shape
            gxp = np.zeros((pc, pn, ph, pw), dtype=xd.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            gx = np.ascontiguousarray(gxp[0] if single else gxp)
        return gx, gw, gb

    return _record(out, (x, w, b), backward, "conv2d")


def fully_connected(x: Tensor, params: LayerParams) -> Tensor:
    """``W x + b``; ``x`` is a vector of size N or a batch ``B x N``."""
    if params.kind != "fully_connected":
        raise ShapeError(f"fully_connected given {params.kind} params")
    w, b = params["weight"], params["bias"]
    x = as_tensor(x)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"fully_connected: input size {x.shape[-1]} != weight columns {w.shape[1]}")
    return add(matmul(x, w.T), b)


def residual_block(x: Tensor, params: LayerParams) -> Tensor:
    """``ReLU(x + ReLU(conv2(ReLU(conv1(x)))))`` with shape-preserving convs."""
    if params.kind != "residual_block":
        raise ShapeError(f"residual_block given {params.kind} params")
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"residual_block expects rank 3 or 4 input, got {x.shape}")
    path = relu(conv2d(x, params.stage("conv1")))
    path = relu(conv2d(path, params.stage("conv2")))
    if path.shape != x.shape:
        raise ShapeError(f"residual path changed shape {x.shape} -> {path.shape}")
    return relu(add(x, path))


def global_average_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: ``C x H x W -> C`` (or ``N x C x H x W -> N x C``)."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_average_pool expects rank 3 or 4 input, got {x.shape}")
    h, w = x.shape[-2:]
    if h * w < 1:
        raise ShapeError("global_average_pool over an empty spatial extent")
    scale = 1.0 / (h * w)
    out = x.data.mean(axis=(-2, -1))

    def backward(g):
        return (np.broadcast_to((g * scale)[..., None, None], x.shape).astype(x.dtype, copy=True),)

    return _record(out, (x,), backward, "gap")


def _box_span(lo: float, hi: float, size: int) -> tuple[int, int]:
    lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
    if hi <= lo:
        raise DegenerateBoxError(f"box side [{lo}, {hi}] has zero extent after clipping")
    start = int(math.floor(lo * size + _EPS))
    end = int(math.ceil(hi * size - _EPS))
    start = min(start, size - 1)
    if end <= start:
        end = start + 1
    return start, min(end, size)


def roi_bins(box, grid_hw: tuple[int, int], out_size=(10, 10)):
    """Integer bin edges ``(rows, cols)`` of a normalised box on a feature grid.

    Each entry is a list of ``(start, end)`` half-open cell ranges; bins follow
    adaptive pooling, ``[floor(i*n/out), ceil((i+1)*n/out))`` within the box.
    """
    x1, y1, x2, y2 = (float(v) for v in box)
    hf, wf = grid_hw
    r0, r1 = _box_span(y1, y2, hf)
    c0, c1 = _box_span(x1, x2, wf)

    def edges(start, n, out):
        return [
            (start + (i * n) // out, start + -((-(i + 1) * n) // out)) for i in range(out)
        ]

    return edges(r0, r1 - r0, out_size[0]), edges(c0, c1 - c0, out_size[1])


def roi_pool(feature: Tensor, box, out_size=(10, 10)) -> Tensor:
    """Max-pool the region under ``box`` into a fixed ``out_size`` grid."""
    feature = as_tensor(feature)
    if feature.ndim != 3:
        raise ShapeError(f"roi_pool expects a C x H x W feature map, got {feature.shape}")
    c, hf, wf = feature.shape
    rows, cols = roi_bins(box, (hf, wf), out_size)
    oh, ow = out_size
    out = np.empty((c, oh, ow), dtype=feature.dtype)
    arg_r = np.empty((c, oh, ow), dtype=np.intp)
    arg_c = np.empty((c, oh, ow), dtype=np.intp)
    data = feature.data
    for i, (ra, rb) in enumerate(rows):
        for j, (ca, cb) in enumerate(cols):
            patch = data[:, ra:rb, ca:cb].reshape(c, -1)
            idx = patch.argmax(axis=1)
            out[:, i, j] = patch[np.arange(c), idx]
            arg_r[:, i, j] = ra + idx // (cb - ca)
            arg_c[:, i, j] = ca + idx % (cb - ca)

    chan = np.broadcast_to(np.arange(c)[:, None, None], out.shape)

    def backward(g):
        full = np.zeros_like(data)
        np.add.at(full, (chan, arg_r, arg_c), g)
        return (full,)

    return _record(out, (feature,), backward, "roi_pool")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    if as_tensor(a).shape != as_tensor(b).shape:
        raise ShapeError(f"elementwise_mul: shapes {as_tensor(a).shape} and {as_tensor(b).shape} differ")
    return mul(a, b)
