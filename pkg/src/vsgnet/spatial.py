"""Spatial attention branch.

Human and object boxes are rasterised into a two-channel binary map whose
convolutional encoding gates the pair's visual features.
"""
from __future__ import annotations

import numpy as np

from .numcore import functional as fn
from .numcore.layers import LayerParams
from .numcore.tensor import ShapeError, Tensor, as_tensor, get_default_dtype, reshape, sigmoid


def _mask(box, size: int) -> np.ndarray:
    x1, y1, x2, y2 = (float(v) * size for v in box)
    centers = np.arange(size) + 0.5
    rows = (centers >= y1) & (centers <= y2)
    cols = (centers >= x1) & (centers <= x2)
    if not rows.any():
        rows[min(max(int((y1 + y2) / 2), 0), size - 1)] = True
    if not cols.any():
        cols[min(max(int((x1 + x2) / 2), 0), size - 1)] = True
    return rows[:, None] & cols[None, :]


def rasterize(human_box, object_box, size: int = 64, dtype=None) -> np.ndarray:
    """Binary ``2 x size x size`` map; a cell is set when its centre lies in the box.

    Boxes too thin to cover any cell centre light the cell under their centre.
    """
    grid = np.stack([_mask(human_box, size), _mask(object_box, size)])
    return grid.astype(dtype or get_default_dtype())


def attention_vector(maps: Tensor, conv1: LayerParams, conv2: LayerParams, proj: LayerParams) -> Tensor:
    """Attention vector(s) of size D from one map or a ``P x 2 x S x S`` stack."""
    maps = as_tensor(maps)
    if maps.shape[-3] != 2:
        raise ShapeError(f"spatial map must have 2 channels, got shape {maps.shape}")
    x = fn.relu(fn.conv2d(maps, conv1))
    x = fn.relu(fn.conv2d(x, conv2))
    return fn.relu(fn.fully_connected(fn.global_average_pool(x), proj))


def refine(f_vis: Tensor, a: Tensor) -> Tensor:
    return fn.elementwise_mul(f_vis, a)


def interaction_proposal(f_ref: Tensor, ip: LayerParams) -> Tensor:
    i = sigmoid(fn.fully_connected(f_ref, ip))
    return reshape(i, i.shape[:-1])


def predict_att(a: Tensor, head: LayerParams) -> Tensor:
    return sigmoid(fn.fully_connected(a, head))


def predict_ref(f_ref: Tensor, head: LayerParams) -> Tensor:
    return sigmoid(fn.fully_connected(f_ref, head))
