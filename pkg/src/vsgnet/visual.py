"""Visual branch: pooled entity and context features and their pairwise fusion."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .numcore import functional as fn
from .numcore.layers import LayerParams
from .numcore.tensor import ShapeError, Tensor, as_tensor, concat, reshape, sigmoid


def pooled_regions(feature: Tensor, boxes: Sequence, roi_size: int = 10) -> Tensor:
    """RoI-pool each box into a ``N x C x roi x roi`` stack."""
    feature = as_tensor(feature)
    pooled = [fn.roi_pool(feature, box, (roi_size, roi_size)) for box in boxes]
    return concat([reshape(p, (1,) + p.shape) for p in pooled], axis=0)


def entity_from_pooled(pooled: Tensor, res: LayerParams) -> Tensor:
    """``GAP(Res(pooled))`` for a stack of pooled regions, ``N x R``."""
    return fn.global_average_pool(fn.residual_block(pooled, res))


def entity_features(feature: Tensor, box, res: LayerParams, roi_size: int = 10) -> Tensor:
    """Feature vector of size R for the entity under ``box``.

    ``res`` is the human- or object-specific residual block.
    """
    feature = as_tensor(feature)
    return fn.global_average_pool(fn.residual_block(fn.roi_pool(feature, box, (roi_size, roi_size)), res))


def context_features(feature: Tensor, res: LayerParams) -> Tensor:
    return fn.global_average_pool(fn.residual_block(as_tensor(feature), res))


def fuse_visual(f_h: Tensor, f_o: Tensor, f_c: Tensor, proj: LayerParams) -> Tensor:
    """``ReLU(W_vis (f_h ++ f_o ++ f_c) + b)``; rows are pairs when batched."""
    f_h, f_o, f_c = as_tensor(f_h), as_tensor(f_o), as_tensor(f_c)
    if f_c.ndim == 1 and f_h.ndim == 2:
        f_c = reshape(f_c, (1, -1))[np.zeros(f_h.shape[0], dtype=np.intp)]
    if not (f_h.shape == f_o.shape == f_c.shape):
        raise ShapeError(f"fuse_visual: shapes {f_h.shape}, {f_o.shape}, {f_c.shape} differ")
    return fn.relu(fn.fully_connected(concat([f_h, f_o, f_c], axis=-1), proj))


def base_model_predict(f_vis: Tensor, ip: LayerParams, cls: LayerParams) -> tuple[Tensor, Tensor]:
    """Interaction score and class probabilities straight from ``f_vis``."""
    i = sigmoid(fn.fully_connected(f_vis, ip))
    return reshape(i, i.shape[:-1]), sigmoid(fn.fully_connected(f_vis, cls))
