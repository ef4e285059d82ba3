"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor

STEP = 1e-5
# elements whose gradient magnitude is below this are compared absolutely
REL_FLOOR = 1e-6


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, step: float = STEP) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every element of ``tensor``."""
    flat = tensor.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = loss_fn().item()
        flat[k] = orig - step
        down = loss_fn().item()
        flat[k] = orig
        out[k] = (up - down) / (2 * step)
    return out.reshape(tensor.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = STEP,
) -> dict[str, float]:
    """Max relative error between analytic and numeric gradients, per tensor.

    ``tensors`` must require grad and be reachable from ``loss_fn()``. The
    tensors should be 64-bit; single precision cannot resolve ``step``.
    """
    for t in tensors.values():
        t.zero_grad()
    loss_fn().backward()
    analytic = {name: np.array(t.grad, dtype=np.float64) for name, t in tensors.items()}
    report = {}
    for name, t in tensors.items():
        numeric = numerical_gradient(loss_fn, t, step)
        report[name] = float(relative_error(analytic[name], numeric).max(initial=0.0))
    return report
