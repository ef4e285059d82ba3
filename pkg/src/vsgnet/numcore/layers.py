"""Layer parameter containers and seeded initialisation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, get_default_dtype

KINDS = ("conv2d", "fully_connected", "residual_block")


@dataclass
class LayerParams:
    """Weights, biases and hyperparameters of one layer.

    ``tensors`` maps short names (``weight``, ``bias``, or ``conv1.weight``
    etc. for residual blocks) to trainable tensors.
    """

    kind: str
    tensors: dict[str, Tensor]
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.validate()

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def validate(self) -> None:
        h = self.hyper
        if self.kind == "fully_connected":
            _expect(self, "weight", (h["out_dim"], h["in_dim"]))
            _expect(self, "bias", (h["out_dim"],))
        elif self.kind == "conv2d":
            k = h["kernel"]
            _expect(self, "weight", (h["out_channels"], h["in_channels"], k, k))
            _expect(self, "bias", (h["out_channels"],))
        else:
            c, k = h["channels"], h["kernel"]
            for stage in ("conv1", "conv2"):
                _expect(self, f"{stage}.weight", (c, c, k, k))
                _expect(self, f"{stage}.bias", (c,))

    def stage(self, name: str) -> "LayerParams":
        """Conv2d view of one stage of a residual block."""
        c, k = self.hyper["channels"], self.hyper["kernel"]
        return LayerParams(
            "conv2d",
            {"weight": self.tensors[f"{name}.weight"], "bias": self.tensors[f"{name}.bias"]},
            {"in_channels": c, "out_channels": c, "kernel": k, "stride": 1, "padding": k // 2},
        )


def _expect(lp: LayerParams, name: str, shape: tuple) -> None:
    if name not in lp.tensors:
        raise ShapeError(f"{lp.kind} layer missing tensor {name!r}")
    got = lp.tensors[name].shape
    if tuple(got) != tuple(shape):
        raise ShapeError(f"{lp.kind} tensor {name!r} has shape {got}, expected {shape}")


def _kaiming(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def fully_connected_params(in_dim: int, out_dim: int, rng: np.random.Generator, dtype=None) -> LayerParams:
    dtype = dtype or get_default_dtype()
    return LayerParams(
        "fully_connected",
        {"weight": _kaiming(rng, (out_dim, in_dim), in_dim, dtype), "bias": _zeros((out_dim,), dtype)},
        {"in_dim": in_dim, "out_dim": out_dim},
    )


def conv2d_params(
    in_channels: int,
    out_channels: int,
    kernel: int,
    rng: np.random.Generator,
    stride: int = 1,
    padding: int = 0,
    dtype=None,
) -> LayerParams:
    dtype = dtype or get_default_dtype()
    fan_in = in_channels * kernel * kernel
    return LayerParams(
        "conv2d",
        {
            "weight": _kaiming(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype),
            "bias": _zeros((out_channels,), dtype),
        },
        {
            "in_channels": in_channels,
            "out_channels": out_channels,
            "kernel": kernel,
            "stride": stride,
            "padding": padding,
        },
    )


def residual_block_params(channels: int, rng: np.random.Generator, kernel: int = 3, dtype=None) -> LayerParams:
    dtype = dtype or get_default_dtype()
    fan_in = channels * kernel * kernel
    tensors = {}
    for stage in ("conv1", "conv2"):
        tensors[f"{stage}.weight"] = _kaiming(rng, (channels, channels, kernel, kernel), fan_in, dtype)
        tensors[f"{stage}.bias"] = _zeros((channels,), dtype)
    return LayerParams("residual_block", tensors, {"channels": channels, "kernel": kernel})
