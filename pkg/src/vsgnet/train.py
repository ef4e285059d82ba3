"""Training: per-class binary cross-entropy on the fused scores, SGD with momentum."""
from __future__ import annotations

import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .datamodel.types import Dataset, GroundTruthTriplet
from .eval import IOU_THRESHOLD, iou
from .head import (
    HeadConfig,
    ModelConfig,
    ModelParams,
    PreparedImage,
    config_dict,
    forward_image,
    init_params,
    prepare_image,
)
from .numcore.layers import LayerParams
from .numcore.serialization import read_tensor, write_tensor
from .numcore.tensor import NumericError, Tensor, clip, concat, log, mean

log_ = logging.getLogger(__name__)

CLAMP_EPS = 1e-7


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 50
    # entries {"start": e0, "end": e1, "lr": x, "groups": [...]} or "exclude": [...];
    # epochs are 0-based, end exclusive
    lr_schedule: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})

    def lr_for(self, epoch: int, group: str) -> float:
        lr = self.lr
        for entry in self.lr_schedule:
            if not entry.get("start", 0) <= epoch < entry.get("end", float("inf")):
                continue
            groups = entry.get("groups")
            if groups is not None and group not in groups:
                continue
            if group in entry.get("exclude", ()):
                continue
            lr = float(entry["lr"])
        return lr


# -- labels and loss -----------------------------------------------------------------


def pair_labels(prep: PreparedImage, gts: Sequence[GroundTruthTriplet], num_actions: int) -> np.ndarray:
    """Multi-hot targets: a pair takes every action of ground truth it overlaps at IoU >= 0.5 on both boxes."""
    rec = prep.record
    y = np.zeros((len(prep.pairs), num_actions))
    for k, (h, o) in enumerate(prep.pairs):
        hb, ob = rec.humans[h].box, rec.objects[o].box
        for g in gts:
            if g.object_box is None:
                continue
            if iou(hb, g.human_box) >= IOU_THRESHOLD and iou(ob, g.object_box) >= IOU_THRESHOLD:
                y[k, g.action_id] = 1.0
    return y


def pair_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy over classes (and over pairs when batched)."""
    y = np.asarray(y, dtype=p.dtype)
    if y.shape != p.shape:
        raise ValueError(f"label shape {y.shape} != prediction shape {p.shape}")
    pc = clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    terms = log(pc) * y + log(1.0 - pc) * (1.0 - y)
    loss = -mean(terms)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite loss")
    return loss


# -- optimiser ---------------------------------------------------------------------------


class SGD:
    """``v <- m v + g + wd theta``; ``theta <- theta - lr v``."""

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}

    def step(self, epoch: int = 0) -> None:
        cfg = self.cfg
        for name, t in self.params.named_tensors():
            lr = cfg.lr_for(epoch, self.params.group_of(name))
            v = self.velocity[name]
            sgd_step(t.data, t.grad, v, lr, cfg.momentum, cfg.weight_decay)


def sgd_step(theta: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float, weight_decay: float) -> None:
    """In-place momentum SGD update of ``theta`` and ``velocity``."""
    if theta.shape != grad.shape or theta.shape != velocity.shape:
        raise ValueError(f"sgd_step shape mismatch: {theta.shape}, {grad.shape}, {velocity.shape}")
    velocity *= momentum
    velocity += grad + weight_decay * theta
    theta -= lr * velocity


# -- loop -------------------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    losses: list[float]
    epochs: int


def _batches(prepared, order, batch_size):
    """Batches of ``batch_size`` candidate pairs, walking images in ``order``."""
    flat = [(i, k) for i in order for k in range(len(prepared[i].pairs))]
    for start in range(0, len(flat), batch_size):
        yield flat[start : start + batch_size]


def train_loop(
    dataset: Dataset,
    model_cfg: ModelConfig,
    head_cfg: HeadConfig,
    cfg: TrainConfig,
    params: Optional[ModelParams] = None,
    on_epoch: Optional[Callable[[int, float, ModelParams], None]] = None,
) -> TrainResult:
    """Train on every candidate pair of ``dataset``.

    Pairs are batched in image order after a seeded shuffle of the images;
    each batch runs the whole of every image it touches (the graph couples
    an image's pairs) and averages the loss over the batch's own pairs.
    """
    if not dataset.records:
        raise ValueError("cannot train on an empty dataset")
    if params is None:
        params = init_params(model_cfg, head_cfg.ablation, seed=cfg.seed)
    dtype = next(iter(params.named_tensors()))[1].dtype
    prepared = [prepare_image(r, model_cfg, head_cfg, dtype) for r in dataset.records]
    gts = dataset.triplets_by_image()
    labels = [pair_labels(p, gts.get(p.record.image_id, ()), dataset.num_actions) for p in prepared]
    if not any(len(p.pairs) for p in prepared):
        raise ValueError("dataset has no candidate pairs")

    rng = np.random.default_rng(cfg.seed)
    opt = SGD(params, cfg)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        total, count = 0.0, 0
        for batch in _batches(prepared, order, cfg.batch_size):
            params.zero_grad()
            rows, targets = [], []
            for img in dict.fromkeys(i for i, _ in batch):
                ks = [k for i, k in batch if i == img]
                out = forward_image(prepared[img], params, head_cfg)
                rows.append(out.p[np.array(ks)])
                targets.append(labels[img][ks])
            loss = pair_loss(concat(rows, axis=0), np.concatenate(targets))
            loss.backward()
            opt.step(epoch)
            total += loss.item() * len(batch)
            count += len(batch)
        epoch_loss = total / count
        if not np.isfinite(epoch_loss):
            raise NumericError(f"loss diverged at epoch {epoch}")
        losses.append(epoch_loss)
        log_.info("epoch %d loss %.6f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, params)
    return TrainResult(params, losses, cfg.epochs)


# -- checkpoints --------------------------------------------------------------------------------


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params: ModelParams, model_cfg: ModelConfig, head_cfg: HeadConfig, train_cfg: Optional[TrainConfig] = None, epoch: int = 0) -> None:
    """One JSON header line, then one VSGT record per tensor in header order."""
    cfgs = config_dict(model_cfg, head_cfg)
    train = asdict(train_cfg) if train_cfg is not None else None
    names = [name for name, _ in params.named_tensors()]
    header = {
        "format": "vsgnet-checkpoint/1",
        "epoch": epoch,
        "seed": None if train_cfg is None else train_cfg.seed,
        "config_hash": config_hash(cfgs, train or {}),
        "config": cfgs,
        "train": train,
        "layers": {name: {"kind": lp.kind, "hyper": lp.hyper} for name, lp in sorted(params.items())},
        "tensors": names,
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for _, t in params.named_tensors():
        write_tensor(buf, t.data)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, dtype=None):
    """Returns ``(params, model_cfg, head_cfg, header)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        arrays = {name: read_tensor(fh, f"{path}:{name}") for name in header["tensors"]}
    model_cfg = ModelConfig.from_dict(header["config"]["model"])
    head_cfg = HeadConfig.from_dict(header["config"]["head"])
    params = ModelParams()
    for layer, meta in header["layers"].items():
        prefix = layer + "."
        tensors = {
            name[len(prefix):]: Tensor(arr, requires_grad=True, dtype=dtype or arr.dtype)
            for name, arr in arrays.items()
            if name.startswith(prefix)
        }
        params[layer] = LayerParams(meta["kind"], tensors, meta["hyper"])
    return params, model_cfg, head_cfg, header
