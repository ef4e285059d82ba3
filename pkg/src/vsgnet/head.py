"""Pair pipeline: enumeration, branch orchestration, fusion and rescoring."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator, Optional

import numpy as np

from . import graph, spatial, visual
from .datamodel.types import CompatibilityTable, Dataset, ImageRecord
from .numcore.layers import (
    LayerParams,
    conv2d_params,
    fully_connected_params,
    residual_block_params,
)
from .numcore.tensor import Tensor, get_default_dtype, mul, no_grad, reshape

ABLATIONS = ("visual", "visual+graph", "visual+spatial", "full")

# parameter groups, used by LR schedules
GROUPS = {
    "visual": ("res_h", "res_o", "res_c", "vis_proj", "base_ip", "base_cls"),
    "spatial": ("spat_conv1", "spat_conv2", "spat_proj", "att_cls", "ref_cls", "ip"),
    "graph": ("graph_oh", "graph_ho", "graph_cls"),
}


@dataclass
class ModelConfig:
    num_actions: int
    channels: int = 1024  # R; equals the backbone channel count
    proj_dim: int = 512  # D
    roi_size: int = 10
    res_kernel: int = 3
    map_size: int = 64
    spatial_channels: tuple[int, int] = (64, 32)
    spatial_kernel: int = 5
    spatial_stride: int = 2

    def __post_init__(self):
        self.spatial_channels = tuple(self.spatial_channels)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


@dataclass
class HeadConfig:
    ablation: str = "full"
    human_threshold: float = 0.6
    object_threshold: float = 0.3
    lis_params: tuple[float, float, float] = (8.3, 12.0, 10.0)
    use_lis: bool = True
    use_compatibility: bool = True

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        for t in (self.human_threshold, self.object_threshold):
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold {t} outside [0, 1]")
        self.lis_params = tuple(float(v) for v in self.lis_params)

    @property
    def uses_spatial(self) -> bool:
        return self.ablation in ("visual+spatial", "full")

    @property
    def uses_graph(self) -> bool:
        return self.ablation in ("visual+graph", "full")

    @classmethod
    def from_dict(cls, raw: dict) -> "HeadConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})


class ModelParams(dict):
    """Layer name -> :class:`LayerParams` for one ablation configuration."""

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for layer in sorted(self):
            for name in sorted(self[layer].tensors):
                yield f"{layer}.{name}", self[layer].tensors[name]

    def group_of(self, tensor_name: str) -> str:
        layer = tensor_name.split(".", 1)[0]
        for group, layers in GROUPS.items():
            if layer in layers:
                return group
        raise KeyError(tensor_name)

    def zero_grad(self) -> None:
        for _, t in self.named_tensors():
            t.zero_grad()


def layer_names(ablation: str) -> list[str]:
    names = ["res_h", "res_o", "res_c", "vis_proj"]
    if ablation in ("visual", "visual+graph"):
        names += ["base_ip", "base_cls"]
    if ablation in ("visual+spatial", "full"):
        names += list(GROUPS["spatial"])
    if ablation in ("visual+graph", "full"):
        names += list(GROUPS["graph"])
    return names


def init_params(cfg: ModelConfig, ablation: str = "full", seed: int = 0, dtype=None) -> ModelParams:
    """Seeded initial weights for the layers ``ablation`` uses."""
    dtype = dtype or get_default_dtype()
    rng = np.random.default_rng(seed)
    r, d, a = cfg.channels, cfg.proj_dim, cfg.num_actions
    c1, c2 = cfg.spatial_channels
    k, s = cfg.spatial_kernel, cfg.spatial_stride
    makers = {
        "res_h": lambda: residual_block_params(r, rng, cfg.res_kernel, dtype),
        "res_o": lambda: residual_block_params(r, rng, cfg.res_kernel, dtype),
        "res_c": lambda: residual_block_params(r, rng, cfg.res_kernel, dtype),
        "vis_proj": lambda: fully_connected_params(3 * r, d, rng, dtype),
        "base_ip": lambda: fully_connected_params(d, 1, rng, dtype),
        "base_cls": lambda: fully_connected_params(d, a, rng, dtype),
        "spat_conv1": lambda: conv2d_params(2, c1, k, rng, stride=s, padding=k // 2, dtype=dtype),
        "spat_conv2": lambda: conv2d_params(c1, c2, k, rng, stride=s, padding=k // 2, dtype=dtype),
        "spat_proj": lambda: fully_connected_params(c2, d, rng, dtype),
        "att_cls": lambda: fully_connected_params(d, a, rng, dtype),
        "ref_cls": lambda: fully_connected_params(d, a, rng, dtype),
        "ip": lambda: fully_connected_params(d, 1, rng, dtype),
        "graph_oh": lambda: fully_connected_params(r, r, rng, dtype),
        "graph_ho": lambda: fully_connected_params(r, r, rng, dtype),
        "graph_cls": lambda: fully_connected_params(2 * r, a, rng, dtype),
    }
    # fixed creation order keeps each layer's draw independent of the ablation
    params = ModelParams()
    wanted = set(layer_names(ablation))
    for name, make in makers.items():
        layer = make()
        if name in wanted:
            params[name] = layer
    if "spat_proj" in params:
        # sparse binary maps average to small values; start the attention as a pass-through
        params["spat_proj"]["bias"].data[:] = 1.0
    return params


# -- pairs ------------------------------------------------------------------


def enumerate_pairs(record: ImageRecord, cfg: HeadConfig) -> list[tuple[int, int]]:
    """Cross product of humans and objects that pass the detector thresholds."""
    hs = [k for k, h in enumerate(record.humans) if h.score >= cfg.human_threshold]
    os_ = [k for k, o in enumerate(record.objects) if o.score >= cfg.object_threshold]
    return [(h, o) for h in hs for o in os_]


@dataclass
class PreparedImage:
    """Weight-independent inputs of one image, computed once and reused."""

    record: ImageRecord
    pairs: list[tuple[int, int]]
    humans: list[int]  # surviving human indices (graph nodes)
    objects: list[int]
    pooled_h: Optional[Tensor]
    pooled_o: Optional[Tensor]
    feature: Tensor
    maps: Optional[Tensor]
    pair_h: np.ndarray = field(repr=False, default=None)  # row into pooled_h per pair
    pair_o: np.ndarray = field(repr=False, default=None)


def prepare_image(record: ImageRecord, model_cfg: ModelConfig, head_cfg: HeadConfig, dtype=None) -> PreparedImage:
    dtype = dtype or get_default_dtype()
    pairs = enumerate_pairs(record, head_cfg)
    humans = sorted({h for h, _ in pairs})
    objects = sorted({o for _, o in pairs})
    feature = Tensor(record.feature, dtype=dtype)
    pooled_h = pooled_o = maps = None
    if pairs:
        # the backbone is frozen, so pooled regions never need gradients
        with no_grad():
            pooled_h = visual.pooled_regions(feature, [record.humans[h].box for h in humans], model_cfg.roi_size)
            pooled_o = visual.pooled_regions(feature, [record.objects[o].box for o in objects], model_cfg.roi_size)
        if head_cfg.uses_spatial:
            maps = Tensor(
                np.stack(
                    [
                        spatial.rasterize(record.humans[h].box, record.objects[o].box, model_cfg.map_size, dtype)
                        for h, o in pairs
                    ]
                ),
                dtype=dtype,
            )
    hpos = {h: k for k, h in enumerate(humans)}
    opos = {o: k for k, o in enumerate(objects)}
    return PreparedImage(
        record,
        pairs,
        humans,
        objects,
        pooled_h,
        pooled_o,
        feature,
        maps,
        np.array([hpos[h] for h, _ in pairs], dtype=np.intp),
        np.array([opos[o] for _, o in pairs], dtype=np.intp),
    )


@dataclass
class ImageForward:
    """Batched outputs for every candidate pair of one image (rows = pairs)."""

    prepared: PreparedImage
    tensors: dict[str, Tensor]

    @property
    def p(self) -> Tensor:
        return self.tensors["p"]

    def pair_state(self, k: int) -> "PairState":
        t = self.tensors
        h, o = self.prepared.pairs[k]
        hr, orow = self.prepared.pair_h[k], self.prepared.pair_o[k]

        def row(name, idx=k):
            return None if name not in t else np.array(t[name].data[idx])

        return PairState(
            human=h,
            object=o,
            f_h=row("f_h", hr),
            f_o=row("f_o", orow),
            f_c=np.array(t["f_c"].data),
            f_vis=row("f_vis"),
            spatial_map=None if self.prepared.maps is None else np.array(self.prepared.maps.data[k]),
            a=row("a"),
            f_ref=row("f_ref"),
            i=float(t["i"].data[k]),
            f_h_graph=row("f_h_graph", hr),
            f_o_graph=row("f_o_graph", orow),
            p_att=row("p_att"),
            p_ref=row("p_ref"),
            p_graph=row("p_graph"),
            p_base=row("p_base"),
            p=np.array(t["p"].data[k]),
        )


@dataclass
class PairState:
    human: int
    object: int
    f_h: np.ndarray
    f_o: np.ndarray
    f_c: np.ndarray
    f_vis: np.ndarray
    i: float
    p: np.ndarray
    spatial_map: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None
    f_ref: Optional[np.ndarray] = None
    f_h_graph: Optional[np.ndarray] = None
    f_o_graph: Optional[np.ndarray] = None
    p_att: Optional[np.ndarray] = None
    p_ref: Optional[np.ndarray] = None
    p_graph: Optional[np.ndarray] = None
    p_base: Optional[np.ndarray] = None


def forward_image(prep: PreparedImage, params: ModelParams, cfg: HeadConfig) -> Optional[ImageForward]:
    """Run the configured branches on every candidate pair; None if there are none.

    Fusion per configuration (``i`` is the interaction proposal score)::

        visual          p = p_base * i_base
        visual+graph    p = p_base * p_graph * i_base
        visual+spatial  p = p_att * p_ref * i
        full            p = p_att * p_ref * p_graph * i
    """
    if not prep.pairs:
        return None
    out: dict[str, Tensor] = {}
    f_h = visual.entity_from_pooled(prep.pooled_h, params["res_h"])
    f_o = visual.entity_from_pooled(prep.pooled_o, params["res_o"])
    f_c = visual.context_features(prep.feature, params["res_c"])
    out.update(f_h=f_h, f_o=f_o, f_c=f_c)
    f_vis = visual.fuse_visual(f_h[prep.pair_h], f_o[prep.pair_o], f_c, params["vis_proj"])
    out["f_vis"] = f_vis

    if cfg.uses_spatial:
        a = spatial.attention_vector(prep.maps, params["spat_conv1"], params["spat_conv2"], params["spat_proj"])
        f_ref = spatial.refine(f_vis, a)
        i = spatial.interaction_proposal(f_ref, params["ip"])
        p_att = spatial.predict_att(a, params["att_cls"])
        p_ref = spatial.predict_ref(f_ref, params["ref_cls"])
        out.update(a=a, f_ref=f_ref, p_att=p_att, p_ref=p_ref)
        factors = [p_att, p_ref]
    else:
        i, p_base = visual.base_model_predict(f_vis, params["base_ip"], params["base_cls"])
        out["p_base"] = p_base
        factors = [p_base]
    out["i"] = i

    if cfg.uses_graph:
        alpha = reshape(i, (len(prep.humans), len(prep.objects)))
        g = graph.build_graph(f_h, f_o, alpha)
        fh2, fo2 = graph.propagate(g, params["graph_oh"], params["graph_ho"])
        p_graph = graph.predict_graph(fh2[prep.pair_h], fo2[prep.pair_o], params["graph_cls"])
        out.update(f_h_graph=fh2, f_o_graph=fo2, p_graph=p_graph)
        factors.append(p_graph)

    p = reshape(i, (len(prep.pairs), 1))
    for factor in factors:
        p = mul(factor, p)
    out["p"] = p
    return ImageForward(prep, out)


def forward_pair(pair, record: ImageRecord, params: ModelParams, model_cfg: ModelConfig, cfg: HeadConfig) -> "PairState":
    """State of one candidate pair; the whole image is run because the graph couples pairs."""
    prep = prepare_image(record, model_cfg, cfg)
    result = forward_image(prep, params, cfg)
    if result is None or tuple(pair) not in prep.pairs:
        raise ValueError(f"pair {pair} is not a candidate of image {record.image_id}")
    return result.pair_state(prep.pairs.index(tuple(pair)))


# -- rescoring ------------------------------------------------------------------


def lis(score: float, T: float = 8.3, k: float = 12.0, w: float = 10.0) -> float:
    """Low-grade instance suppression: ``T / (1 + exp(k - w * score))``."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"detector score {score} outside [0, 1]")
    return T / (1.0 + math.exp(k - w * score))


def final_score(
    p: np.ndarray,
    human_score: float,
    object_score: float,
    object_class: int,
    compatibility: Optional[CompatibilityTable],
    cfg: HeadConfig,
) -> np.ndarray:
    """Per-action detection scores of one pair, with incompatible actions zeroed."""
    scores = np.asarray(p, dtype=np.float64).copy()
    if cfg.use_lis:
        scores *= lis(human_score, *cfg.lis_params) * lis(object_score, *cfg.lis_params)
    else:
        scores *= human_score * object_score
    if cfg.use_compatibility and compatibility is not None:
        scores[~compatibility.mask(object_class)] = 0.0
    return scores


def infer(dataset: Dataset, params: ModelParams, model_cfg: ModelConfig, cfg: HeadConfig):
    """Scored triplets for every candidate pair and action with a nonzero score."""
    from .eval import ScoredTriplet

    preds = []
    with no_grad():
        for rec in dataset.records:
            prep = prepare_image(rec, model_cfg, cfg, dtype=_params_dtype(params))
            result = forward_image(prep, params, cfg)
            if result is None:
                continue
            p_all = result.p.data
            for k, (h, o) in enumerate(prep.pairs):
                hd, od = rec.humans[h], rec.objects[o]
                scores = final_score(p_all[k], hd.score, od.score, od.class_id, dataset.compatibility, cfg)
                for action in np.flatnonzero(scores > 0):
                    preds.append(ScoredTriplet(rec.image_id, hd.box, od.box, int(action), float(scores[action])))
    return preds


def _params_dtype(params: ModelParams):
    for _, t in params.named_tensors():
        return t.dtype
    return get_default_dtype()


def config_dict(model_cfg: ModelConfig, head_cfg: HeadConfig) -> dict:
    m = asdict(model_cfg)
    m["spatial_channels"] = list(m["spatial_channels"])
    h = asdict(head_cfg)
    h["lis_params"] = list(h["lis_params"])
    return {"model": m, "head": h}
