"""Finite-difference self-check of every primitive and of the assembled model.

All checks run in 64-bit precision on small seeded inputs; each entry of the
returned report is the maximum relative error over the tensors checked.
"""
from __future__ import annotations

import numpy as np

from . import graph
from .datamodel.fixture import build_fixture
from .head import ABLATIONS, HeadConfig, ModelConfig, forward_image, init_params, prepare_image
from .numcore import functional as fn
from .numcore.gradcheck import check_gradients
from .numcore.layers import conv2d_params, fully_connected_params, residual_block_params
from .numcore.tensor import Tensor, default_dtype, tsum
from .train import pair_loss

TOLERANCE = 1e-4


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _jitter_params(params, rng):
    # zero biases put ReLU inputs exactly on the kink for blank map regions
    for name, t in params.named_tensors():
        if name.endswith("bias"):
            t.data[:] = rng.uniform(-0.5, 0.5, t.shape)


def primitive_checks(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    report = {}
    with default_dtype(np.float64):
        w = rng.normal(size=(2, 3, 7, 7))  # fixed projection makes each loss non-trivial

        x = _rand(rng, (3, 9, 8))
        conv = conv2d_params(3, 2, 3, rng, stride=2, padding=1)
        conv["bias"].data[:] = rng.uniform(-0.5, 0.5, 2)
        out_w = rng.normal(size=(2, 5, 4))
        report["conv2d"] = max(
            check_gradients(
                lambda: tsum(fn.conv2d(x, conv) * out_w),
                {"input": x, "weight": conv["weight"], "bias": conv["bias"]},
            ).values()
        )

        fc = fully_connected_params(5, 4, rng)
        fc["bias"].data[:] = rng.normal(size=4)
        v = _rand(rng, (5,))
        proj = rng.normal(size=4)
        report["fully_connected"] = max(
            check_gradients(
                lambda: tsum(fn.fully_connected(v, fc) * proj),
                {"input": v, "weight": fc["weight"], "bias": fc["bias"]},
            ).values()
        )

        res = residual_block_params(3, rng)
        for t in res.tensors.values():
            if t.ndim == 1:
                t.data[:] = rng.uniform(-0.3, 0.3, t.shape)
        r_in = _rand(rng, (3, 7, 7))
        report["residual_block"] = max(
            check_gradients(
                lambda: tsum(fn.residual_block(r_in, res) * w[0]),
                {"input": r_in, **{k: t for k, t in res.tensors.items()}},
            ).values()
        )

        g_in = _rand(rng, (3, 5, 7))
        gp = rng.normal(size=3)
        report["global_average_pool"] = max(
            check_gradients(lambda: tsum(fn.global_average_pool(g_in) * gp), {"input": g_in}).values()
        )

        feat = Tensor(rng.permutation(3 * 20 * 20).reshape(3, 20, 20) / 100.0, requires_grad=True)
        pw = rng.normal(size=(3, 10, 10))
        report["roi_pool"] = max(
            check_gradients(lambda: tsum(fn.roi_pool(feat, (0.1, 0.05, 0.9, 0.8)) * pw), {"feature": feat}).values()
        )

        a, b = _rand(rng, (6,)), _rand(rng, (6,))
        c = _rand(rng, (4,))
        cp = rng.normal(size=10)
        report["elementwise_ops"] = max(
            check_gradients(
                lambda: tsum(
                    fn.concat([fn.sigmoid(fn.elementwise_mul(a, b)), fn.relu(c)], axis=0) * cp
                ),
                {"a": a, "b": b, "c": c},
            ).values()
        )

        # graph propagation with the adjacency as a free input
        f_h, f_o = _rand(rng, (2, 4)), _rand(rng, (3, 4))
        alpha = Tensor(rng.uniform(0.1, 0.9, (2, 3)), requires_grad=True)
        w_oh, w_ho = fully_connected_params(4, 4, rng), fully_connected_params(4, 4, rng)
        gp2 = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))

        def graph_loss():
            fh2, fo2 = graph.propagate(graph.build_graph(f_h, f_o, alpha), w_oh, w_ho)
            return tsum(fh2 * gp2[0]) + tsum(fo2 * gp2[1])

        report["graph_propagate"] = max(
            check_gradients(
                graph_loss,
                {"f_h": f_h, "f_o": f_o, "alpha": alpha, "w_oh": w_oh["weight"], "w_ho": w_ho["weight"]},
            ).values()
        )
    return report


def model_checks(seed: int = 0) -> dict[str, float]:
    """End-to-end check of ``pair_loss`` for each ablation on a 2-human / 2-object image."""
    rng = np.random.default_rng(seed)
    ds = build_fixture(seed, 1, 2, 2, 3, feature_dims=(3, 10, 10))
    report = {}
    with default_dtype(np.float64):
        for ablation in ABLATIONS:
            mc = ModelConfig(num_actions=3, channels=3, proj_dim=4, spatial_channels=(2, 2), map_size=16)
            hc = HeadConfig(ablation=ablation, human_threshold=0.0, object_threshold=0.0)
            params = init_params(mc, ablation, seed=seed)
            _jitter_params(params, rng)
            prep = prepare_image(ds.records[0], mc, hc)
            y = rng.integers(0, 2, (len(prep.pairs), 3))
            errs = check_gradients(lambda: pair_loss(forward_image(prep, params, hc).p, y), dict(params.named_tensors()))
            report[f"model[{ablation}]"] = max(errs.values())
    return report


def run(seed: int = 0) -> dict[str, float]:
    return {**primitive_checks(seed), **model_checks(seed)}
