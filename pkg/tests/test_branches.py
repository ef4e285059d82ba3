"""Visual, spatial and graph branches."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import sigmoid as np_sigmoid
from vsgnet import graph, spatial, visual
from vsgnet.numcore import (
    LayerParams,
    ShapeError,
    Tensor,
    conv2d_params,
    default_dtype,
    fully_connected_params,
    residual_block_params,
)
from vsgnet.numcore import functional as fn
from vsgnet.numcore.gradcheck import check_gradients
from vsgnet.numcore.tensor import tsum


def zero_params(lp: LayerParams) -> LayerParams:
    for t in lp.tensors.values():
        t.data[:] = 0.0
    return lp


def fc(weight, bias):
    weight, bias = np.asarray(weight, float), np.asarray(bias, float)
    return LayerParams(
        "fully_connected",
        {"weight": Tensor(weight, requires_grad=True), "bias": Tensor(bias, requires_grad=True)},
        {"in_dim": weight.shape[1], "out_dim": weight.shape[0]},
    )


# -- visual ---------------------------------------------------------------------------------


class TestVisual:
    def test_entity_constant_map_zero_path(self, f64, rng):
        res = zero_params(residual_block_params(3, rng, dtype=np.float64))
        out = visual.entity_features(Tensor(np.full((3, 16, 16), 0.7)), (0.1, 0.2, 0.6, 0.9), res)
        np.testing.assert_allclose(out.data, 0.7, rtol=1e-15)

    def test_entity_identical_boxes(self, f64, rng):
        res = residual_block_params(3, rng, dtype=np.float64)
        feat = Tensor(rng.normal(size=(3, 16, 16)))
        box = (0.2, 0.1, 0.7, 0.8)
        a = visual.entity_features(feat, box, res).data
        b = visual.entity_features(feat, box, res).data
        assert a.tobytes() == b.tobytes()

    def test_entity_composition(self, f64, rng):
        res = residual_block_params(3, rng, dtype=np.float64)
        for t in res.tensors.values():
            t.data[:] = rng.normal(size=t.shape) * 0.3
        feat = Tensor(rng.normal(size=(3, 20, 20)))
        box = (0.15, 0.05, 0.8, 0.6)
        expected = fn.global_average_pool(fn.residual_block(fn.roi_pool(feat, box), res)).data
        np.testing.assert_array_equal(visual.entity_features(feat, box, res).data, expected)
        batched = visual.entity_from_pooled(visual.pooled_regions(feat, [box, box]), res).data
        np.testing.assert_allclose(batched[1], expected, rtol=1e-13)

    def test_context_constant_and_zero(self, f64, rng):
        res = zero_params(residual_block_params(2, rng, dtype=np.float64))
        np.testing.assert_allclose(visual.context_features(Tensor(np.full((2, 8, 8), 1.5)), res).data, 1.5)
        np.testing.assert_array_equal(visual.context_features(Tensor(np.zeros((2, 8, 8))), res).data, 0.0)

    def test_context_equals_full_box_entity(self, f64, rng):
        res = residual_block_params(3, rng, dtype=np.float64)
        feat = Tensor(rng.normal(size=(3, 10, 10)))
        np.testing.assert_allclose(
            visual.context_features(feat, res).data,
            visual.entity_features(feat, (0, 0, 1, 1), res).data,
            rtol=1e-14,
        )

    def test_fuse_zero(self, f64, rng):
        proj = zero_params(fully_connected_params(9, 4, rng, np.float64))
        z = Tensor(np.zeros(3))
        np.testing.assert_array_equal(visual.fuse_visual(z, z, z, proj).data, 0.0)

    def test_fuse_default_sizes(self, rng):
        proj = fully_connected_params(3072, 512, rng)
        v = [Tensor(rng.uniform(0, 1, 1024)) for _ in range(3)]
        assert visual.fuse_visual(*v, proj).shape == (512,)

    def test_fuse_row_of_ones(self, f64, rng):
        w = rng.normal(size=(2, 6))
        w[0] = 1.0
        f = [rng.normal(size=2) for _ in range(3)]
        out = visual.fuse_visual(*(Tensor(x) for x in f), fc(w, [0.25, 0.0]))
        assert out.data[0] == pytest.approx(max(sum(np.concatenate(f).tolist()) + 0.25, 0.0), rel=1e-13, abs=1e-15)

    def test_fuse_is_order_sensitive(self, f64, rng):
        proj = fully_connected_params(9, 5, rng, np.float64)
        proj["bias"].data[:] = 1.0
        a, b, c = (Tensor(rng.uniform(0, 1, 3)) for _ in range(3))
        assert not np.allclose(visual.fuse_visual(a, b, c, proj).data, visual.fuse_visual(b, a, c, proj).data)

    def test_base_model_zero(self, f64, rng):
        ip = zero_params(fully_connected_params(4, 1, rng, np.float64))
        cls = zero_params(fully_connected_params(4, 3, rng, np.float64))
        i, p = visual.base_model_predict(Tensor(np.zeros(4)), ip, cls)
        assert i.item() == 0.5
        np.testing.assert_array_equal(p.data, 0.5)

    def test_base_model_linear_head(self, f64, rng):
        ip, cls = fully_connected_params(4, 1, rng, np.float64), fully_connected_params(4, 3, rng, np.float64)
        x = rng.normal(size=4)
        i, p = visual.base_model_predict(Tensor(x), ip, cls)
        assert i.item() == pytest.approx(float(np_sigmoid(ip["weight"].data @ x)[0]), rel=1e-14)
        np.testing.assert_allclose(p.data, np_sigmoid(cls["weight"].data @ x), rtol=1e-14)

    @given(st.lists(st.floats(-50, 50), min_size=4, max_size=4))
    def test_base_model_range(self, x):
        with default_dtype(np.float64):
            rng = np.random.default_rng(0)
            i, p = visual.base_model_predict(
                Tensor(x), fully_connected_params(4, 1, rng), fully_connected_params(4, 3, rng)
            )
        assert 0 <= i.item() <= 1 and np.all((p.data >= 0) & (p.data <= 1))


# -- spatial ------------------------------------------------------------------------------------


def _spatial_layers(rng, d=6):
    return (
        conv2d_params(2, 4, 5, rng, stride=2, padding=2, dtype=np.float64),
        conv2d_params(4, 3, 5, rng, stride=2, padding=2, dtype=np.float64),
        fully_connected_params(3, d, rng, np.float64),
    )


class TestRasterize:
    def test_full_box(self):
        m = spatial.rasterize((0, 0, 1, 1), (0.1, 0.1, 0.2, 0.2))
        assert m.shape == (2, 64, 64) and m[0].all()

    def test_quarter_box(self):
        m = spatial.rasterize((0, 0, 0.5, 0.5), (0.6, 0.6, 0.9, 0.9))
        expected = np.zeros((64, 64))
        for r in range(64):
            for c in range(64):
                if (r + 0.5) / 64 <= 0.5 and (c + 0.5) / 64 <= 0.5:
                    expected[r, c] = 1
        np.testing.assert_array_equal(m[0], expected)
        assert m[0, :32, :32].all() and m[0].sum() == 32 * 32

    def test_disjoint_boxes(self):
        m = spatial.rasterize((0.0, 0.0, 0.3, 0.3), (0.5, 0.5, 0.9, 0.8))
        assert not (m[0].astype(bool) & m[1].astype(bool)).any()

    def test_binary_and_never_empty(self):
        m = spatial.rasterize((0.501, 0.501, 0.502, 0.502), (0.1, 0.1, 0.9, 0.9))
        assert set(np.unique(m)) <= {0.0, 1.0}
        assert m[0].sum() == 1

    @given(
        st.integers(0, 20),
        st.integers(0, 20),
        st.integers(1, 20),
        st.integers(1, 20),
        st.integers(-10, 10),
        st.integers(-10, 10),
    )
    def test_translation(self, x, y, w, h, dx, dy):
        # boxes on the 1/64 grid offset by a quarter cell so no centre sits on an edge
        def box(x0, y0):
            return ((x0 + 0.25) / 64, (y0 + 0.25) / 64, (x0 + w + 0.25) / 64, (y0 + h + 0.25) / 64)

        hb, ob = box(x + 12, y + 12), box(x + 15, y + 12)
        m = spatial.rasterize(hb, ob)
        sh = box(x + 12 + dx, y + 12 + dy)
        so = box(x + 15 + dx, y + 12 + dy)
        m2 = spatial.rasterize(sh, so)
        np.testing.assert_array_equal(np.roll(m, (dy, dx), axis=(1, 2)), m2)


class TestAttention:
    def test_zero_map_zero_bias(self, f64, rng):
        c1, c2, proj = _spatial_layers(rng)
        a = spatial.attention_vector(Tensor(np.zeros((2, 64, 64))), c1, c2, proj)
        np.testing.assert_array_equal(a.data, 0.0)

    def test_identical_pairs(self, f64, rng):
        layers = _spatial_layers(rng)
        m = Tensor(spatial.rasterize((0.1, 0.1, 0.4, 0.8), (0.4, 0.3, 0.6, 0.5), dtype=np.float64))
        assert spatial.attention_vector(m, *layers).data.tobytes() == spatial.attention_vector(m, *layers).data.tobytes()

    def test_composition(self, f64, rng):
        c1, c2, proj = _spatial_layers(rng)
        for lp in (c1, c2, proj):
            lp["bias"].data[:] = rng.normal(size=lp["bias"].shape) * 0.1
        m = Tensor(rng.integers(0, 2, (2, 32, 32)).astype(float))
        x = fn.relu(fn.conv2d(fn.relu(fn.conv2d(m, c1)), c2))
        expected = fn.relu(fn.fully_connected(fn.global_average_pool(x), proj)).data
        np.testing.assert_array_equal(spatial.attention_vector(m, c1, c2, proj).data, expected)

    def test_batch_order_invariance(self, f64, rng):
        layers = _spatial_layers(rng)
        maps = rng.integers(0, 2, (4, 2, 32, 32)).astype(float)
        perm = np.array([2, 0, 3, 1])
        a = spatial.attention_vector(Tensor(maps), *layers).data
        b = spatial.attention_vector(Tensor(maps[perm]), *layers).data
        np.testing.assert_allclose(a[perm], b, rtol=1e-13, atol=1e-15)

    def test_conv_stack_shapes(self, rng):
        c1 = conv2d_params(2, 64, 5, rng, stride=2, padding=2)
        c2 = conv2d_params(64, 32, 5, rng, stride=2, padding=2)
        x = fn.conv2d(Tensor(np.zeros((2, 64, 64))), c1)
        assert x.shape == (64, 32, 32)
        assert fn.conv2d(x, c2).shape == (32, 16, 16)


class TestRefineAndHeads:
    def test_refine_identity_and_damping(self, f64, rng):
        f = rng.normal(size=5)
        np.testing.assert_array_equal(spatial.refine(Tensor(f), Tensor(np.ones(5))).data, f)
        np.testing.assert_array_equal(spatial.refine(Tensor(f), Tensor(np.zeros(5))).data, 0.0)

    def test_refine_product(self, f64, rng):
        f, a = rng.normal(size=6), rng.uniform(0, 2, 6)
        out = spatial.refine(Tensor(f), Tensor(a)).data
        np.testing.assert_array_equal(out, [x * y for x, y in zip(f, a)])
        assert np.all(np.abs(out) <= np.abs(f) * a.max())

    def test_refine_shape_mismatch(self):
        with pytest.raises(ShapeError):
            spatial.refine(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_interaction_proposal(self, f64, rng):
        ip = zero_params(fully_connected_params(4, 1, rng, np.float64))
        assert spatial.interaction_proposal(Tensor(np.zeros(4)), ip).item() == 0.5
        ip = fully_connected_params(4, 1, rng, np.float64)
        ip["bias"].data[:] = 0.3
        x = rng.normal(size=4)
        expected = 1 / (1 + np.exp(-(ip["weight"].data[0] @ x + 0.3)))
        assert spatial.interaction_proposal(Tensor(x), ip).item() == pytest.approx(expected, rel=1e-14)

    def test_heads(self, f64, rng):
        head = zero_params(fully_connected_params(4, 6, rng, np.float64))
        np.testing.assert_array_equal(spatial.predict_att(Tensor(np.zeros(4)), head).data, 0.5)
        head = fully_connected_params(4, 6, rng, np.float64)
        x = rng.normal(size=4)
        assert spatial.predict_ref(Tensor(x), head).shape == (6,)
        np.testing.assert_allclose(spatial.predict_ref(Tensor(x), head).data, np_sigmoid(head["weight"].data @ x), rtol=1e-14)


# -- graph ----------------------------------------------------------------------------------------


def _graph_layers(rng, r):
    return fully_connected_params(r, r, rng, np.float64), fully_connected_params(r, r, rng, np.float64)


class TestGraph:
    def test_one_human_no_objects(self, f64):
        g = graph.build_graph(Tensor(np.ones((1, 3))), Tensor(np.zeros((0, 3))), Tensor(np.zeros((1, 0))))
        assert g.num_edges == 0 and graph.edges(g) == []

    def test_complete_bipartite(self, f64):
        g = graph.build_graph(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), Tensor(np.full((2, 3), 0.5)))
        assert g.num_edges == 6
        assert sorted(graph.edges(g)) == [(h, o) for h in range(2) for o in range(3)]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            graph.build_graph(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), Tensor(np.full((3, 2), 0.5)))

    def test_adjacency_range(self):
        with pytest.raises(ValueError):
            graph.build_graph(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), Tensor([[1.5]]))

    def test_zero_adjacency(self, f64, rng):
        fh, fo = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        w_oh, w_ho = _graph_layers(rng, 4)
        g = graph.build_graph(Tensor(fh), Tensor(fo), Tensor(np.zeros((2, 3))))
        h2, o2 = graph.propagate(g, w_oh, w_ho)
        np.testing.assert_array_equal(h2.data, fh)
        np.testing.assert_array_equal(o2.data, fo)

    def test_unit_edge(self, f64, rng):
        fh, fo = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
        w_oh = fc(np.eye(4), np.zeros(4))
        _, w_ho = _graph_layers(rng, 4)
        h2, _ = graph.propagate(graph.build_graph(Tensor(fh), Tensor(fo), Tensor([[1.0]])), w_oh, w_ho)
        np.testing.assert_array_equal(h2.data, fh + fo)

    def test_weighted_messages(self, f64, rng):
        fh, fo = rng.normal(size=(1, 4)), rng.normal(size=(2, 4))
        w_oh, w_ho = _graph_layers(rng, 4)
        for lp in (w_oh, w_ho):
            lp["bias"].data[:] = rng.normal(size=4)
        alpha = np.array([[0.3, 0.7]])
        h2, o2 = graph.propagate(graph.build_graph(Tensor(fh), Tensor(fo), Tensor(alpha)), w_oh, w_ho)
        W, b = w_oh["weight"].data, w_oh["bias"].data
        expected_h = fh[0] + 0.3 * (W @ fo[0] + b) + 0.7 * (W @ fo[1] + b)
        np.testing.assert_allclose(h2.data[0], expected_h, rtol=1e-13)
        V, c = w_ho["weight"].data, w_ho["bias"].data
        for o in range(2):
            np.testing.assert_allclose(o2.data[o], fo[o] + alpha[0, o] * (V @ fh[0] + c), rtol=1e-13)

    def test_message_locality(self, f64, rng):
        fh, fo = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        w_oh, w_ho = _graph_layers(rng, 4)
        alpha = np.array([[0.4, 0.0], [0.2, 0.9]])
        h_a, _ = graph.propagate(graph.build_graph(Tensor(fh), Tensor(fo), Tensor(alpha)), w_oh, w_ho)
        fo2 = fo.copy()
        fo2[1] += 5.0
        h_b, _ = graph.propagate(graph.build_graph(Tensor(fh), Tensor(fo2), Tensor(alpha)), w_oh, w_ho)
        np.testing.assert_array_equal(h_a.data[0], h_b.data[0])
        assert not np.allclose(h_a.data[1], h_b.data[1])

    def test_zero_adjacency_reduces_to_raw_pairing(self, f64, rng):
        fh, fo = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        w_oh, w_ho = _graph_layers(rng, 4)
        head = fully_connected_params(8, 3, rng, np.float64)
        h2, o2 = graph.propagate(graph.build_graph(Tensor(fh), Tensor(fo), Tensor(np.zeros((2, 2)))), w_oh, w_ho)
        np.testing.assert_array_equal(
            graph.predict_graph(h2, o2, head).data, graph.predict_graph(Tensor(fh), Tensor(fo), head).data
        )

    def test_predict_graph(self, f64, rng):
        head = zero_params(fully_connected_params(8, 3, rng, np.float64))
        np.testing.assert_array_equal(graph.predict_graph(Tensor(np.zeros(4)), Tensor(np.zeros(4)), head).data, 0.5)
        head = fully_connected_params(8, 3, rng, np.float64)
        a, b = rng.normal(size=4), rng.normal(size=4)
        out = graph.predict_graph(Tensor(a), Tensor(b), head).data
        assert np.all((out > 0) & (out < 1))
        np.testing.assert_allclose(out, np_sigmoid(head["weight"].data @ np.concatenate([a, b])), rtol=1e-14)

    def test_gradient_through_alpha(self, f64, rng):
        fh = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        fo = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        alpha = Tensor(rng.uniform(0.1, 0.9, (2, 2)), requires_grad=True)
        w_oh, w_ho = _graph_layers(rng, 3)
        proj = rng.normal(size=(2, 3))

        def loss():
            h2, o2 = graph.propagate(graph.build_graph(fh, fo, alpha), w_oh, w_ho)
            return tsum(h2 * proj) + tsum(o2 * proj[::-1])

        errs = check_gradients(loss, {"alpha": alpha, "fh": fh, "fo": fo, "w_oh": w_oh["weight"]})
        assert errs["alpha"] < 1e-6 and max(errs.values()) < 1e-5
        assert np.any(alpha.grad != 0)
