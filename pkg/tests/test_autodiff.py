import math

import numpy as np
import pytest

from mctsnet.autodiff import Graph, GraphError
from mctsnet.gradcheck import grad_check
from mctsnet.params import (
    GradientError,
    ParamStore,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    sgd_step,
)


def store_with(entries):
    store = ParamStore()
    for name, arr in entries.items():
        store.add(name, np.asarray(arr, dtype=np.float64))
    return store


# --- linear -----------------------------------------------------------------

class TestLinear:
    def test_identity_weights(self):
        store = store_with({"fc.W": np.eye(3), "fc.b": np.zeros(3)})
        g = Graph(store)
        y = g.linear(g.constant([1.0, 2.0, 3.0]), "fc")
        assert np.array_equal(y.value, [1.0, 2.0, 3.0])

    def test_zero_weights_give_bias(self):
        store = store_with({"fc.W": np.zeros((3, 2)), "fc.b": [5.0, 5.0]})
        g = Graph(store)
        y = g.linear(g.constant([9.0, -1.0, 2.0]), "fc")
        assert np.array_equal(y.value, [5.0, 5.0])

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        x = rng.normal(size=(2, 4))
        store = store_with({"fc.W": w, "fc.b": b})
        g = Graph(store)
        y = g.linear(g.constant(x), "fc").value

        expected = np.zeros((2, 3))
        for i in range(2):
            for j in range(3):
                acc = b[j]
                for k in range(4):
                    acc += x[i, k] * w[k, j]
                expected[i, j] = acc
        assert np.max(np.abs(y - expected) / np.abs(expected)) < 1e-12

    def test_shape_mismatch_names_shapes(self):
        store = store_with({"fc.W": np.zeros((4, 3)), "fc.b": np.zeros(3)})
        g = Graph(store)
        with pytest.raises(GraphError, match=r"\(2, 5\).*\(4, 3\)"):
            g.linear(g.constant(np.zeros((2, 5))), "fc")


# --- conv -------------------------------------------------------------------

def conv_oracle(x, k, b):
    """Six nested loops, zero padding 1, stride 1."""
    bsz, c_in, hh, ww = x.shape
    c_out = k.shape[0]
    out = np.zeros((bsz, c_out, hh, ww))
    for n in range(bsz):
        for co in range(c_out):
            for i in range(hh):
                for j in range(ww):
                    acc = b[co]
                    for ci in range(c_in):
                        for di in range(3):
                            for dj in range(3):
                                ii, jj = i + di - 1, j + dj - 1
                                if 0 <= ii < hh and 0 <= jj < ww:
                                    acc += x[n, ci, ii, jj] * k[co, ci, di, dj]
                    out[n, co, i, j] = acc
    return out


class TestConv:
    def test_identity_kernel(self):
        c = 2
        k = np.zeros((c, c, 3, 3))
        for i in range(c):
            k[i, i, 1, 1] = 1.0
        store = store_with({"cv.K": k, "cv.b": np.zeros(c)})
        rng = np.random.default_rng(1)
        x = rng.normal(size=(c, 5, 5))
        g = Graph(store)
        y = g.conv3x3(g.constant(x), "cv")
        assert np.array_equal(y.value, x)

    def test_zero_kernel_gives_bias(self):
        store = store_with({"cv.K": np.zeros((3, 2, 3, 3)), "cv.b": [1.5, -2.0, 0.25]})
        g = Graph(store)
        y = g.conv3x3(g.constant(np.ones((2, 4, 4))), "cv")
        for co, beta in enumerate([1.5, -2.0, 0.25]):
            assert np.all(y.value[co] == beta)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 4, 4))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        store = store_with({"cv.K": k, "cv.b": b})
        g = Graph(store)
        y = g.conv3x3(g.constant(x), "cv").value
        expected = conv_oracle(x, k, b)
        assert np.max(np.abs(y - expected)) < 1e-12 * np.max(np.abs(expected))

    def test_channel_mismatch(self):
        store = store_with({"cv.K": np.zeros((3, 2, 3, 3)), "cv.b": np.zeros(3)})
        g = Graph(store)
        with pytest.raises(GraphError, match="channels"):
            g.conv3x3(g.constant(np.zeros((5, 4, 4))), "cv")


# --- pointwise ----------------------------------------------------------------

class TestPointwise:
    def test_relu(self):
        g = Graph(ParamStore())
        y = g.pointwise(g.constant([-1.0, 0.0, 2.0]), "relu")
        assert np.array_equal(y.value, [0.0, 0.0, 2.0])

    def test_sigmoid_symmetry_point(self):
        g = Graph(ParamStore())
        assert g.pointwise(g.constant(np.zeros(1)), "sigmoid").value[0] == 0.5

    def test_tanh_against_definition(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=2.0, size=100)
        g = Graph(ParamStore())
        y = g.pointwise(g.constant(x), "tanh").value
        ref = (np.exp(x) - np.exp(-x)) / (np.exp(x) + np.exp(-x))
        assert np.max(np.abs(y - ref)) <= 1e-12

    def test_unknown_kind(self):
        g = Graph(ParamStore())
        with pytest.raises(GraphError, match="unknown pointwise"):
            g.pointwise(g.constant([1.0]), "gelu")


# --- softmax cross entropy ------------------------------------------------------

class TestSoftmaxXent:
    def test_uniform_logits(self):
        g = Graph(ParamStore())
        probs, loss = g.softmax_xent(g.constant(np.zeros(4)), 2)
        assert abs(float(loss.value) - math.log(4)) < 1e-12
        assert abs(probs.value.sum() - 1.0) < 1e-9

    def test_saturated_logits(self):
        g = Graph(ParamStore())
        _, loss = g.softmax_xent(g.constant([100.0, 0.0, 0.0, 0.0]), 0)
        assert 0.0 <= float(loss.value) < 1e-10

    def test_label_out_of_range(self):
        g = Graph(ParamStore())
        with pytest.raises(GraphError, match="label"):
            g.softmax_xent(g.constant(np.zeros(4)), 4)

    def test_gradient_is_probs_minus_onehot(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=5)
        store = store_with({"l.W": np.eye(5), "l.b": logits})
        g = Graph(store)
        out = g.linear(g.constant(np.zeros(5)), "l")
        probs, loss = g.softmax_xent(out, 3)
        g.backward(loss)
        expected = probs.value.copy()
        expected[3] -= 1.0
        assert np.max(np.abs(store.grads["l.b"] - expected)) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        store = store_with({"l.W": rng.normal(size=(3, 4)), "l.b": rng.normal(size=4)})
        x = rng.normal(size=3)

        def builder(g):
            _, loss = g.softmax_xent(g.linear(g.constant(x), "l"), 1)
            return loss

        report = grad_check(store, builder, tolerance=1e-7, n_samples=16)
        assert report.passed, str(report)


# --- backward mechanics -----------------------------------------------------------

class TestBackward:
    def test_linear_loss_gives_outer_product(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(3, 2))
        x = rng.normal(size=3)
        store = store_with({"l.W": w, "l.b": np.zeros(2)})
        g = Graph(store)
        loss = g.sum_all(g.linear(g.constant(x), "l"))
        g.backward(loss)
        assert np.array_equal(store.grads["l.W"], np.outer(x, np.ones(2)))
        assert np.array_equal(store.grads["l.b"], np.ones(2))

    def test_gradients_accumulate_across_graphs(self):
        rng = np.random.default_rng(7)
        store = store_with({"l.W": rng.normal(size=(3, 3)), "l.b": np.zeros(3)})
        x1, x2 = rng.normal(size=3), rng.normal(size=3)

        def run(x):
            g = Graph(store)
            g.backward(g.sum_all(g.linear(g.constant(x), "l")))

        run(x1)
        g1 = store.grads["l.W"].copy()
        store.zero_grads()
        run(x2)
        g2 = store.grads["l.W"].copy()
        store.zero_grads()
        run(x1)
        run(x2)
        assert np.allclose(store.grads["l.W"], g1 + g2, rtol=0, atol=1e-15)

    def test_backward_twice_rejected(self):
        g = Graph(ParamStore())
        loss = g.sum_all(g.constant([1.0]))
        g.backward(loss)
        with pytest.raises(GraphError, match="already"):
            g.backward(loss)

    def test_non_scalar_loss_rejected(self):
        g = Graph(ParamStore())
        with pytest.raises(GraphError, match="scalar"):
            g.backward(g.constant([1.0, 2.0]))

    def test_unreachable_params_get_zero_grad(self):
        rng = np.random.default_rng(8)
        store = store_with(
            {"a.W": rng.normal(size=(2, 2)), "a.b": np.zeros(2), "b.W": rng.normal(size=(2, 2)), "b.b": np.zeros(2)}
        )
        g = Graph(store)
        x = g.constant([1.0, 2.0])
        g.linear(x, "b")  # on the tape but not feeding the loss
        loss = g.sum_all(g.linear(x, "a"))
        g.backward(loss)
        assert np.all(store.grads["b.W"] == 0.0)
        assert np.all(store.grads["b.b"] == 0.0)
        assert np.any(store.grads["a.W"] != 0.0)

    def test_append_order_permutation_agrees(self):
        rng = np.random.default_rng(9)
        store = store_with({"l.W": rng.normal(size=(4, 4)), "l.b": rng.normal(size=4)})
        x1, x2 = rng.normal(size=4), rng.normal(size=4)

        def build(g, order):
            if order == 0:
                y1 = g.linear(g.constant(x1), "l")
                y2 = g.linear(g.constant(x2), "l")
            else:
                y2 = g.linear(g.constant(x2), "l")
                y1 = g.linear(g.constant(x1), "l")
            return g.sum_all(g.mul(g.tanh(y1), g.sigmoid(y2)))

        grads = []
        for order in (0, 1):
            store.zero_grads()
            g = Graph(store)
            g.backward(build(g, order))
            grads.append(store.grads["l.W"].copy())
        denom = np.maximum(np.abs(grads[0]), 1e-12)
        assert np.max(np.abs(grads[0] - grads[1]) / denom) < 1e-9

    def test_param_reused_twice_accumulates_on_one_node(self):
        store = store_with({"l.W": np.full((2, 2), 0.5), "l.b": np.zeros(2)})
        g = Graph(store)
        x = g.constant([1.0, 1.0])
        loss = g.sum_all(g.add(g.linear(x, "l"), g.linear(x, "l")))
        g.backward(loss)
        assert np.array_equal(store.grads["l.W"], 2.0 * np.ones((2, 2)))


# --- sgd ---------------------------------------------------------------------

class TestSgd:
    def test_zero_gradient_no_change(self):
        store = store_with({"p": [1.0, 2.0]})
        sgd_step(store, 0.1)
        assert np.array_equal(store.values["p"], [1.0, 2.0])
        assert store.step == 1

    def test_arithmetic(self):
        store = store_with({"p": [1.0]})
        store.grads["p"][:] = 2.0
        sgd_step(store, 0.1)
        assert store.values["p"][0] == pytest.approx(0.8)

    def test_quadratic_recurrence(self):
        # loss 0.5 x^2, gradient x: x_k = 0.9^k with lr 0.1
        store = store_with({"x": [1.0]})
        for k in range(1, 20):
            store.grads["x"][:] = store.values["x"]
            sgd_step(store, 0.1)
            assert store.values["x"][0] == pytest.approx(0.9**k, rel=1e-12)

    def test_nan_gradient_names_parameter(self):
        store = store_with({"good": [1.0], "bad.W": [1.0]})
        store.grads["bad.W"][:] = np.nan
        with pytest.raises(GradientError, match="bad.W"):
            sgd_step(store, 0.1)

    def test_gradients_cleared_after_step(self):
        store = store_with({"p": [1.0]})
        store.grads["p"][:] = 3.0
        sgd_step(store, 0.01)
        assert np.all(store.grads["p"] == 0.0)


# --- checkpoints --------------------------------------------------------------

class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(10)
        store = ParamStore()
        store.add_linear("embed.fc", 4, 3, rng)
        store.add_conv("embed.stem", 2, 4, 3, rng)
        store.add_scalar("simpol.w0", 1.0)
        store.step = 17
        path = str(tmp_path / "model.ckpt")
        save_checkpoint(store, path)

        other = ParamStore()
        other.add_linear("embed.fc", 4, 3, np.random.default_rng(99))
        other.add_conv("embed.stem", 2, 4, 3, np.random.default_rng(99))
        other.add_scalar("simpol.w0", 0.0)
        load_checkpoint(other, path)
        for name in store.values:
            assert np.array_equal(store.values[name], other.values[name])
        assert other.step == 17

    def test_magic_and_order(self, tmp_path):
        store = store_with({"b.x": [1.0], "a.y": [2.0]})
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(store, path)
        blob = open(path, "rb").read()
        assert blob.startswith(b"MCTSNET1")
        assert blob.index(b"a.y") < blob.index(b"b.x")

    def test_shape_mismatch_names_parameter(self, tmp_path):
        store = store_with({"p.W": np.zeros((2, 2))})
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(store, path)
        other = store_with({"p.W": np.zeros((3, 2))})
        with pytest.raises(ValueError, match="p.W"):
            load_checkpoint(other, path)

    def test_read_checkpoint_raw(self, tmp_path):
        store = store_with({"w": [[1.0, 2.0]]})
        store.step = 3
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(store, path)
        entries, step = read_checkpoint(path)
        assert step == 3
        assert np.array_equal(entries["w"], [[1.0, 2.0]])


# --- grad_check harness ---------------------------------------------------------

class TestGradCheck:
    def test_linear_layer_precise(self):
        rng = np.random.default_rng(11)
        store = ParamStore()
        store.add_linear("l", 6, 4, rng)
        x = rng.normal(size=6)

        def builder(g):
            _, loss = g.softmax_xent(g.tanh(g.linear(g.constant(x), "l")), 2)
            return loss

        report = grad_check(store, builder, tolerance=1e-7, n_samples=28)
        assert report.passed, str(report)

    def test_corrupted_backward_detected(self, monkeypatch):
        rng = np.random.default_rng(12)
        store = ParamStore()
        store.add_linear("l", 4, 4, rng)
        x = rng.normal(size=4)

        orig = Graph.pointwise

        def corrupted(self, node, kind):
            if kind != "tanh":
                return orig(self, node, kind)
            y = np.tanh(node.value)
            # wrong derivative on purpose: drops the 1 - y^2 factor
            return self._append("tanh", (node,), y, lambda g: (g * 0.7,))

        monkeypatch.setattr(Graph, "pointwise", corrupted)

        def builder(g):
            _, loss = g.softmax_xent(g.tanh(g.linear(g.constant(x), "l")), 0)
            return loss

        report = grad_check(store, builder, tolerance=1e-4, n_samples=20)
        assert not report.passed
        assert report.max_rel_error > 1e-2
