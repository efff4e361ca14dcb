"""Gradient checks for every differentiable op, plus optimizer behavior."""

import math

import numpy as np
import pytest

from pointspot import autodiff as ad
from pointspot.autodiff import Tensor, finite_difference
from pointspot.nn import MLP, LayerNorm, Linear, Module, l2_normalize, layer_norm
from pointspot.optim import AdamW, NonFiniteGradient, clip_grad_norm

REL_TOL = 1e-4


def check_grad(build, x0, h=1e-5):
    """Compare autodiff gradient of a scalar composite against central
    finite differences (double precision)."""
    with ad.default_dtype(np.float64):
        x = Tensor(x0.copy(), requires_grad=True)
        out = build(x)
        out.backward()
        analytic = x.grad.copy()

        def f(v):
            with ad.no_grad():
                return float(build(Tensor(v)).data)

        numeric = finite_difference(f, x0, h=h)
    scale = np.maximum(np.abs(numeric), 1.0)
    err = np.max(np.abs(analytic - numeric) / scale)
    assert err < REL_TOL, f"gradient mismatch: {err}"


@pytest.fixture(autouse=True)
def _f64():
    with ad.default_dtype(np.float64):
        yield


class TestElementwiseGrads:
    def test_add_mul_broadcast(self, rng):
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.add(x, b), w)), rng.normal(size=(4, 3)))

    def test_subtract_divide(self, rng):
        d = rng.uniform(1.0, 2.0, (3, 3))
        check_grad(lambda x: ad.reduce_sum(ad.divide(ad.subtract(x, 1.5), d)),
                   rng.normal(size=(3, 3)))

    def test_divide_by_tensor(self, rng):
        num = rng.normal(size=(3,))
        check_grad(lambda x: ad.reduce_sum(ad.divide(num, x)), rng.uniform(1.0, 3.0, 3))

    def test_exp_log_sqrt(self, rng):
        check_grad(lambda x: ad.reduce_sum(ad.log(ad.add(ad.exp(x), 1.0))), rng.normal(size=5))
        check_grad(lambda x: ad.reduce_sum(ad.sqrt(x)), rng.uniform(0.5, 2.0, 5))

    def test_relu_sigmoid(self, rng):
        # keep away from the relu kink where finite differences are invalid
        x0 = rng.normal(size=(4, 4))
        x0[np.abs(x0) < 0.05] += 0.1
        w = rng.normal(size=(4, 4))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.relu(x), w)), x0)
        check_grad(lambda x: ad.reduce_sum(ad.sigmoid(x)), rng.normal(size=6))

    def test_bce_with_logits(self, rng):
        t = rng.uniform(0, 1, (3, 4)).round()
        check_grad(lambda x: ad.reduce_mean(ad.bce_with_logits(x, t)), rng.normal(size=(3, 4)))

    def test_log_domain_error(self):
        with pytest.raises(ValueError, match="log"):
            ad.log(Tensor([-1.0]))

    def test_sqrt_domain_error(self):
        with pytest.raises(ValueError, match="sqrt"):
            ad.sqrt(Tensor([-1.0]))


class TestMatmulGrads:
    def test_matmul_both_sides(self, rng):
        a0 = rng.normal(size=(3, 4))
        b0 = rng.normal(size=(4, 2))
        w = rng.normal(size=(3, 2))

        check_grad(lambda a: ad.reduce_sum(ad.multiply(ad.matmul(a, Tensor(b0)), w)), a0)
        check_grad(lambda b: ad.reduce_sum(ad.multiply(ad.matmul(Tensor(a0), b), w)), b0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestSoftmaxGrads:
    def test_single_element_is_one_with_zero_grad(self):
        x = Tensor(np.array([[3.0]]), requires_grad=True)
        y = ad.softmax(x, axis=1)
        assert y.data[0, 0] == 1.0
        ad.reduce_sum(y).backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        y = ad.softmax(Tensor(rng.normal(size=(5, 7)) * 10), axis=-1)
        np.testing.assert_allclose(y.data.sum(-1), 1.0, atol=1e-6)
        assert (y.data >= 0).all()

    def test_gradcheck(self, rng):
        w = rng.normal(size=(4, 5))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.softmax(x, axis=1), w)),
                   rng.normal(size=(4, 5)))

    def test_axis_out_of_range(self):
        with pytest.raises(ValueError, match="axis"):
            ad.softmax(Tensor(np.zeros((2, 2))), axis=2)


class TestShapeOpGrads:
    def test_reshape_transpose_concat(self, rng):
        w = rng.normal(size=(6,))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.reshape(x, (6,)), w)),
                   rng.normal(size=(2, 3)))
        w2 = rng.normal(size=(3, 2))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.transpose(x), w2)),
                   rng.normal(size=(2, 3)))
        other = rng.normal(size=(2, 3))
        w3 = rng.normal(size=(4, 3))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.concat([x, Tensor(other)], axis=0), w3)),
                   rng.normal(size=(2, 3)))

    def test_broadcast_to(self, rng):
        w = rng.normal(size=(4, 3))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.broadcast_to(x, (4, 3)), w)),
                   rng.normal(size=(1, 3)))


class TestIndexedGrads:
    def test_gather_rows_with_repeats(self, rng):
        idx = np.array([0, 2, 2, 1])
        w = rng.normal(size=(4, 3))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.gather_rows(x, idx), w)),
                   rng.normal(size=(3, 3)))

    def test_gather_rows_2d_index(self, rng):
        idx = np.array([[0, 1], [2, 0]])
        w = rng.normal(size=(2, 2, 3))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.gather_rows(x, idx), w)),
                   rng.normal(size=(3, 3)))

    def test_scatter_add_rows(self, rng):
        idx = np.array([0, 1, 0, 2])
        w = rng.normal(size=(3, 2))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.scatter_add_rows(x, idx, 3), w)),
                   rng.normal(size=(4, 2)))
        out = ad.scatter_add_rows(Tensor(np.ones((4, 2))), idx, 3)
        np.testing.assert_array_equal(out.data, [[2, 2], [1, 1], [1, 1]])


class TestReduceGrads:
    def test_sum_axes(self, rng):
        w = rng.normal(size=(3,))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.reduce_sum(x, axis=0), w)),
                   rng.normal(size=(4, 3)))

    def test_mean(self, rng):
        w = rng.normal(size=(4,))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.reduce_mean(x, axis=1), w)),
                   rng.normal(size=(4, 3)))

    def test_max(self, rng):
        w = rng.normal(size=(4,))
        x0 = rng.normal(size=(4, 3))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(ad.reduce_max(x, axis=1), w)), x0)


class TestCompositeGrads:
    def test_layer_norm_wrt_input(self, rng):
        gain = Tensor(rng.normal(size=5))
        bias = Tensor(rng.normal(size=5))
        w = rng.normal(size=(3, 5))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(layer_norm(x, gain, bias), w)),
                   rng.normal(size=(3, 5)))

    def test_layer_norm_wrt_gain_and_bias(self, rng):
        x0 = rng.normal(size=(3, 5))
        w = rng.normal(size=(3, 5))
        bias = Tensor(rng.normal(size=5))
        check_grad(lambda gn: ad.reduce_sum(ad.multiply(
            layer_norm(Tensor(x0), gn, bias), w)), rng.normal(size=5))
        gain = Tensor(rng.normal(size=5))
        check_grad(lambda b: ad.reduce_sum(ad.multiply(
            layer_norm(Tensor(x0), gain, b), w)), rng.normal(size=5))

    def test_layer_norm_3d_input(self, rng):
        gain = Tensor(rng.normal(size=4))
        bias = Tensor(rng.normal(size=4))
        w = rng.normal(size=(2, 3, 4))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(layer_norm(x, gain, bias), w)),
                   rng.normal(size=(2, 3, 4)))

    def test_l2_normalize(self, rng):
        w = rng.normal(size=(3, 4))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(l2_normalize(x), w)),
                   rng.normal(size=(3, 4)))

    def test_mlp_end_to_end(self, rng):
        mlp = MLP(4, 8, 2, rng)
        w = rng.normal(size=(5, 2))
        check_grad(lambda x: ad.reduce_sum(ad.multiply(mlp(x), w)), rng.normal(size=(5, 4)))

    def test_sum_of_squares_example(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ad.reduce_sum(ad.multiply(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])


class TestGraphMechanics:
    def test_grad_accumulates_on_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.add(ad.multiply(x, 3.0), ad.multiply(x, 4.0))
        y.backward()
        np.testing.assert_array_equal(x.grad, [7.0])

    def test_no_grad_disables_tape(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with ad.no_grad():
            y = ad.multiply(x, 2.0)
        assert not y.requires_grad
        assert y._parents == ()

    def test_diamond_graph_visits_once(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        a = ad.multiply(x, 2.0)
        b = ad.add(a, a)
        b.backward()
        np.testing.assert_array_equal(x.grad, [4.0])


class TestModule:
    def test_parameter_collection_order(self, rng):
        class Net(Module):
            def __init__(self):
                self.fc1 = Linear(2, 3, rng)
                self.norm = LayerNorm(3)
                self.stack = [Linear(3, 3, rng), Linear(3, 1, rng)]

        names = list(Net().parameters())
        assert names == ["fc1.w", "fc1.b", "norm.gain", "norm.bias",
                         "stack.0.w", "stack.0.b", "stack.1.w", "stack.1.b"]

    def test_state_round_trip(self, rng):
        net = MLP(3, 4, 2, rng)
        state = net.state()
        net2 = MLP(3, 4, 2, np.random.default_rng(99))
        net2.load_state(state)
        x = Tensor(rng.normal(size=(2, 3)))
        np.testing.assert_array_equal(net(x).data, net2(x).data)


class TestAdamW:
    def test_zero_grad_no_decay_keeps_params(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_first_step_moves_by_lr(self):
        # f(x) = x, so grad = 1; bias correction makes step ~= lr
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        p.grad = np.ones(1)
        opt.step()
        assert p.data[0] == pytest.approx(0.9, abs=1e-7)

    def test_decoupled_decay_with_zero_grad(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.001)
        p.grad = np.zeros(1)
        opt.step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.001), rel=1e-12)

    def test_nonfinite_abort(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"p": p}, on_nonfinite="abort")
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient):
            opt.step()

    def test_nonfinite_skip(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        opt = AdamW({"p": p}, on_nonfinite="skip")
        p.grad = np.array([np.inf])
        assert opt.step() is False
        assert p.data[0] == 1.0 and opt.t == 0

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        opt = AdamW({"p": p}, lr=0.05, weight_decay=0.0)
        for _ in range(400):
            opt.zero_grad()
            loss = ad.reduce_sum(ad.multiply(p, p))
            loss.backward()
            opt.step()
        assert abs(p.data[0]) < 0.05


class TestClipGradNorm:
    def test_scales_down(self):
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        norm = clip_grad_norm({"p": p}, 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])

    def test_leaves_small_grads(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([0.5])
        clip_grad_norm({"p": p}, 1.0)
        np.testing.assert_array_equal(p.grad, [0.5])
