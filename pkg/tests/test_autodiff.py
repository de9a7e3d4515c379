import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cosca import autodiff as ad

from .conftest import fd_grad, rel_err, tape_grad


def leaf(x):
    return ad.Tensor(x, requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(ad.Tensor(np.eye(2)), ad.Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_zero(self):
        out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[0.0], [0.0]]))
        np.testing.assert_array_equal(out.data, [[0.0]])

    def test_grad_of_sum_is_ones_times_bt(self, rng):
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        (ga,) = tape_grad(lambda: ad.sum_(ad.matmul(a, b)), [a])
        np.testing.assert_allclose(ga, np.ones((3, 2)) @ b.data.T, rtol=1e-12)
        (fd,) = fd_grad(lambda: float((a.data @ b.data).sum()), [a.data])
        assert rel_err(ga, fd) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(ad.relu(ad.Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_abs(self):
        np.testing.assert_allclose(ad.abs_(ad.Tensor([-0.3, 0.5])).data, [0.3, 0.5])

    def test_abs_subgradient_at_zero(self):
        x = leaf([0.0, -1.0, 2.0])
        (g,) = tape_grad(lambda: ad.sum_(ad.abs_(x)), [x])
        np.testing.assert_array_equal(g, [0.0, -1.0, 1.0])

    def test_tanh_derivative(self):
        x = leaf([0.7])
        (g,) = tape_grad(lambda: ad.sum_(ad.tanh(x)), [x])
        h = 1e-5
        fd = (np.tanh(0.7 + h) - np.tanh(0.7 - h)) / (2 * h)
        assert abs(g[0] - fd) < 1e-6

    def test_log_domain(self):
        with pytest.raises(ad.DomainError):
            ad.log(ad.Tensor([1.0, 0.0]))
        with pytest.raises(ad.DomainError):
            ad.log(ad.Tensor([-2.0]))

    def test_sqrt_domain(self):
        with pytest.raises(ad.DomainError):
            ad.sqrt(ad.Tensor([-1e-9]))

    def test_max_with_scalar(self):
        x = leaf([0.5, 2.0])
        out = ad.max_with_scalar(x, 1.0)
        np.testing.assert_array_equal(out.data, [1.0, 2.0])
        (g,) = tape_grad(lambda: ad.sum_(ad.max_with_scalar(x, 1.0)), [x])
        np.testing.assert_array_equal(g, [0.0, 1.0])

    def test_only_scalar_broadcasting(self):
        with pytest.raises(ad.ShapeError):
            ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones(3)))
        out = ad.mul(ad.Tensor(np.ones((2, 3))), 2.0)
        np.testing.assert_array_equal(out.data, 2 * np.ones((2, 3)))

    def test_overflow_is_an_error(self):
        with pytest.raises(ad.NonFiniteError):
            ad.exp(ad.Tensor([1000.0]))


UNARY = {
    "relu": (ad.relu, lambda x: np.maximum(x, 0)),
    "tanh": (ad.tanh, np.tanh),
    "exp": (ad.exp, np.exp),
    "neg": (ad.neg, np.negative),
    "abs": (ad.abs_, np.abs),
    "square": (ad.square, np.square),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name, rng):
    op, ref = UNARY[name]
    for _ in range(10):
        x0 = rng.uniform(-2, 2, size=(3, 4))
        if name in ("relu", "abs") and np.min(np.abs(x0)) < 1e-3:
            continue
        w = rng.normal(size=x0.shape)
        x = leaf(x0)
        (g,) = tape_grad(lambda: ad.sum_(ad.mul(op(x), ad.Tensor(w))), [x])
        (fd,) = fd_grad(lambda: float(np.sum(ref(x.data) * w)), [x.data])
        assert rel_err(g, fd) < 1e-4


@pytest.mark.parametrize("name", ["log", "sqrt"])
def test_positive_domain_gradients(name, rng):
    op, ref = {"log": (ad.log, np.log), "sqrt": (ad.sqrt, np.sqrt)}[name]
    for _ in range(10):
        x = leaf(rng.uniform(0.1, 2, size=5))
        (g,) = tape_grad(lambda: ad.sum_(op(x)), [x])
        (fd,) = fd_grad(lambda: float(np.sum(ref(x.data))), [x.data])
        assert rel_err(g, fd) < 1e-4


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_gradients(op, rng):
    fn = getattr(ad, op)
    npfn = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}[op]
    for scalar_b in (False, True):
        a = leaf(rng.uniform(-2, 2, size=(2, 3)))
        b = leaf(rng.uniform(0.5, 2, size=() if scalar_b else (2, 3)))
        ga, gb = tape_grad(lambda: ad.sum_(ad.square(fn(a, b))), [a, b])
        fa, fb = fd_grad(lambda: float(np.sum(npfn(a.data, b.data) ** 2)), [a.data, b.data])
        assert rel_err(ga, fa) < 1e-4
        assert rel_err(gb, fb) < 1e-4
        assert gb.shape == b.shape


class TestReductions:
    def test_mean_axis(self):
        np.testing.assert_array_equal(ad.mean_axis(ad.Tensor([[1.0, 3.0], [5.0, 7.0]]), 0).data, [3, 5])

    def test_l2_norm(self):
        assert ad.l2_norm(ad.Tensor([3.0, 4.0])).item() == 5.0

    def test_l2_norm_gradient(self):
        x = leaf([3.0, 4.0])
        (g,) = tape_grad(lambda: ad.l2_norm(x), [x])
        np.testing.assert_allclose(g, [0.6, 0.8], rtol=1e-12)
        (fd,) = fd_grad(lambda: float(np.linalg.norm(x.data)), [x.data])
        np.testing.assert_allclose(g, fd, rtol=1e-8)

    @pytest.mark.parametrize("axis", [0, 1])
    def test_axis_reductions_gradient(self, axis, rng):
        x = leaf(rng.uniform(-2, 2, size=(3, 4)))
        w = rng.normal(size=4 if axis == 0 else 3)
        for red, ref in ((ad.sum_axis, np.sum), (ad.mean_axis, np.mean)):
            (g,) = tape_grad(lambda: ad.sum_(ad.mul(red(x, axis), ad.Tensor(w))), [x])
            (fd,) = fd_grad(lambda: float(np.sum(ref(x.data, axis=axis) * w)), [x.data])
            assert rel_err(g, fd) < 1e-4

    def test_empty_reduction(self):
        for red in (ad.sum_, ad.mean, ad.l2_norm):
            with pytest.raises(ad.ShapeError):
                red(ad.Tensor(np.zeros((0,))))

    def test_axis_out_of_range(self):
        with pytest.raises(ad.ShapeError):
            ad.sum_axis(ad.Tensor(np.ones((2, 2))), 2)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_allclose(ad.softmax_rows(ad.Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_stable_for_large_logits(self):
        p = ad.softmax_rows(ad.Tensor([[1000.0, 0.0]])).data
        assert p[0, 0] == 1.0 and 0.0 <= p[0, 1] < 1e-300

    def test_rows_sum_to_one(self, rng):
        p = ad.softmax_rows(ad.Tensor(rng.normal(size=(5, 3)))).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_gradient(self, rng):
        z = leaf(rng.uniform(-2, 2, size=(4, 3)))
        w = rng.normal(size=(4, 3))

        def ref():
            e = np.exp(z.data - z.data.max(1, keepdims=True))
            return float(np.sum(e / e.sum(1, keepdims=True) * w))

        (g,) = tape_grad(lambda: ad.sum_(ad.mul(ad.softmax_rows(z), ad.Tensor(w))), [z])
        (fd,) = fd_grad(ref, [z.data])
        assert rel_err(g, fd) < 1e-4

    def test_log_softmax_gradient(self, rng):
        z = leaf(rng.uniform(-2, 2, size=(4, 3)))
        w = rng.normal(size=(4, 3))

        def ref():
            s = z.data - z.data.max(1, keepdims=True)
            return float(np.sum((s - np.log(np.exp(s).sum(1, keepdims=True))) * w))

        (g,) = tape_grad(lambda: ad.sum_(ad.mul(ad.log_softmax_rows(z), ad.Tensor(w))), [z])
        (fd,) = fd_grad(ref, [z.data])
        assert rel_err(g, fd) < 1e-4


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (4, 3), elements=st.floats(-50, 50)),
    arrays(np.float64, (4, 1), elements=st.floats(-50, 50)),
)
def test_softmax_normalised_and_shift_invariant(z, shift):
    p = ad.softmax_rows(ad.Tensor(z)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)
    q = ad.softmax_rows(ad.Tensor(z + shift)).data
    np.testing.assert_allclose(p, q, atol=1e-9)


class TestBackward:
    def test_sum(self):
        w = leaf(np.ones(3))
        with ad.Tape() as tape:
            loss = ad.sum_(w)
        np.testing.assert_array_equal(tape.backward(loss)[w], [1, 1, 1])

    def test_sum_of_squares(self):
        w = leaf([1.0, 2.0, 3.0])
        with ad.Tape() as tape:
            loss = ad.sum_(ad.mul(w, w))
        np.testing.assert_array_equal(tape.backward(loss)[w], [2, 4, 6])

    def test_non_scalar_loss(self):
        w = leaf([1.0, 2.0])
        with ad.Tape() as tape:
            out = ad.square(w)
        with pytest.raises(ad.ShapeError):
            tape.backward(out)

    def test_replay_is_bit_identical(self, rng):
        x = leaf(rng.normal(size=(5, 4)))
        w = leaf(rng.normal(size=(4, 3)))
        with ad.Tape() as tape:
            loss = ad.mean(ad.tanh(ad.matmul(x, w)))
        g1 = tape.backward(loss)
        g2 = tape.backward(loss)
        for t in (x, w):
            assert g1[t].tobytes() == g2[t].tobytes()

    def test_nodes_in_topological_order(self, rng):
        x = leaf(rng.normal(size=(2, 2)))
        with ad.Tape() as tape:
            loss = ad.sum_(ad.relu(ad.matmul(x, x)))
        seen = set()
        for node in tape.nodes:
            for p in node.parents:
                assert p._node is None or id(p._node) in seen
            seen.add(id(node))

    def test_shared_subexpression_accumulates(self):
        x = leaf([2.0])
        with ad.Tape() as tape:
            y = ad.square(x)
            loss = ad.sum_(ad.add(y, y))
        np.testing.assert_array_equal(tape.backward(loss)[x], [8.0])

    def test_no_recording_outside_tape(self):
        w = leaf([1.0])
        out = ad.square(w)
        assert out._node is None


class TestDetach:
    def test_gradient_stops(self):
        x = leaf([1.0, -2.0, 3.0])
        w = leaf([0.5, 0.5, 0.5])
        with ad.Tape() as tape:
            loss = ad.sum_(ad.mul(ad.detach(x), w))
        grads = tape.backward(loss)
        assert x not in grads
        np.testing.assert_array_equal(grads[w], x.data)

    def test_idempotent(self):
        x = leaf([1.0, 2.0])
        d = ad.detach(ad.detach(x))
        np.testing.assert_array_equal(d.data, x.data)
        assert not d.tracked

    def test_detached_copy_is_independent(self):
        x = leaf([1.0])
        d = ad.detach(x)
        x.data += 1
        assert d.data[0] == 1.0
