import numpy as np
import pytest

from arl_lab import autodiff as ad
from arl_lab.errors import NumericError, ShapeError


class TestTape:
    """Test leaf registration and recording."""

    def test_leaf_reuses_existing_key(self):
        """Test that watching the same key twice returns the same node."""
        tape = ad.Tape()
        first = tape.leaf(np.ones(3), "w")
        second = tape.leaf(np.zeros(3), "w")
        assert first.index == second.index
        assert len(tape) == 1
        np.testing.assert_array_equal(second.value, np.ones(3))

    def test_constant_has_no_gradient(self):
        """Test that constants never receive gradients."""
        tape = ad.Tape()
        w = tape.leaf(np.array([2.0]), "w")
        c = tape.constant(np.array([3.0]))
        loss = ad.reduce_sum(ad.multiply(w, c))
        grads = ad.backward(tape, loss)
        assert set(grads) == {"w"}
        np.testing.assert_allclose(grads["w"], [3.0])
        np.testing.assert_array_equal(c.grad, [0.0])

    def test_unknown_primitive(self):
        """Test that recording an unknown op fails."""
        tape = ad.Tape()
        x = tape.leaf(1.0, "x")
        with pytest.raises(ValueError, match="Unknown primitive"):
            tape.record("softplus", (x,))

    def test_inputs_from_another_tape(self):
        """Test that mixing tapes is rejected."""
        a = ad.Tape().leaf(np.ones(2), "a")
        b = ad.Tape().leaf(np.ones(2), "b")
        with pytest.raises(ValueError, match="different tape"):
            ad.multiply(a, b)


class TestShapeChecks:
    """Test shape validation at record time."""

    def test_matmul_mismatch(self):
        """Test matmul with incompatible inner dimensions."""
        tape = ad.Tape()
        a = tape.leaf(np.ones((2, 3)), "a")
        b = tape.leaf(np.ones((2, 2)), "b")
        with pytest.raises(ShapeError):
            ad.matmul(a, b)

    def test_add_bias_broadcast(self):
        """Test that a row vector is broadcast across a batch."""
        tape = ad.Tape()
        x = tape.leaf(np.zeros((4, 3)), "x")
        b = tape.leaf(np.array([1.0, 2.0, 3.0]), "b")
        out = ad.add(x, b)
        assert out.shape == (4, 3)
        grads = ad.backward(tape, ad.reduce_sum(out))
        np.testing.assert_allclose(grads["b"], [4.0, 4.0, 4.0])

    def test_add_incompatible(self):
        """Test that unrelated shapes cannot be added."""
        tape = ad.Tape()
        with pytest.raises(ShapeError):
            ad.add(tape.leaf(np.zeros((4, 3)), "x"), tape.leaf(np.zeros(4), "b"))

    def test_log_softmax_needs_matrix(self):
        """Test that log-softmax rejects a vector."""
        tape = ad.Tape()
        with pytest.raises(ShapeError):
            ad.log_softmax(tape.leaf(np.zeros(3), "x"))

    def test_backward_needs_scalar(self):
        """Test that backward refuses a non-scalar root."""
        tape = ad.Tape()
        x = tape.leaf(np.ones(3), "x")
        with pytest.raises(ShapeError, match="scalar"):
            ad.backward(tape, ad.relu(x))


class TestBackward:
    """Test gradients against finite differences."""

    def test_matches_finite_differences_through_mlp_like_graph(self):
        """Test a two-layer graph with every nonlinearity."""
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 3))
        w1 = rng.normal(size=(3, 4))
        w2 = rng.normal(size=(4, 2))

        def loss_of(w1_value):
            tape = ad.Tape()
            a = tape.leaf(w1_value, "w1")
            h = ad.tanh(ad.matmul(tape.constant(x), a))
            h = ad.add(ad.relu(h), ad.sigmoid(h))
            logits = ad.matmul(h, tape.constant(w2))
            return tape, ad.reduce_mean(ad.log_softmax(logits))

        tape, loss = loss_of(w1)
        grads = ad.backward(tape, loss)
        numeric = ad.finite_difference_grad(lambda w: loss_of(w)[1].value, w1)
        np.testing.assert_allclose(grads["w1"], numeric, rtol=1e-5, atol=1e-7)

    def test_log_exp_and_axis_reductions(self):
        """Test log, exp and axis-wise sums."""
        point = np.array([[0.5, 1.5], [2.0, 0.25]])

        def loss_of(value):
            tape = ad.Tape()
            x = tape.leaf(value, "x")
            rows = ad.reduce_sum(ad.multiply(ad.log(x), ad.exp(x)), axis=1)
            return tape, ad.reduce_mean(rows)

        tape, loss = loss_of(point)
        grads = ad.backward(tape, loss)
        numeric = ad.finite_difference_grad(lambda v: loss_of(v)[1].value, point)
        np.testing.assert_allclose(grads["x"], numeric, rtol=1e-6)

    def test_operator_overloads(self):
        """Test that Var arithmetic records the same primitives."""
        tape = ad.Tape()
        x = tape.leaf(np.array([1.0, -2.0]), "x")
        y = tape.leaf(np.array([3.0, 4.0]), "y")
        loss = ad.reduce_sum((x * y) - (2.0 * x) + (-y))
        grads = ad.backward(tape, loss)
        np.testing.assert_allclose(grads["x"], [1.0, 2.0])
        np.testing.assert_allclose(grads["y"], [0.0, -3.0])

    def test_gradients_accumulate_until_zeroed(self):
        """Test accumulation across backward calls."""
        tape = ad.Tape()
        x = tape.leaf(np.array(2.0), "x")
        loss = ad.scale(x, 3.0)
        ad.backward(tape, loss)
        grads = ad.backward(tape, loss)
        assert grads["x"] == pytest.approx(6.0)
        tape.zero_grad()
        assert ad.backward(tape, loss)["x"] == pytest.approx(3.0)

    def test_shared_leaf_sums_contributions(self):
        """Test a leaf used twice receives both contributions."""
        tape = ad.Tape()
        x = tape.leaf(np.array(3.0), "x")
        grads = ad.backward(tape, ad.multiply(x, x))
        assert grads["x"] == pytest.approx(6.0)


class TestFiniteDifference:
    """Test the central-difference helper."""

    def test_quadratic(self):
        """Test the gradient of a quadratic."""
        grad = ad.finite_difference_grad(lambda v: float(np.sum(v ** 2)), np.array([1.0, -2.0]))
        np.testing.assert_allclose(grad, [2.0, -4.0], atol=1e-8)

    def test_non_positive_step(self):
        """Test that h must be positive."""
        with pytest.raises(ValueError):
            ad.finite_difference_grad(lambda v: 0.0, np.zeros(1), h=0.0)

    def test_non_finite_function(self):
        """Test that a non-finite evaluation is reported."""
        with pytest.raises(NumericError):
            ad.finite_difference_grad(lambda v: float(np.log(v[0])), np.array([0.0]))


class TestSoftmax:
    """Test the plain-array softmax."""

    def test_rows_sum_to_one_for_large_logits(self):
        """Test stability for large logits."""
        p = ad.softmax([[1000.0, 1000.0], [0.0, -1000.0]])
        np.testing.assert_allclose(p.sum(axis=1), [1.0, 1.0])
        np.testing.assert_allclose(p[0], [0.5, 0.5])
