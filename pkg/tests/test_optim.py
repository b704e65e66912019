"""Adam and gradient clipping against hand-computed update chains."""

import math

import numpy as np
import pytest

from metaphora.errors import ContractError, ParameterError
from metaphora.optim import Adam, clip_grad_norm
from metaphora.tensor import Tensor


def hand_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar reference: the textbook bias-corrected update chain in pure floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        corr1 = 1.0 - b1 ** t
        corr2 = 1.0 - b2 ** t
        p -= lr * (m / corr1) / (math.sqrt(v / corr2) + eps)
    return p


def param(value):
    return Tensor(np.array([float(value)]), requires_grad=True)


def run_adam(p0, grads, **kw):
    p = param(p0)
    opt = Adam([p], **kw)
    for g in grads:
        p.grad = np.array([float(g)])
        opt.step()
    return float(p.data[0])


class TestAdamHandOracle:
    def test_two_step_chain(self):
        got = run_adam(1.0, [0.5, -0.3], lr=0.1)
        want = hand_adam(1.0, [0.5, -0.3], lr=0.1)
        assert abs(got - want) <= 1e-12

    def test_five_step_chain(self):
        grads = [0.5, -0.3, 0.05, 1.2, -0.9]
        got = run_adam(-2.0, grads, lr=0.01)
        want = hand_adam(-2.0, grads, lr=0.01)
        assert abs(got - want) <= 1e-12

    def test_first_step_with_unit_gradient_moves_by_about_lr(self):
        # With a constant gradient both bias-corrected moments equal the
        # gradient, so the first step is lr / (1 + eps) regardless of scale.
        got = run_adam(0.0, [1.0], lr=0.1)
        assert abs(got - (-0.1 / (1.0 + 1e-8))) <= 1e-15

    def test_zero_gradient_leaves_parameter_unchanged(self):
        got = run_adam(3.5, [0.0, 0.0, 0.0], lr=0.5)
        assert got == 3.5

    def test_shared_timestep_drives_bias_correction(self):
        # A parameter first seeing gradient at t=2 must be corrected with t=2.
        a, b = param(1.0), param(1.0)
        opt = Adam([a, b], lr=0.1)
        a.grad, b.grad = np.array([0.5]), np.array([0.0])
        opt.step()
        a.grad, b.grad = np.array([0.5]), np.array([0.4])
        opt.step()
        g = 0.4
        m = (1.0 - 0.9) * g
        v = (1.0 - 0.999) * g * g
        want = 1.0 - 0.1 * (m / (1.0 - 0.9 ** 2)) / (math.sqrt(v / (1.0 - 0.999 ** 2)) + 1e-8)
        assert abs(float(b.data[0]) - want) <= 1e-12

    def test_vector_update_matches_per_element_scalars(self):
        p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
        opt = Adam([p], lr=0.05)
        steps = [np.array([0.3, -0.1, 0.9]), np.array([-0.2, 0.4, 0.0])]
        for g in steps:
            p.grad = g.copy()
            opt.step()
        for i, start in enumerate([1.0, -2.0, 0.5]):
            want = hand_adam(start, [float(s[i]) for s in steps], lr=0.05)
            assert abs(float(p.data[i]) - want) <= 1e-12


class TestAdamContract:
    def test_missing_gradient_is_an_error(self):
        p = param(1.0)
        opt = Adam([p])
        with pytest.raises(ContractError, match="no gradient"):
            opt.step()

    def test_zero_grad_clears_all(self):
        p, q = param(1.0), param(2.0)
        p.grad, q.grad = np.array([1.0]), np.array([1.0])
        Adam([p, q]).zero_grad()
        assert p.grad is None and q.grad is None

    def test_hyperparameter_validation(self):
        p = param(1.0)
        with pytest.raises(ParameterError):
            Adam([p], lr=0.0)
        with pytest.raises(ParameterError):
            Adam([p], beta1=1.0)
        with pytest.raises(ParameterError):
            Adam([p], beta2=-0.1)
        with pytest.raises(ParameterError):
            Adam([p], eps=0.0)
        with pytest.raises(ParameterError):
            Adam([])


class TestClipGradNorm:
    def test_scales_above_threshold(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        norm = clip_grad_norm([p], 1.0)
        assert norm == 5.0
        np.testing.assert_allclose(p.grad, [0.6, 0.8], rtol=0, atol=1e-15)

    def test_leaves_small_gradients_alone(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([0.3, 0.4])
        norm = clip_grad_norm([p], 1.0)
        assert norm == 0.5
        np.testing.assert_array_equal(p.grad, [0.3, 0.4])

    def test_joint_norm_across_parameters(self):
        p, q = Tensor(np.zeros(1), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
        p.grad, q.grad = np.array([3.0]), np.array([4.0])
        norm = clip_grad_norm([p, q], 2.5)
        assert norm == 5.0
        np.testing.assert_allclose(np.array([p.grad[0], q.grad[0]]), [1.5, 2.0], rtol=0, atol=1e-15)

    def test_none_gradients_are_skipped(self):
        p, q = Tensor(np.zeros(1), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
        q.grad = np.array([2.0])
        assert clip_grad_norm([p, q], 10.0) == 2.0

    def test_max_norm_validation(self):
        with pytest.raises(ParameterError):
            clip_grad_norm([], 0.0)
