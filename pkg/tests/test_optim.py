import numpy as np
import pytest

from dan.autodiff import ContractError, Tensor
from dan.optim import Adam, AdamState, adam_step


def param(x):
    return Tensor(np.array(x, dtype=float), requires_grad=True)


def reference_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam, one scalar coordinate at a time."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


class TestAdamExamples:
    def test_first_step(self):
        p = param([0.0])
        state = AdamState.for_params([p], lr=0.001)
        adam_step([p], [np.array([1.0])], state)
        delta = p.data[0]
        assert abs(delta + 0.001 * 1.0 / (1.0 + 1e-8)) < 1e-6
        assert delta == pytest.approx(-0.001, abs=1e-9)

    def test_zero_gradient_leaves_parameter(self):
        p = param([1.5, -2.0])
        state = AdamState.for_params([p], lr=0.01)
        for _ in range(5):
            adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_two_steps_first_moment(self):
        g = 0.7
        p = param([0.0])
        state = AdamState.for_params([p], lr=0.001)
        adam_step([p], [np.array([g])], state)
        adam_step([p], [np.array([g])], state)
        assert state.m[0][0] == pytest.approx(g * (1 - 0.9 ** 2), rel=1e-12)
        assert state.t == 2

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(0)
        grads = rng.standard_normal((25, 4))
        p = param(np.zeros(4))
        opt = Adam([p], lr=3e-3)
        for g in grads:
            opt.step({p: Tensor(g)})
        ref = [reference_adam(0.0, grads[:, i], 3e-3) for i in range(4)]
        np.testing.assert_allclose(p.data, ref, rtol=1e-12, atol=1e-15)
        assert opt.steps == 25


class TestAdamState:
    def test_moments_match_parameter_shapes(self):
        ps = [param(np.zeros((2, 3))), param(np.zeros(4))]
        state = AdamState.for_params(ps, lr=0.1)
        assert [m.shape for m in state.m] == [(2, 3), (4,)]
        assert [v.shape for v in state.v] == [(2, 3), (4,)]

    def test_step_counter_increments(self):
        p = param([1.0])
        state = AdamState.for_params([p], lr=0.1)
        for t in range(1, 4):
            adam_step([p], [np.ones(1)], state)
            assert state.t == t

    def test_missing_mapping_entry_is_zero_gradient(self):
        a, b = param([1.0]), param([2.0])
        opt = Adam([a, b], lr=0.1)
        opt.step({a: Tensor([1.0])})
        assert b.data[0] == 2.0 and a.data[0] < 1.0

    def test_clipping(self):
        p = param([0.0, 0.0])
        state = AdamState.for_params([p], lr=0.1)
        adam_step([p], [np.array([30.0, 40.0])], state, clip_norm=5.0)
        np.testing.assert_allclose(state.m[0], [0.3, 0.4])


class TestAdamErrors:
    def test_gradient_shape_mismatch(self):
        p = param([0.0, 0.0])
        state = AdamState.for_params([p], lr=0.1)
        with pytest.raises(ContractError, match="shape"):
            adam_step([p], [np.zeros(3)], state)

    def test_parameter_count_mismatch(self):
        p = param([0.0])
        state = AdamState.for_params([p], lr=0.1)
        with pytest.raises(ContractError):
            adam_step([p, param([1.0])], [np.zeros(1), np.zeros(1)], state)
