import numpy as np
import pytest

from acnet.optim import Adam, AdamState, adam_step
from acnet.tensor import Tensor, concat, no_grad, split

from conftest import gradcheck, gradcheck_instances
from gradcases import OPS

N_INSTANCES = 20


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    gradcheck_instances(OPS[name], N_INSTANCES, seed=7)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_quadratic_gives_2x(rng):
    a = rng.normal(size=(4, 3))
    x = Tensor(a, requires_grad=True, dtype=np.float64)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * a)


def test_diamond_graph_sums_path_contributions():
    # y = a*b + a*c with b = 2a, c = a^2  ->  dy/da = 4a + 3a^2
    x = Tensor(np.array([1.5, -0.5]), requires_grad=True, dtype=np.float64)
    b = x * 2.0
    c = x ** 2
    (x * b + x * c).sum().backward()
    a = x.data
    np.testing.assert_allclose(x.grad, 4 * a + 3 * a**2)


def test_repeated_backward_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, 6.0)
    x.zero_grad()
    assert x.grad is None


def test_non_scalar_backward_is_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert y._prev == ()


def test_detach_cuts_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x.detach() * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, 1.0)


def test_max_tie_sends_gradient_to_first_index():
    x = Tensor(np.array([[2.0, 2.0, 1.0]]), requires_grad=True)
    x.max(axis=1).sum().backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0, 0.0]])


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    x.relu().sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_concat_and_split_roundtrip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    parts = split(concat([Tensor(a), Tensor(b)]), [2, 4])
    np.testing.assert_array_equal(parts[0].data, a)
    np.testing.assert_array_equal(parts[1].data, b)


# -------------------------------------------------------------------- Adam
def test_adam_first_step_moves_by_lr():
    for g in (1e-6, 0.3, -5.0, 1e4):
        p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
        state = AdamState.for_params([p], lr=0.01)
        adam_step([p], [np.array([g])], state)
        # closed form: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        np.testing.assert_allclose(1.0 - p.data, 0.01 * g / (abs(g) + 1e-8), rtol=1e-12)


def test_adam_zero_gradient_leaves_parameter():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    before = p.data.copy()
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(2, np.float32)], state)
    np.testing.assert_array_equal(p.data, before)


def test_adam_converges_on_quadratic():
    w = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    opt = Adam([w], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        ((w - 3.0) ** 2).sum().backward()
        opt.step()
    assert abs(w.data[0] - 3.0) < 0.1


def test_adam_lr_zero_is_bit_identical(rng):
    p = Tensor(rng.normal(size=(5,)).astype(np.float32), requires_grad=True)
    before = p.data.copy()
    opt = Adam([p], lr=0.0)
    p.grad = rng.normal(size=(5,)).astype(np.float32)
    opt.step()
    assert before.tobytes() == p.data.tobytes()
