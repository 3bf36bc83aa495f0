import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairgraph.autodiff import ComputationRecord, EmptyReductionError, Tensor, concat, grad_check, no_grad


def test_sigmoid_at_zero():
    assert Tensor([0.0]).sigmoid().data.tolist() == [0.5]


def test_add_elementwise():
    assert Tensor([1.0, 2.0]).elementwise("add", Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]


def test_square_backward_matches_central_difference():
    x = Tensor([3.0], requires_grad=True)
    y = x.elementwise("square")
    assert y.data.tolist() == [9.0]
    y.sum().backward()
    h = 1e-5
    fd = ((3 + h) ** 2 - (3 - h) ** 2) / (2 * h)
    assert x.grad[0] == pytest.approx(6.0)
    assert x.grad[0] == pytest.approx(fd, rel=1e-8)


@pytest.mark.parametrize("kind", ["add", "sub", "mul", "sigmoid", "log", "exp", "square", "relu"])
def test_elementwise_kinds_match_numpy(kind):
    a = np.array([0.3, 1.7, 2.2])
    b = np.array([1.1, -0.4, 0.5])
    ref = {
        "add": a + b, "sub": a - b, "mul": a * b, "sigmoid": 1 / (1 + np.exp(-a)),
        "log": np.log(a), "exp": np.exp(a), "square": a * a, "relu": np.maximum(a, 0),
    }[kind]
    other = Tensor(b) if kind in ("add", "sub", "mul") else None
    np.testing.assert_allclose(Tensor(a).elementwise(kind, other).data, ref, rtol=1e-15)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        Tensor([1.0]).elementwise("tanh")


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_row_broadcast_of_bias():
    out = Tensor(np.zeros((3, 2))) + Tensor([1.0, 2.0])
    np.testing.assert_array_equal(out.data, [[1, 2]] * 3)


def test_log_of_non_positive_raises():
    with pytest.raises(ValueError, match="non-positive"):
        Tensor([0.5, 0.0]).log()


def test_matmul_identity_and_selection():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ m).data, m.data)
    assert (Tensor([[1.0, 0.0]]) @ Tensor([[2.0], [5.0]])).data.tolist() == [[2.0]]


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_gradients_random():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((4, 2))
    a = rng.standard_normal((3, 4))
    assert grad_check(lambda x: (x @ Tensor(b)).sum(), a) < 1e-4
    assert grad_check(lambda x: (Tensor(a) @ x).sum(), b) < 1e-4


def test_reductions():
    assert Tensor([2.0, 4.0, 6.0]).reduce("mean").item() == 4.0
    assert Tensor([[1.0, 2.0], [3.0, 4.0]]).reduce("sum", axis=0).data.tolist() == [4.0, 6.0]


def test_mean_backward_distributes():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.mean().backward()
    np.testing.assert_allclose(x.grad, [1 / 3] * 3)


def test_empty_mean_raises():
    with pytest.raises(EmptyReductionError, match="empty reduction"):
        Tensor(np.zeros(0)).mean()


def test_grad_check_examples():
    assert grad_check(lambda x: x.square().sum(), [3.0]) < 1e-6
    x = Tensor([0.0], requires_grad=True)
    x.sigmoid().sum().backward()
    assert x.grad[0] == pytest.approx(0.25)
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 4)))
    assert grad_check(lambda v: (w @ v).sigmoid().square().mean(), rng.standard_normal((4, 1))) < 1e-4


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ValueError):
        grad_check(lambda x: x.square(), [1.0, 2.0])


def test_two_consumers_accumulate():
    x = Tensor([2.0], requires_grad=True)
    (x * 3.0 + x.square()).sum().backward()
    assert x.grad[0] == pytest.approx(3.0 + 4.0)


def test_backward_order_is_reverse_of_recording():
    with ComputationRecord() as rec:
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x.exp()
        z = (y * x).sum()
        order = [op.output for op in rec.ops]
        assert order[-1] is z
        z.backward()
    np.testing.assert_allclose(x.grad, np.exp([1.0, 2.0]) * (1 + np.array([1.0, 2.0])))


def test_record_discard_leaves_tensors_reusable():
    w = Tensor([[1.0], [2.0]], requires_grad=True)
    x = Tensor([[1.0, 1.0]])
    for _ in range(2):
        with ComputationRecord():
            (x @ w).sum().backward()
        np.testing.assert_array_equal(w.grad, [[1.0], [1.0]])
        w.grad = None


def test_no_grad_records_nothing():
    with ComputationRecord() as rec:
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            x.exp()
        assert len(rec) == 0


def test_concat_and_take_gradients():
    rng = np.random.default_rng(3)
    other = Tensor(rng.standard_normal((5, 2)))
    f = lambda v: concat([v, other], axis=1).take([0, 2, 2, 4]).square().sum()  # noqa: E731
    assert grad_check(f, rng.standard_normal((5, 3))) < 1e-4


def test_item_requires_single_value():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()


_vals = arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3))


@settings(max_examples=40, deadline=None)
@given(_vals)
def test_property_grad_shape_matches_data(a):
    x = Tensor(a, requires_grad=True)
    (x.sigmoid() * x).sum().backward()
    assert x.grad.shape == x.data.shape


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-2, 2)))
def test_property_composite_grad_check(a):
    f = lambda v: ((v * 0.7).exp() + v.square()).sigmoid().mean()  # noqa: E731
    assert grad_check(f, a) < 1e-4
