import numpy as np
import pytest

from suitein import tensor as T
from suitein.errors import (
    DegenerateInputError,
    DomainError,
    GraphError,
    ShapeError,
)
from tests.gradcheck import gradcheck, leaf


def test_matmul_identity():
    a = T.Tensor(np.eye(2))
    b = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(a, b).data, b.data)


def test_matmul_selector_row():
    a = T.Tensor([[1.0, 0.0], [0.0, 0.0]])
    b = T.Tensor([[5.0], [7.0]])
    assert np.array_equal(T.matmul(a, b).data, [[5.0], [0.0]])


def test_matmul_shape_error_names_both_shapes():
    a = T.Tensor(np.zeros((3, 4)))
    b = T.Tensor(np.zeros((3, 2)))
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        T.matmul(a, b)


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4, 2)
    err = gradcheck(lambda: T.reduce_sum(T.matmul(a, b)), [a, b])
    assert err < 1e-4


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(1)
    x = T.Tensor(rng.standard_normal((2, 3, 7)))
    k = T.Tensor(np.array([0.0, 1.0, 0.0]).reshape(1, 2, 1, 3) * 0)
    kd = np.zeros((2, 2, 1, 3))
    kd[0, 0, 0, 1] = 1.0
    kd[1, 1, 0, 1] = 1.0
    out = T.conv2d(x, T.Tensor(kd))
    assert np.allclose(out.data, x.data)


def test_conv2d_box_filter_on_constant():
    x = T.Tensor(np.ones((1, 2, 5)))
    k = T.Tensor(np.ones((1, 1, 1, 3)))
    out = T.conv2d(x, k)
    assert np.allclose(out.data, [[[2, 3, 3, 3, 2], [2, 3, 3, 3, 2]]])


def test_conv2d_channel_mismatch():
    x = T.Tensor(np.zeros((2, 3, 5)))
    k = T.Tensor(np.zeros((4, 3, 1, 3)))
    with pytest.raises(ShapeError, match="channel mismatch"):
        T.conv2d(x, k)


def test_conv2d_gradcheck():
    rng = np.random.default_rng(2)
    x = leaf(rng, 2, 3, 4, 6)  # batched
    k = leaf(rng, 5, 3, 1, 3)
    err = gradcheck(lambda: T.reduce_sum(T.mul(T.conv2d(x, k), T.conv2d(x, k))), [x, k])
    assert err < 1e-4


def test_conv2d_single_window_matches_batched():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 4, 6)).astype(np.float32)
    k = T.Tensor(rng.standard_normal((2, 3, 1, 3)))
    single = T.conv2d(T.Tensor(x), k).data
    batched = T.conv2d(T.Tensor(x[None]), k).data[0]
    assert np.array_equal(single, batched)


def test_maxpool_sorted_input():
    out = T.maxpool_temporal(T.Tensor([[1.0, 2.0, 3.0, 4.0]]))
    assert np.array_equal(out.data, [[2.0, 4.0]])


def test_maxpool_tie_routes_gradient_to_first():
    x = T.Tensor(np.ones((1, 4)), requires_grad=True, dtype=np.float64)
    out = T.maxpool_temporal(x)
    T.backward(T.reduce_sum(out))
    assert np.array_equal(x.grad, [[1.0, 0.0, 1.0, 0.0]])


def test_maxpool_odd_width_drops_tail():
    x = T.Tensor([[3.0, 1.0, 5.0, 2.0, 9.0]], requires_grad=True, dtype=np.float64)
    out = T.maxpool_temporal(x)
    assert np.array_equal(out.data, [[3.0, 5.0]])
    T.backward(T.reduce_sum(out))
    assert x.grad[0, 4] == 0.0


def test_maxpool_gradcheck_without_ties():
    rng = np.random.default_rng(4)
    base = rng.permutation(2 * 3 * 8).reshape(2, 3, 8).astype(np.float64)
    x = T.Tensor(base, requires_grad=True, dtype=np.float64)
    err = gradcheck(lambda: T.reduce_sum(T.mul(T.maxpool_temporal(x), x.mean())), [x], h=1e-4)
    assert err < 1e-4


def test_maxpool_too_narrow():
    with pytest.raises(DegenerateInputError):
        T.maxpool_temporal(T.Tensor([[1.0]]))


def test_relu_definition():
    out = T.relu(T.Tensor([-1.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 2.0])


def test_exp_log_identity_points():
    assert T.exp(T.Tensor(0.0)).item() == 1.0
    assert T.log(T.Tensor(1.0)).item() == 0.0


def test_log_domain_error():
    with pytest.raises(DomainError, match="positive"):
        T.log(T.Tensor([1.0, 0.0]))


def test_composite_exp_log_gradcheck():
    rng = np.random.default_rng(5)
    x = T.Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True, dtype=np.float64)
    err = gradcheck(lambda: T.reduce_sum(T.mul(T.exp(T.log(x)), x)), [x])
    assert err < 1e-4


def test_elementwise_binary_gradchecks():
    rng = np.random.default_rng(6)
    a = leaf(rng, 2, 3)
    b = T.Tensor(rng.uniform(0.5, 2.0, (2, 3)), requires_grad=True, dtype=np.float64)
    for build in (lambda: T.reduce_sum(T.add(a, b)),
                  lambda: T.reduce_sum(T.sub(a, b)),
                  lambda: T.reduce_sum(T.mul(a, b)),
                  lambda: T.reduce_sum(T.div(a, b)),
                  lambda: T.reduce_sum(T.scale(a, 2.5)),
                  lambda: T.reduce_sum(T.shift(a, -1.25))):
        assert gradcheck(build, [a, b]) < 1e-4


def test_broadcast_add_bias_gradcheck():
    rng = np.random.default_rng(7)
    x = leaf(rng, 4, 3)
    bias = leaf(rng, 3)
    err = gradcheck(lambda: T.reduce_sum(T.mul(T.add(x, bias), T.add(x, bias))), [x, bias])
    assert err < 1e-4


def test_sqrt_clamp_gradcheck():
    rng = np.random.default_rng(8)
    x = T.Tensor(rng.uniform(0.5, 2.0, 5), requires_grad=True, dtype=np.float64)
    err = gradcheck(lambda: T.reduce_sum(T.sqrt(T.clamp_min(x, 0.7))), [x])
    assert err < 1e-4


def test_cosine_self_similarity():
    a = T.Tensor([1.0, 2.0, 3.0])
    assert T.cosine_similarity(a, a).item() == pytest.approx(1.0, abs=1e-6)


def test_cosine_orthogonal():
    assert T.cosine_similarity(T.Tensor([1.0, 0.0]), T.Tensor([0.0, 1.0])).item() == 0.0


def test_cosine_antiparallel():
    out = T.cosine_similarity(T.Tensor([1.0, 1.0]), T.Tensor([-1.0, -1.0]))
    assert out.item() == pytest.approx(-1.0, abs=1e-6)


def test_cosine_zero_norm_is_defined_and_bounded():
    a = T.Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    b = T.Tensor([1.0, 2.0, 2.0], dtype=np.float64)
    out = T.cosine_similarity(a, b)
    assert np.isfinite(out.item())
    assert abs(out.item()) <= 1.0 + 1e-6
    T.backward(out)
    assert np.all(np.isfinite(a.grad))


def test_cosine_range_property():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = T.Tensor(rng.standard_normal(8) * rng.uniform(1e-6, 1e3))
        b = T.Tensor(rng.standard_normal(8) * rng.uniform(1e-6, 1e3))
        assert abs(T.cosine_similarity(a, b).item()) <= 1.0 + 1e-6


def test_cosine_batched_rows():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((4, 6))
    b = rng.standard_normal((4, 6))
    got = T.cosine_similarity(T.Tensor(a, dtype=np.float64), T.Tensor(b, dtype=np.float64))
    want = [float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))
            for x, y in zip(a, b)]
    assert np.allclose(got.data, want, atol=1e-12)


def test_cosine_gradcheck():
    rng = np.random.default_rng(11)
    a = leaf(rng, 6)
    b = leaf(rng, 6)
    err = gradcheck(lambda: T.cosine_similarity(a, b), [a, b], h=1e-5)
    assert err < 1e-4


def test_reduce_mean_arithmetic():
    assert T.reduce_mean(T.Tensor([2.0, 4.0, 6.0])).item() == 4.0


def test_reduce_sum_counting():
    out = T.reduce_sum(T.Tensor(np.ones((3, 2))), axis=0)
    assert np.array_equal(out.data, [3.0, 3.0])


def test_reduce_mean_gradient_is_inverse_count():
    x = T.Tensor(np.arange(6, dtype=np.float64).reshape(2, 3),
                 requires_grad=True, dtype=np.float64)
    T.backward(T.reduce_mean(x))
    assert np.allclose(x.grad, np.full((2, 3), 1.0 / 6.0))
    err = gradcheck(lambda: T.reduce_mean(T.mul(x, x)), [x])
    assert err < 1e-4


def test_reduce_empty_axis():
    with pytest.raises(DegenerateInputError):
        T.reduce_mean(T.Tensor(np.zeros((0, 3))), axis=0)


def test_reduce_axis_out_of_range():
    with pytest.raises(ShapeError):
        T.reduce_sum(T.Tensor(np.zeros((2, 2))), axis=5)


def test_shape_ops_gradcheck():
    rng = np.random.default_rng(12)
    x = leaf(rng, 2, 3, 4)
    checks = [
        lambda: T.reduce_sum(T.mul(T.reshape(x, (6, 4)), T.reshape(x, (6, 4)))),
        lambda: T.reduce_sum(T.mul(T.transpose(x, (2, 0, 1)), T.transpose(x, (2, 0, 1)))),
        lambda: T.reduce_sum(T.mul(T.narrow(x, 1, 1, 2), T.narrow(x, 1, 1, 2))),
    ]
    for build in checks:
        assert gradcheck(build, [x]) < 1e-4


def test_backward_linear_case():
    x = T.Tensor([1.0, 2.0, 3.0], dtype=np.float64)
    w = T.Tensor([0.5, -1.0, 2.0], requires_grad=True, dtype=np.float64)
    T.backward(T.reduce_sum(T.mul(w, x)))
    assert np.array_equal(w.grad, x.data)


def test_backward_quadratic():
    w = T.Tensor(3.0, requires_grad=True, dtype=np.float64)
    T.backward(T.mul(w, w))
    assert w.grad == pytest.approx(6.0)


def test_backward_requires_scalar_root():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError, match="scalar"):
        T.backward(T.mul(x, x))


def test_fanout_accumulation_matches_merged_expression():
    rng = np.random.default_rng(13)
    base = rng.standard_normal(5)
    a = rng.standard_normal(5)
    b = rng.standard_normal(5)

    x1 = T.Tensor(base, requires_grad=True, dtype=np.float64)
    two_branches = T.add(T.reduce_sum(T.mul(x1, T.Tensor(a, dtype=np.float64))),
                         T.reduce_sum(T.mul(x1, T.Tensor(b, dtype=np.float64))))
    T.backward(two_branches)

    x2 = T.Tensor(base, requires_grad=True, dtype=np.float64)
    merged = T.reduce_sum(T.mul(x2, T.Tensor(a + b, dtype=np.float64)))
    T.backward(merged)
    assert np.allclose(x1.grad, x2.grad, atol=1e-12)


def test_graph_is_topologically_ordered_and_acyclic():
    x = T.Tensor(np.ones(3), requires_grad=True)
    y = T.mul(x, x)
    z = T.add(y, x)
    loss = T.reduce_sum(z)
    order = T.graph_nodes(loss)
    pos = {id(n): i for i, n in enumerate(order)}
    assert len(pos) == len(order)  # each node appears exactly once
    for node in order:
        for parent in node._parents:
            assert pos[id(parent)] < pos[id(node)]


def test_backward_populates_all_leaf_grads():
    rng = np.random.default_rng(14)
    leaves = [T.Tensor(rng.standard_normal(3), requires_grad=True) for _ in range(3)]
    loss = T.reduce_sum(T.add(T.mul(leaves[0], leaves[1]), leaves[2]))
    T.backward(loss)
    assert all(l.grad is not None for l in leaves)


def test_forward_determinism():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((8, 8)).astype(np.float32)
    k = rng.standard_normal((4, 8, 1, 3)).astype(np.float32)
    a = T.conv2d(T.Tensor(x.reshape(8, 1, 8) * 1.0), T.Tensor(k[:, :1]))
    b = T.conv2d(T.Tensor(x.reshape(8, 1, 8) * 1.0), T.Tensor(k[:, :1]))
    assert np.array_equal(a.data, b.data)
    m1 = T.matmul(T.Tensor(x), T.Tensor(x))
    m2 = T.matmul(T.Tensor(x), T.Tensor(x))
    assert np.array_equal(m1.data, m2.data)


def test_default_dtype_is_float32():
    assert T.Tensor([1.0, 2.0]).dtype == np.float32
    assert T.Tensor([1.0], dtype=np.float64).dtype == np.float64


def test_no_grad_suppresses_graph():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_values_finite_after_forward_ops():
    rng = np.random.default_rng(16)
    x = T.Tensor(rng.standard_normal((4, 4)))
    for out in (T.relu(x), T.exp(x), T.matmul(x, x), T.maxpool_temporal(x),
                T.reduce_mean(x, axis=1)):
        assert np.all(np.isfinite(out.data))
