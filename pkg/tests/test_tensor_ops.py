import numpy as np
import pytest

from bninvert.core import ops
from bninvert.core.errors import GraphError, InvalidArgumentError, ShapeError
from bninvert.core.tensor import Tensor, default_dtype, precision

CASES = range(20)


def _weighted(out: Tensor, seed: int) -> Tensor:
    w = np.random.default_rng(seed + 1000).normal(size=out.shape)
    return ops.sum(out * Tensor(w, dtype=out.dtype))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


@pytest.mark.parametrize("seed", CASES)
def test_grad_add_broadcast(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda a, b: _weighted(a + b, seed), [r.normal(size=(3, 4)), r.normal(size=(1, 4))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_sub_mul(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda a, b: _weighted((a - b) * b, seed), [r.normal(size=(2, 3)), r.normal(size=(2, 3))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_div(grad_check, seed: int) -> None:
    r = _rng(seed)
    denom = r.uniform(0.5, 2.0, size=(4,)) * r.choice([-1.0, 1.0], size=(4,))
    grad_check(lambda a, b: _weighted(a / b, seed), [r.normal(size=(3, 4)), denom])


@pytest.mark.parametrize("seed", CASES)
def test_grad_unary(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda x: _weighted(ops.sqrt(x) + ops.square(x) - x, seed), [r.uniform(0.5, 2.0, size=(5,))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_relu(grad_check, seed: int) -> None:
    r = _rng(seed)
    x = r.normal(size=(4, 5))
    x[np.abs(x) < 1e-3] = 0.5
    grad_check(lambda t: _weighted(ops.relu(t), seed), [x])


@pytest.mark.parametrize("seed", CASES)
def test_grad_shape_ops(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda x: _weighted(ops.transpose(ops.reshape(x, (3, 4)), (1, 0)), seed), [r.normal(size=(2, 6))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_reductions(grad_check, seed: int) -> None:
    r = _rng(seed)

    def build(x: Tensor) -> Tensor:
        return _weighted(ops.sum(x, axis=1), seed) + _weighted(ops.mean(x, axis=(0, 2), keepdims=True), seed)

    grad_check(build, [r.normal(size=(2, 3, 4))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_batch_moments(grad_check, seed: int) -> None:
    r = _rng(seed)

    def build(x: Tensor) -> Tensor:
        mu, var = ops.batch_moments(x)
        return _weighted(mu, seed) + _weighted(var, seed + 1)

    grad_check(build, [r.normal(size=(3, 2, 2, 3))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_matmul(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda a, b: _weighted(ops.matmul(a, b), seed), [r.normal(size=(3, 4)), r.normal(size=(4, 2))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_conv2d(grad_check, seed: int) -> None:
    r = _rng(seed)
    stride, padding = (1, 1) if seed % 2 == 0 else (2, 1)
    grad_check(
        lambda x, w, b: _weighted(ops.conv2d(x, w, b, stride=stride, padding=padding), seed),
        [r.normal(size=(2, 2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=(3,))],
    )


@pytest.mark.parametrize("seed", CASES)
def test_grad_max_pool(grad_check, seed: int) -> None:
    r = _rng(seed)
    grad_check(lambda x: _weighted(ops.max_pool2d(x, 2), seed), [r.normal(size=(2, 2, 4, 4))])


@pytest.mark.parametrize("seed", CASES)
def test_grad_cross_entropy(grad_check, seed: int) -> None:
    r = _rng(seed)
    labels = r.integers(0, 5, size=6)
    grad_check(lambda logits: ops.cross_entropy(logits, labels), [r.normal(size=(6, 5))])


def _conv_loop(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for s in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += xp[s, c, i * stride + di, j * stride + dj] * w[o, c, di, dj]
                    out[s, o, i, j] = acc
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (3, 1)])
def test_conv2d_matches_loop_oracle(stride: int, padding: int) -> None:
    r = _rng(stride * 10 + padding)
    x = r.normal(size=(2, 3, 7, 7))
    w = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=(4,))
    with precision(np.float64):
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.data, _conv_loop(x, w, b, stride, padding), atol=1e-5)


def test_conv2d_rejects_non_integral_output() -> None:
    x = Tensor(np.zeros((1, 1, 6, 6)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, w, stride=2, padding=0)


def test_conv2d_rejects_channel_mismatch() -> None:
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_batch_moments_matches_loop_oracle() -> None:
    r = _rng(5)
    x = r.normal(size=(4, 3, 2, 5))
    with precision(np.float64):
        mu, var = ops.batch_moments(Tensor(x))
    for c in range(3):
        values = [x[n, c, i, j] for n in range(4) for i in range(2) for j in range(5)]
        m = sum(values) / len(values)
        v = sum((value - m) ** 2 for value in values) / len(values)
        assert abs(mu.data[c] - m) < 1e-5
        assert abs(var.data[c] - v) < 1e-5


def test_batch_moments_needs_two_values_per_channel() -> None:
    with pytest.raises(InvalidArgumentError):
        ops.batch_moments(Tensor(np.zeros((1, 3))))
    with pytest.raises(ShapeError):
        ops.batch_moments(Tensor(np.zeros(3)))


def test_max_pool_routes_ties_to_first_max() -> None:
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ops.sum(ops.max_pool2d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_cross_entropy_uniform_logits() -> None:
    loss = ops.cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert loss.item() == pytest.approx(np.log(4.0), rel=1e-6)


def test_gather_rejects_out_of_range_label() -> None:
    with pytest.raises(InvalidArgumentError):
        ops.gather(Tensor(np.zeros((2, 3))), [0, 3])


def test_backward_twice_raises_graph_error() -> None:
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ops.sum(ops.square(x))
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    with pytest.raises(GraphError):
        loss.backward()


def test_backward_accumulates_into_leaves() -> None:
    x = Tensor(np.array([3.0]), requires_grad=True)
    ops.sum(x * 2.0).backward()
    ops.sum(x * 2.0).backward()
    np.testing.assert_allclose(x.grad, [4.0])
    x.zero_grad()
    np.testing.assert_allclose(x.grad, [0.0])


def test_backward_needs_scalar_and_grad_inputs() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        ops.square(x).backward()
    with pytest.raises(GraphError):
        ops.sum(Tensor(np.ones(3))).backward()


def test_shared_subexpression_gets_both_paths() -> None:
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    ops.sum(y + y).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_reshape_rejects_bad_shape() -> None:
    with pytest.raises(ShapeError):
        ops.reshape(Tensor(np.zeros(6)), (4, 2))


def test_precision_scope() -> None:
    assert default_dtype() == np.float32
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
    with pytest.raises(InvalidArgumentError):
        with precision(np.int32):
            pass


@pytest.mark.parametrize("seed", range(4))
def test_grad_conv2d_wide_stride(grad_check, seed: int) -> None:
    r = _rng(seed + 200)
    grad_check(
        lambda x, w, b: _weighted(ops.conv2d(x, w, b, stride=3, padding=1), seed),
        [r.normal(size=(2, 2, 7, 7)), r.normal(size=(2, 2, 3, 3)), r.normal(size=(2,))],
    )
