import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecmsa import ops
from ecmsa.errors import NumericError, ShapeError, UsageError, ValidationError
from ecmsa.gradcheck import check_tensors, finite_diff_check, full_suite, layer_suite
from ecmsa.serialize import (checkpoint_bytes, load_checkpoint, load_tensor, save_checkpoint,
                             save_tensor, tensor_from_bytes, tensor_to_bytes)
from ecmsa.tensor import Tensor, no_grad


def T(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def projected(y_fn, shape, seed=0):
    w = Tensor(np.random.default_rng(seed).normal(size=shape))
    return lambda: ops.sum(ops.mul(y_fn(), w))


# -- matmul ------------------------------------------------------------------------

def test_matmul_identity():
    x = np.random.default_rng(1).normal(size=(3, 3))
    np.testing.assert_array_equal(ops.matmul(T(np.eye(3)), T(x)).data, x)


def test_matmul_hand_example():
    out = ops.matmul(T([[1, 2], [3, 4]]), T([[1], [1]]))
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_gradients_match_finite_differences():
    r = np.random.default_rng(2)
    a, b = T(r.normal(size=(5, 7))), T(r.normal(size=(7, 3)))
    f = projected(lambda: ops.matmul(a, b), (5, 3))
    assert max(check_tensors(f, [a, b])) <= 1e-6


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


# -- conv2d --------------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(3).normal(size=(1, 5, 5))
    out = ops.conv2d(T(x), T(np.ones((1, 1, 1, 1))), T([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_on_constant():
    out = ops.conv2d(T(np.full((1, 5, 5), 2.5)), T(np.ones((1, 1, 3, 3))), T([0.0]))
    assert out.shape == (1, 5, 5)
    assert out.data[0, 2, 2] == 9 * 2.5
    assert out.data[0, 0, 0] == 4 * 2.5  # zero padding at the corner


def test_conv_gradients_match_finite_differences():
    r = np.random.default_rng(4)
    x, w, b = T(r.normal(size=(2, 6, 6))), T(r.normal(size=(3, 2, 3, 3))), T(r.normal(size=3))
    f = projected(lambda: ops.conv2d(x, w, b), (3, 6, 6))
    assert max(check_tensors(f, [x, w, b])) <= 1e-6


@pytest.mark.parametrize("padding", [0, 1, 2])
def test_conv_padding_variants_gradcheck(padding):
    r = np.random.default_rng(padding)
    x, w = T(r.normal(size=(2, 2, 6, 6))), T(r.normal(size=(3, 2, 3, 3)))
    shape = ops.conv2d(x, w, padding=padding).shape
    f = projected(lambda: ops.conv2d(x, w, padding=padding), shape)
    assert max(check_tensors(f, [x, w])) <= 1e-6


def test_conv_batched_matches_per_sample():
    r = np.random.default_rng(5)
    x, w, b = r.normal(size=(3, 2, 6, 6)), r.normal(size=(4, 2, 3, 3)), r.normal(size=4)
    batched = ops.conv2d(T(x), T(w), T(b)).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], ops.conv2d(T(x[i]), T(w), T(b)).data, rtol=0, atol=1e-12)


def test_conv_matches_direct_loop():
    r = np.random.default_rng(6)
    x, w = r.normal(size=(2, 5, 4)), r.normal(size=(3, 2, 3, 3))
    xp = np.zeros((2, 7, 6))
    xp[:, 1:6, 1:5] = x
    ref = np.zeros((3, 5, 4))
    for o in range(3):
        for i in range(5):
            for j in range(4):
                ref[o, i, j] = np.sum(xp[:, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(ops.conv2d(T(x), T(w)).data, ref, atol=1e-12)


@pytest.mark.parametrize("x_shape,w_shape", [((3, 4, 4), (2, 2, 3, 3)), ((2, 4, 4), (2, 2, 2, 2))])
def test_conv_shape_errors(x_shape, w_shape):
    with pytest.raises(ShapeError):
        ops.conv2d(T(np.ones(x_shape)), T(np.ones(w_shape)))


# -- softmax -------------------------------------------------------------------------

def test_softmax_uniform_and_overflow():
    np.testing.assert_allclose(ops.softmax_rows(T([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_array_equal(ops.softmax_rows(T([[1000.0, 1000.0]])).data, [[0.5, 0.5]])


def test_softmax_gradcheck():
    s = T(np.random.default_rng(7).normal(size=(4, 5)))
    assert max(check_tensors(projected(lambda: ops.softmax_rows(s), (4, 5)), [s])) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_softmax_rows_sum_to_one_and_permute(n, d, seed):
    r = np.random.default_rng(seed)
    x = r.normal(scale=10, size=(n, d))
    s = ops.softmax_rows(T(x, False)).data
    assert np.all(s >= 0)
    assert np.max(np.abs(s.sum(axis=1) - 1)) <= 1e-12
    perm = r.permutation(n)
    np.testing.assert_array_equal(ops.softmax_rows(T(x[perm], False)).data, s[perm])


# -- elementwise ---------------------------------------------------------------------

def test_sigmoid_zero():
    assert ops.sigmoid(T([0.0])).data[0] == 0.5


def test_sigmoid_extremes_are_finite():
    out = ops.sigmoid(T([-800.0, 800.0])).data
    assert out[0] >= 0 and out[1] == 1.0 and np.isfinite(out).all()


def test_channel_broadcast():
    out = ops.mul_channel(T(np.ones((2, 2, 2))), T([2.0, 3.0]))
    assert np.all(out.data[0] == 2) and np.all(out.data[1] == 3)


def test_add_gradient_is_one():
    a, b = T(np.random.default_rng(8).normal(size=(2, 3))), T(np.zeros((2, 3)))
    ops.sum(ops.add(a, b)).backward()
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
    assert finite_diff_check(lambda x: ops.sum(ops.add(x, b)), a) <= 1e-9


@pytest.mark.parametrize("name", ["add", "sub", "mul"])
def test_binary_ops_refuse_general_broadcast(name):
    with pytest.raises(ShapeError):
        getattr(ops, name)(T(np.ones((2, 3))), T(np.ones((3,))))


def test_mul_channel_rejects_wrong_channel_count():
    with pytest.raises(ShapeError):
        ops.mul_channel(T(np.ones((2, 2, 2))), T([1.0, 2.0, 3.0]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_forward_is_an_error():
    with pytest.raises(NumericError):
        ops.scale(T([1e308]), 1e10)


# -- pooling / resampling --------------------------------------------------------------

def test_global_avg_pool():
    np.testing.assert_array_equal(ops.pool_avg_global(T(np.full((2, 3, 3), 1.5))).data, [1.5, 1.5])
    assert ops.pool_avg_global(T([[[1.0, 2.0], [3.0, 4.0]]])).data[0] == 2.5


def test_global_avg_pool_gradient():
    x = T(np.random.default_rng(9).normal(size=(2, 3, 4)))
    ops.sum(ops.pool_avg_global(x)).backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1 / 12), rtol=0, atol=1e-15)


def test_maxpool_and_upsample_examples():
    assert ops.pool_max_2x2(T([[[1.0, 2.0], [3.0, 4.0]]])).data.item() == 4.0
    np.testing.assert_array_equal(ops.upsample_nearest_2x(T([[[5.0]]])).data, [[[5, 5], [5, 5]]])


def test_maxpool_gradient_routes_to_argmax():
    x = T([[[1.0, 2.0], [3.0, 4.0]]])
    ops.sum(ops.pool_max_2x2(x)).backward()
    np.testing.assert_array_equal(x.grad, [[[0, 0], [0, 1]]])


def test_maxpool_odd_extent_rejected():
    with pytest.raises(ShapeError):
        ops.pool_max_2x2(T(np.ones((1, 3, 4))))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_upsample_then_block_average_is_identity(c, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(c, h, w))
    up = ops.upsample_nearest_2x(T(x, False)).data
    blocks = up.reshape(c, h, 2, w, 2).mean(axis=(2, 4))
    np.testing.assert_array_equal(blocks, x)


# -- BCE ---------------------------------------------------------------------------------

def test_bce_examples():
    assert ops.bce_loss(T(np.ones((2, 2))), T(np.ones((2, 2)))).item() == pytest.approx(1e-7, rel=1e-3)
    assert ops.bce_loss(T(np.full((3, 3), 0.5)), T(np.eye(3))).item() == pytest.approx(np.log(2), abs=1e-15)


def test_bce_gradcheck():
    r = np.random.default_rng(10)
    p = T(r.uniform(0.05, 0.95, (4, 4)))
    y = T((r.random((4, 4)) < 0.5).astype(float), False)
    assert finite_diff_check(lambda x: ops.bce_loss(x, y), p) <= 1e-6


def test_bce_rejects_soft_targets():
    with pytest.raises(ValidationError):
        ops.bce_loss(T(np.full((2,), 0.5)), T([0.0, 0.3]))


# -- backward ----------------------------------------------------------------------------

def test_backward_square_sum():
    x = T(np.random.default_rng(11).normal(size=(3, 4)))
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=0, atol=1e-15)


def test_disconnected_parameter_keeps_zero_grad():
    x, unused = T([1.0, 2.0]), T([3.0])
    loss = ops.sum(x)
    loss.backward()
    assert unused.grad is None or not np.any(unused.grad)


def test_backward_accumulates_until_zeroed():
    x = T([1.0, -2.0])
    ops.sum(ops.scale(x, 3.0)).backward()
    ops.sum(ops.scale(x, 3.0)).backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    ops.sum(ops.scale(x, 3.0)).backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_backward_requires_scalar():
    with pytest.raises(UsageError):
        ops.scale(T([1.0, 2.0]), 2.0).backward()


def test_no_grad_builds_no_tape():
    x = T([1.0])
    with no_grad():
        y = ops.sum(ops.scale(x, 2.0))
    with pytest.raises(UsageError):
        y.backward()


def test_chained_conv_relu_bce_composite():
    r = np.random.default_rng(12)
    x, w, b = T(r.normal(size=(2, 6, 6))), T(r.normal(size=(1, 2, 3, 3))), T([0.1])
    y = Tensor((r.random((1, 6, 6)) < 0.4).astype(float))

    def f():
        return ops.bce_loss(ops.sigmoid(ops.relu(ops.conv2d(x, w, b))), y)
    assert max(check_tensors(f, [x, w, b])) <= 1e-5


def test_whole_layer_suite_passes():
    results = layer_suite(seeds=(3, 4, 5))
    bad = [(r.name, r.error) for r in results if not r.ok]
    assert not bad


# -- determinism and serialization ---------------------------------------------------------

def test_forward_is_bitwise_repeatable():
    r = np.random.default_rng(13)
    x, w, b = r.normal(size=(2, 3, 8, 8)), r.normal(size=(4, 3, 3, 3)), r.normal(size=4)

    def run():
        y = ops.conv2d(T(x, False), T(w, False), T(b, False))
        y = ops.pool_max_2x2(ops.relu(y))
        return ops.softmax_rows(ops.reshape(y, (2, 4 * 16))).data
    assert run().tobytes() == run().tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.integers(0, 2 ** 32 - 1))
def test_tensor_bytes_round_trip(shape, seed):
    a = np.random.default_rng(seed).normal(size=tuple(shape))
    b = tensor_from_bytes(tensor_to_bytes(a))
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_tensor_file_layout(tmp_path):
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    save_tensor(tmp_path / "a.tnsr", a)
    raw = (tmp_path / "a.tnsr").read_bytes()
    assert raw[:4] == b"TNSR"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:16], "little") == 2 and int.from_bytes(raw[16:24], "little") == 3
    assert np.frombuffer(raw[24:], "<f8").tolist() == list(range(6))
    np.testing.assert_array_equal(load_tensor(tmp_path / "a.tnsr"), a)


def test_checkpoint_round_trip(tmp_path):
    tensors = {"b/w": np.ones((2, 2)), "a/b": np.arange(3.0)}
    save_checkpoint(tmp_path / "c.ckpt", tensors, {"depth": 2})
    loaded, config = load_checkpoint(tmp_path / "c.ckpt")
    assert config == {"depth": 2}
    assert set(loaded) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(loaded[k], tensors[k])
    assert checkpoint_bytes(tensors, {"depth": 2}) == (tmp_path / "c.ckpt").read_bytes()


def test_full_gradcheck_suite_in_time():
    import time
    t0 = time.perf_counter()
    results = full_suite(0)
    assert all(r.ok for r in results), [(r.name, r.error) for r in results if not r.ok]
    assert time.perf_counter() - t0 < 120
