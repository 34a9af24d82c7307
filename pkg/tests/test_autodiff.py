import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tograsp.autodiff as ad
from tograsp.autodiff import Tape, Tensor, grad_check
from tograsp.errors import ConfigurationError, DimensionError, TrainingError

SEEDS = range(20)


def rand(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def projected(op, rng, out_shape):
    """Scalarize ``op`` with a fixed random projection so every output coordinate matters."""
    r = Tensor(rng.uniform(-1, 1, size=out_shape))
    return lambda t: ad.sum_all(ad.mul(op(t), r))


# ------------------------------------------------------------------ matmul


def test_matmul_identity_and_dot():
    eye = Tensor([[1, 0], [0, 1]])
    b = Tensor([[3, 4], [5, 6]])
    np.testing.assert_array_equal(ad.matmul(eye, b).data, [[3, 4], [5, 6]])
    np.testing.assert_array_equal(ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])


def test_matmul_shape_error_mentions_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradcheck(seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, 4, 5), rand(rng, 5, 3)
    assert grad_check(projected(lambda t: ad.matmul(t, b), rng, (4, 3)), a) <= 1e-3
    assert grad_check(projected(lambda t: ad.matmul(a, t), rng, (4, 3)), b) <= 1e-3


# ------------------------------------------------------------- convolution


def test_conv2d_trivial_cases():
    x = Tensor(np.arange(12).reshape(2, 2, 3))
    w = Tensor(np.ones((1, 1, 3, 1)))
    np.testing.assert_array_equal(ad.conv2d(x, w).data[..., 0], x.data.sum(axis=2))
    ones = Tensor(np.ones((3, 3, 1)))
    np.testing.assert_array_equal(ad.conv2d(ones, Tensor(np.ones((3, 3, 1, 1)))).data, [[[9]]])


def test_conv2d_bias_per_channel():
    x = Tensor(np.zeros((4, 4, 2)))
    out = ad.conv2d(x, Tensor(np.zeros((3, 3, 2, 3))), Tensor([1, 2, 3]), padding=1)
    assert out.shape == (4, 4, 3)
    np.testing.assert_array_equal(out.data[2, 1], [1, 2, 3])


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(7, 7, 2)).astype(np.float32)
    w = rng.normal(size=(3, 3, 2, 4)).astype(np.float32)
    got = ad.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    ref = np.zeros((4, 4, 4))
    for i in range(4):
        for j in range(4):
            patch = xp[2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            ref[i, j] = np.einsum("abc,abcd->d", patch, w)
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)


def test_conv2d_non_integral_output():
    with pytest.raises(ConfigurationError):
        ad.conv2d(Tensor(np.zeros((4, 4, 1))), Tensor(np.zeros((3, 3, 1, 1))), stride=2)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1), (1, 1, 0), (2, 2, 0)])
def test_conv2d_gradcheck(seed, k, stride, pad):
    rng = np.random.default_rng(seed)
    x, w, b = rand(rng, 6, 6, 2), rand(rng, k, k, 2, 3), rand(rng, 3)
    ho = (6 + 2 * pad - k) // stride + 1
    f = lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride=stride, padding=pad)
    shape = (ho, ho, 3)
    assert grad_check(projected(lambda t: f(t, w, b), rng, shape), x) <= 1e-3
    assert grad_check(projected(lambda t: f(x, t, b), rng, shape), w) <= 1e-3
    assert grad_check(projected(lambda t: f(x, w, t), rng, shape), b) <= 1e-3


def test_conv_transpose_single_pixel_equals_kernel():
    w = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1, 1)
    out = ad.conv_transpose2d(Tensor([[[2.0]]]), Tensor(w), stride=2)
    np.testing.assert_array_equal(out.data[..., 0], 2 * w[..., 0, 0])


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("k,stride,pad", [(2, 2, 0), (3, 1, 1), (5, 1, 2), (4, 2, 1)])
def test_conv_transpose_adjoint_identity(seed, k, stride, pad):
    rng = np.random.default_rng(seed)
    H = 8
    ho = (H + 2 * pad - k) // stride + 1
    with ad.default_dtype(np.float64):
        x = rand(rng, H, H, 3)
        w = rand(rng, k, k, 3, 2)
        y = rand(rng, ho, ho, 2)
        lhs = float((ad.conv2d(x, w, stride=stride, padding=pad).data * y.data).sum())
        rhs = float((x.data * ad.conv_transpose2d(y, w, stride=stride, padding=pad).data).sum())
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_transpose_adjoint_identity_f32(seed):
    rng = np.random.default_rng(seed)
    x, w, y = rand(rng, 8, 8, 3), rand(rng, 2, 2, 3, 2), rand(rng, 4, 4, 2)
    lhs = float((ad.conv2d(x, w, stride=2).data.astype(np.float64) * y.data).sum())
    rhs = float((x.data.astype(np.float64) * ad.conv_transpose2d(y, w, stride=2).data).sum())
    assert abs(lhs - rhs) / max(1e-6, abs(lhs) + abs(rhs)) <= 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_transpose_gradcheck(seed):
    rng = np.random.default_rng(seed)
    y, w, b = rand(rng, 3, 3, 2), rand(rng, 2, 2, 4, 2), rand(rng, 4)
    f = lambda yy, ww, bb: ad.conv_transpose2d(yy, ww, bb, stride=2)
    assert grad_check(projected(lambda t: f(t, w, b), rng, (6, 6, 4)), y) <= 1e-3
    assert grad_check(projected(lambda t: f(y, t, b), rng, (6, 6, 4)), w) <= 1e-3
    assert grad_check(projected(lambda t: f(y, w, t), rng, (6, 6, 4)), b) <= 1e-3


def test_conv_transpose_channel_mismatch():
    with pytest.raises(DimensionError):
        ad.conv_transpose2d(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros((2, 2, 4, 2))), stride=2)


# ------------------------------------------------------------- elementwise


def test_hadamard_with_ones_is_identity():
    rng = np.random.default_rng(0)
    x = rand(rng, 3, 3, 4)
    np.testing.assert_array_equal(ad.mul(x, Tensor(np.ones(4))).data, x.data)


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor([0.0])).item() == 0.5


def test_broadcast_rejects_mismatch():
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros(3)))


@pytest.mark.parametrize("seed", SEEDS)
def test_elementwise_gradcheck(seed):
    rng = np.random.default_rng(seed)
    a, b, v = rand(rng, 3, 3, 4), rand(rng, 3, 3, 4), rand(rng, 4)
    s = rand(rng, 1)
    assert grad_check(projected(lambda t: ad.add(t, b), rng, a.shape), a) <= 1e-3
    assert grad_check(projected(lambda t: ad.mul(t, b), rng, a.shape), a) <= 1e-3
    assert grad_check(projected(lambda t: ad.mul(a, t), rng, a.shape), v) <= 1e-3
    assert grad_check(projected(lambda t: ad.mul(t, a), rng, a.shape), s) <= 1e-3
    assert grad_check(projected(ad.sigmoid, rng, a.shape), a) <= 1e-3
    # keep relu inputs away from the kink by more than the FD step
    away = Tensor(np.sign(a.data) * (0.05 + np.abs(a.data)))
    assert grad_check(projected(ad.relu, rng, a.shape), away) <= 1e-3


# ----------------------------------------------------------------- softmax


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(ad.softmax(Tensor(np.zeros((1, 4)))).data, [[0.25] * 4])
    out = ad.softmax(Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 7))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one(seed, n, m):
    x = np.random.default_rng(seed).normal(scale=5, size=(n, m))
    s = ad.softmax(Tensor(x), axis=1).data
    assert (s > 0).all()
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-5)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("axis", [0, 1])
def test_softmax_gradcheck(seed, axis):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 5, lo=-2, hi=2)
    assert grad_check(projected(lambda t: ad.softmax(t, axis=axis), rng, (3, 5)), x) <= 1e-3


# ------------------------------------------------------------------ linear


def test_linear_examples():
    x = Tensor([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(ad.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    out = ad.linear(Tensor([2.0, 3.0]), Tensor([[1.0], [1.0]]), Tensor([1.0]))
    np.testing.assert_array_equal(out.data, [6.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rand(rng, 4, 5), rand(rng, 5, 3), rand(rng, 3)
    assert grad_check(projected(lambda t: ad.linear(t, w, b), rng, (4, 3)), x) <= 1e-3
    assert grad_check(projected(lambda t: ad.linear(x, t, b), rng, (4, 3)), w) <= 1e-3
    assert grad_check(projected(lambda t: ad.linear(x, w, t), rng, (4, 3)), b) <= 1e-3


# ---------------------------------------------------------------- upsample


def test_upsample_examples():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None])
    np.testing.assert_array_equal(ad.upsample_nearest(x, 1).data, x.data)
    up = ad.upsample_nearest(x, 2).data[..., 0]
    np.testing.assert_array_equal(up, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    with pytest.raises(ConfigurationError):
        ad.upsample_nearest(x, 0)


@pytest.mark.parametrize("factor", [1, 2, 3])
def test_upsample_adjoint_sum(factor):
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2, 2)), requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.sum_all(ad.upsample_nearest(x, factor)))
    np.testing.assert_array_equal(x.grad, np.full(x.shape, factor**2))


# ------------------------------------------------------------------ concat


def test_concat_examples_and_slices():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 2, 3), rand(rng, 2, 5)
    one = ad.concat([a], axis=1)
    np.testing.assert_array_equal(one.data, a.data)
    out = ad.concat([a, b], axis=1)
    assert out.shape == (2, 8)
    a.requires_grad = b.requires_grad = True
    r = rng.normal(size=(2, 8)).astype(np.float32)
    with Tape() as tape:
        tape.backward(ad.sum_all(ad.mul(ad.concat([a, b], axis=1), Tensor(r))))
    np.testing.assert_array_equal(a.grad, r[:, :3])
    np.testing.assert_array_equal(b.grad, r[:, 3:])
    with pytest.raises(DimensionError):
        ad.concat([a, rand(rng, 3, 5)], axis=1)


# --------------------------------------------------------------- embedding


def test_embedding_lookup():
    table = Tensor(np.arange(12).reshape(4, 3), requires_grad=True)
    np.testing.assert_array_equal(ad.embedding_lookup(table, [0]).data, [[0, 1, 2]])
    with Tape() as tape:
        tape.backward(ad.sum_all(ad.embedding_lookup(table, [2, 2, 1])))
    np.testing.assert_array_equal(table.grad[:, 0], [0, 1, 2, 0])
    with pytest.raises(IndexError):
        ad.embedding_lookup(table, [4])


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_gradcheck(seed):
    rng = np.random.default_rng(seed)
    table = rand(rng, 6, 4)
    ids = rng.integers(0, 6, size=5)
    assert grad_check(projected(lambda t: ad.embedding_lookup(t, ids), rng, (5, 4)), table) <= 1e-3


# --------------------------------------------------------------------- bce


def test_bce_examples():
    t = np.array([0.0, 1.0, 1.0, 0.0])
    assert ad.bce(Tensor(t), t).item() <= 1e-5
    assert ad.bce(Tensor(np.full(4, 0.5)), t).item() == pytest.approx(np.log(2), abs=1e-6)
    with pytest.raises(DimensionError):
        ad.bce(Tensor(np.zeros(3)), np.zeros(4))


def test_bce_mask_and_empty_mask():
    p = Tensor(np.array([[0.5, 0.9], [0.2, 0.3]]))
    t = np.array([[1.0, 1.0], [0.0, 0.0]])
    m = np.array([[True, False], [False, False]])
    assert ad.bce(p, t, m).item() == pytest.approx(np.log(2), abs=1e-6)
    p.requires_grad = True
    with Tape() as tape:
        loss = ad.bce(p, t, np.zeros((2, 2), bool))
        assert loss.item() == 0.0
        tape.backward(loss)
    assert p.grad is None


@pytest.mark.parametrize("seed", SEEDS)
def test_bce_gradcheck(seed):
    rng = np.random.default_rng(seed)
    p = rand(rng, 4, 6, lo=0.1, hi=0.9)
    t = (rng.uniform(size=(4, 6)) > 0.5).astype(np.float32)
    mask = rng.uniform(size=4) > 0.3
    mask[0] = True
    assert grad_check(lambda x: ad.bce(x, t), p, step=1e-3) <= 1e-3
    assert grad_check(lambda x: ad.bce(x, t, mask), p, step=1e-3) <= 1e-3


# -------------------------------------------------------------- composites


def test_gradcheck_sum_is_exact():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert grad_check(ad.sum_all, x) <= 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_bce_sigmoid_linear(seed):
    rng = np.random.default_rng(seed)
    w = rand(rng, 5, 3)
    x = rand(rng, 4, 5)
    t = (rng.uniform(size=(4, 3)) > 0.5).astype(np.float32)
    f = lambda ww: ad.bce(ad.sigmoid(ad.matmul(x, ww)), t)
    assert grad_check(f, w) <= 1e-3


@pytest.mark.parametrize("seed", SEEDS)
def test_gradcheck_misc_ops(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 3, 4)
    labels = rng.integers(0, 4, size=3)
    assert grad_check(lambda t: ad.cross_entropy(t, labels), x) <= 1e-3
    assert grad_check(projected(ad.l2_normalize, rng, (3, 4)), x, step=1e-4) <= 1e-3
    assert grad_check(projected(lambda t: ad.mean(t, axis=0), rng, (4,)), x) <= 1e-3
    assert grad_check(projected(ad.transpose, rng, (4, 3)), x) <= 1e-3
    assert grad_check(projected(lambda t: ad.gather_rows(t, [2, 0, 2]), rng, (3, 4)), x) <= 1e-3
    assert grad_check(projected(ad.exp, rng, (3, 4)), x) <= 1e-3


def test_tape_order_and_determinism():
    rng = np.random.default_rng(0)
    w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

    def run():
        w.grad = None
        with Tape() as tape:
            h = ad.relu(ad.matmul(w, w))
            loss = ad.sum_all(ad.softmax(h, axis=1))
            tape.backward(loss)
            n = len(tape)
        return loss.data.tobytes(), w.grad.tobytes(), n

    assert run() == run()
    assert run()[2] == 4


def test_no_tape_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.scale(x, 2.0)
    assert y.requires_grad is False


# -------------------------------------------------------------------- adam


def test_adam_zero_grad_no_decay_is_noop():
    p = {"a": Tensor(np.array([1.0, -2.0]))}
    before = p["a"].data.copy()
    ad.adam_step(p, {"a": np.zeros(2, np.float32)}, ad.AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["a"].data, before)


def test_adam_first_step_is_minus_lr():
    p = {"a": Tensor([0.5])}
    ad.adam_step(p, {"a": np.ones(1, np.float32)}, ad.AdamState(), lr=1e-3)
    assert p["a"].item() == pytest.approx(0.5 - 1e-3, abs=1e-7)


def test_adam_decoupled_weight_decay_first_step():
    p = {"a": Tensor([2.0])}
    ad.adam_step(p, {"a": np.ones(1, np.float32)}, ad.AdamState(), lr=0.1, weight_decay=0.5)
    assert p["a"].item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0 - 0.1, abs=1e-6)


def test_adam_minimizes_quadratic():
    x = Tensor([1.0], requires_grad=True)
    state = ad.AdamState()
    for _ in range(100):
        x.grad = None
        with Tape() as tape:
            tape.backward(ad.sum_all(ad.mul(x, x)))
        ad.adam_step({"x": x}, None, state, lr=0.1)
    assert abs(x.item()) < 0.1


def test_adam_rejects_non_finite():
    p = {"w": Tensor([1.0])}
    with pytest.raises(TrainingError, match="'w'"):
        ad.adam_step(p, {"w": np.array([np.nan], np.float32)}, ad.AdamState(), lr=0.1)


# -------------------------------------------------------------- checkpoint


def test_checkpoint_roundtrip_bitexact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b.c": np.array([np.pi], np.float32)}
    ad.write_arrays(tmp_path / "x.bin", arrays)
    back = ad.read_arrays(tmp_path / "x.bin")
    assert list(back) == ["a", "b.c"]
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    raw = (tmp_path / "x.bin").read_bytes()
    import json, struct

    (n,) = struct.unpack("<I", raw[:4])
    header = json.loads(raw[4 : 4 + n])
    assert header["tensors"][1] == {"name": "b.c", "shape": [1], "offset": 48}


def test_checkpoint_truncated(tmp_path):
    from tograsp.errors import CheckpointError

    ad.write_arrays(tmp_path / "x.bin", {"a": np.ones((10,), np.float32)})
    raw = (tmp_path / "x.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="'a'"):
        ad.read_arrays(tmp_path / "t.bin")
