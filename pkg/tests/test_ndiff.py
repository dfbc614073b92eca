import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from casediar import ndiff as nd


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f over array x (modified in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7)))


def check_op(build, *shapes, seed=0, tol=1e-6, avoid_zero=False):
    """Gradient of sum(G * build(*leaves)) against finite differences."""
    rng = np.random.default_rng(seed)
    leaves = []
    for s in shapes:
        v = rng.normal(size=s)
        if avoid_zero:
            v[np.abs(v) < 1e-3] = 0.5
        leaves.append(nd.Tensor(v, requires_grad=True))
    out = build(*leaves)
    G = rng.normal(size=out.shape)

    def f():
        return float((build(*[nd.Tensor(t.value) for t in leaves]).value * G).sum())

    out.backward(G)
    for t in leaves:
        assert rel_err(t.grad, numeric_grad(f, t.value)) < tol


# -- affine ------------------------------------------------------------------

def test_affine_identity():
    out = nd.affine(nd.Tensor([[1.0, 2.0]]), nd.Tensor(np.eye(2)), nd.Tensor([[0.0, 0.0]]))
    assert out.value.tolist() == [[1.0, 2.0]]


def test_affine_hand_arithmetic():
    out = nd.affine(nd.Tensor([[1.0, 1.0]]), nd.Tensor([[2.0, 0.0], [0.0, 3.0]]), nd.Tensor([[1.0, 1.0]]))
    assert out.value.tolist() == [[3.0, 4.0]]


def test_affine_gradients():
    check_op(lambda x, W, b: nd.affine(x, W, b), (3, 4), (4, 2), (1, 2))


def test_affine_shape_error_names_shapes():
    with pytest.raises(ValueError, match="3"):
        nd.affine(nd.Tensor(np.zeros((2, 3))), nd.Tensor(np.zeros((4, 2))))


# -- relu / hadamard ------------------------------------------------------------

def test_relu_values_and_kink():
    x = nd.Tensor([[-1.0, 2.0]], requires_grad=True)
    assert nd.relu(x).value.tolist() == [[0.0, 2.0]]
    z = nd.Tensor([[0.0, 0.0]], requires_grad=True)
    nd.relu(z).backward(np.ones((1, 2)))
    assert z.grad.tolist() == [[0.0, 0.0]]


def test_relu_gradient_away_from_kink():
    check_op(nd.relu, (4, 5), avoid_zero=True)


def test_hadamard():
    a = nd.Tensor([[1.0, 2.0]])
    assert nd.hadamard(a, nd.Tensor([[3.0, 4.0]])).value.tolist() == [[3.0, 8.0]]
    assert nd.hadamard(a, nd.Tensor(np.ones((1, 2)))).value.tolist() == a.value.tolist()
    check_op(nd.hadamard, (2, 3), (2, 3))
    with pytest.raises(ValueError):
        nd.hadamard(a, nd.Tensor(np.ones((2, 2))))


def test_other_primitives_gradients():
    check_op(nd.tanh, (3, 4))
    check_op(lambda a, b: nd.matmul(a, b), (3, 4), (4, 2))
    check_op(lambda a, b: nd.add(a, b), (3, 4), (1, 4))
    check_op(lambda x, w: nd.scale_rows(x, w), (5, 3), (5, 1))
    check_op(lambda a, b: nd.concat_cols([a, b]), (3, 2), (3, 4))
    check_op(lambda x: nd.take_rows(x, np.array([0, 2, 2, 1])), (3, 2))
    check_op(lambda x: nd.splice(x, 2, 1, 4), (8, 3))
    check_op(lambda x: nd.group_softmax(x, 4), (8, 3))
    check_op(lambda x: nd.group_sum(x, 4), (8, 3))
    check_op(lambda x: nd.attention_penalty(nd.group_softmax(x, 5), 5), (10, 3))


def test_spliced_affine_matches_splice_then_affine():
    rng = np.random.default_rng(3)
    B, T = 3, 30
    dense = nd.Tensor(rng.normal(size=(B * T, 4)), requires_grad=True)
    onehot = np.zeros((B * T, 40))
    onehot[np.arange(B * T), rng.integers(40, size=B * T)] = 1.0
    onehot = nd.Tensor(onehot)
    W = nd.Tensor(rng.normal(size=(5 * 44, 6)), requires_grad=True)
    b = nd.Tensor(rng.normal(size=(1, 6)), requires_grad=True)
    G = rng.normal(size=(B * T, 6))
    fast = nd.spliced_affine([dense, onehot], W, b, 2, 2, T)
    fast.backward(G)
    grads = [t.grad.copy() for t in (dense, W, b)]
    for t in (dense, W, b):
        t.grad = None
    slow = nd.affine(nd.splice(nd.concat_cols([dense, onehot]), 2, 2, T), W, b)
    slow.backward(G)
    np.testing.assert_allclose(fast.value, slow.value, atol=1e-12)
    for g, t in zip(grads, (dense, W, b)):
        np.testing.assert_allclose(g, t.grad, atol=1e-12)


# -- losses -------------------------------------------------------------------

def test_cross_entropy_uniform_and_confident():
    assert nd.softmax_cross_entropy(nd.Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2))
    expected = -math.log(math.exp(10) / (math.exp(10) + 1))
    assert nd.softmax_cross_entropy(nd.Tensor([[10.0, 0.0]]), [0]).item() == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(4.54e-5, rel=1e-2)


def test_cross_entropy_gradient_and_errors():
    check_op(lambda z: nd.softmax_cross_entropy(z, [1, 0, 2]), (3, 4))
    with pytest.raises(ValueError):
        nd.softmax_cross_entropy(nd.Tensor(np.zeros((1, 2))), [2])


def test_angular_softmax_geometry():
    e = nd.Tensor([[3.0, 0.0]])
    W = nd.Tensor([[1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_allclose(nd.angular_softmax_logits(e, W).value, [[10.0, 0.0]], atol=1e-12)


def test_angular_softmax_identical_classes_give_ln_k():
    W = nd.Tensor(np.tile([[0.3, -0.2, 0.9]], (4, 1)))
    e = nd.Tensor(np.random.default_rng(0).normal(size=(2, 3)))
    loss = nd.softmax_cross_entropy(nd.angular_softmax_logits(e, W), [0, 3])
    assert loss.item() == pytest.approx(math.log(4))


def test_angular_softmax_gradient_and_zero_row():
    check_op(lambda e, W: nd.softmax_cross_entropy(nd.angular_softmax_logits(e, W), [0, 3, 1]), (3, 5), (4, 5))
    with pytest.raises(ValueError):
        nd.angular_softmax_logits(nd.Tensor(np.zeros((1, 2))), nd.Tensor(np.eye(2)))


def test_loss_config_rejects_margin_other_than_one():
    with pytest.raises(ValueError):
        nd.LossConfig(margin=2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.integers(0, 3), st.integers(0, 2))
def test_angular_softmax_rescaling_invariance(a, c, row, erow):
    rng = np.random.default_rng(row * 7 + erow)
    e, W = rng.normal(size=(3, 4)), rng.normal(size=(4, 4))
    base = nd.angular_softmax_logits(nd.Tensor(e), nd.Tensor(W)).value
    W2, e2 = W.copy(), e.copy()
    W2[row] *= a
    e2[erow] *= c
    np.testing.assert_allclose(nd.angular_softmax_logits(nd.Tensor(e2), nd.Tensor(W2)).value, base, atol=1e-10)


# -- gradient reversal --------------------------------------------------------

def test_gradient_reverse():
    x = nd.Tensor([[1.0, 2.0]], requires_grad=True)
    y = nd.gradient_reverse(x, 1.0)
    assert y.value.tolist() == [[1.0, 2.0]]
    y.backward(np.array([[0.5, -2.0]]))
    assert x.grad.tolist() == [[-0.5, 2.0]]
    x.grad = None
    nd.gradient_reverse(x, 0.0).backward(np.array([[0.5, -2.0]]))
    assert np.all(x.grad == 0.0)


# -- optimiser ----------------------------------------------------------------

def _store(value):
    p = nd.ParamStore(0)
    p.add("w", 1, 1, init="zeros")
    p["w"].value[...] = value
    return p


def test_adam_zero_gradient_keeps_parameters():
    p = _store(1.5)
    p.zero_grad()
    nd.Adam(0.1).step(p)
    assert p["w"].value[0, 0] == 1.5


def test_adam_first_step_is_lr():
    p = _store(1.0)
    p.zero_grad()
    p["w"].grad[...] = 1.0
    nd.optimizer_step(p, nd.Adam(0.1))
    assert p["w"].value[0, 0] == pytest.approx(0.9, abs=1e-6)


def test_adam_rejects_non_finite_with_name():
    p = _store(1.0)
    p.zero_grad()
    p["w"].grad[...] = np.nan
    with pytest.raises(FloatingPointError, match="w"):
        nd.Adam().step(p)


def test_training_is_bitwise_deterministic():
    def run():
        p = nd.ParamStore(5)
        p.add("W", 3, 2)
        opt = nd.Adam(0.01)
        x = np.random.default_rng(1).normal(size=(6, 3))
        for _ in range(5):
            p.zero_grad()
            nd.softmax_cross_entropy(nd.affine(x, p["W"]), [0, 1, 0, 1, 1, 0]).backward()
            opt.step(p)
        return p["W"].value.copy()
    assert run().tobytes() == run().tobytes()


def test_zero_grad_sets_exact_zeros():
    p = nd.ParamStore(0)
    p.add("a", 2, 3)
    p["a"].grad = np.ones((2, 3))
    p.zero_grad()
    assert p.grad("a").shape == (2, 3) and not p.grad("a").any()


# -- finite-difference checker --------------------------------------------------

class Quadratic(nd.ModelGraph):
    def __init__(self, corrupt=1.0):
        self.params = nd.ParamStore(0)
        self.params.add("W", 3, 2)
        self.corrupt = corrupt

    def loss(self, batch):
        x, y = batch
        r = nd.add(nd.affine(x, self.params["W"]), nd.scale(nd.constant(y), -1.0))
        return nd.sum_all(nd.hadamard(r, r))

    def gradients(self, batch):
        g = super().gradients(batch)
        return {k: v * self.corrupt for k, v in g.items()}


def _qbatch():
    rng = np.random.default_rng(2)
    return rng.normal(size=(5, 3)), rng.normal(size=(5, 2))


def test_finite_diff_quadratic_is_exact():
    assert nd.finite_diff_check(Quadratic(), _qbatch()) < 1e-8


def test_finite_diff_detects_corrupted_gradient():
    err = nd.finite_diff_check(Quadratic(corrupt=2.0), _qbatch())
    assert err == pytest.approx(0.5, abs=1e-6)


def test_finite_diff_epsilon_range():
    with pytest.raises(ValueError):
        nd.finite_diff_check(Quadratic(), _qbatch(), epsilon=1e-2)


# -- checkpoints ----------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_checkpoint_round_trip_is_bit_exact(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("ck") / "x.ckpt"
    nd.save_checkpoint(path, {"a": a, "b": a.T.copy()}, {"note": "x"})
    back, meta = nd.load_checkpoint(path)
    assert back["a"].tobytes() == a.tobytes() and back["b"].tobytes() == a.T.copy().tobytes()
    assert meta == {"note": "x"}


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        nd.load_checkpoint(path)


def test_forward_is_pure():
    rng = np.random.default_rng(0)
    x, W = rng.normal(size=(4, 3)), nd.Tensor(rng.normal(size=(3, 2)))
    a = nd.tanh(nd.affine(x, W)).value
    b = nd.tanh(nd.affine(x, W)).value
    assert a.tobytes() == b.tobytes()
