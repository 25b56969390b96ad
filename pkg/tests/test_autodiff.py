import numpy as np
import pytest

from minerf import autodiff as ad
from minerf import conditioning as cond
from minerf.errors import UsageError


def test_relu_forward_backward():
    t = ad.Tape()
    x = ad.leaf(t, np.array([-1.0, 2.0]))
    y = ad.relu(x)
    assert np.array_equal(y.value, [0.0, 2.0])
    g = ad.grad(t, ad.sum_(y), [x])[0]
    assert np.array_equal(g, [0.0, 1.0])


def test_sigmoid_at_zero():
    t = ad.Tape()
    x = ad.leaf(t, np.zeros(()))
    y = ad.sigmoid(x)
    assert y.value == 0.5
    assert ad.grad(t, y, [x])[0] == pytest.approx(0.25)


def test_matvec_gradient_transpose_rule():
    rng = np.random.default_rng(0)
    W = rng.standard_normal((3, 2))
    x = rng.standard_normal(2)
    seed = rng.standard_normal(3)
    t = ad.Tape()
    xv = ad.leaf(t, x)
    out = ad.sum_(ad.mul(ad.matvec(W, xv), seed))
    gx = ad.grad(t, out, [xv])[0]
    assert np.allclose(gx, W.T @ seed, atol=1e-12)
    rep = ad.finite_diff_check(lambda v: ad.sum_(ad.mul(ad.matvec(W, v), seed)), [x])
    assert rep.passed


def test_grad_of_scalar_leaf_is_one():
    t = ad.Tape()
    w = ad.leaf(t, np.asarray(3.5))
    assert ad.grad(t, w, [w])[0] == 1.0


def test_grad_quadratic_form():
    t = ad.Tape()
    w = ad.leaf(t, np.array([1.0, 2.0, 3.0]))
    out = ad.sum_(ad.square(w))
    assert np.array_equal(ad.grad(t, out, [w])[0], [2.0, 4.0, 6.0])


def test_grad_full_interaction_module_vs_finite_differences():
    rng = np.random.default_rng(1)
    d, k = 4, 2
    arrays = [rng.standard_normal((k, d)), rng.standard_normal((k, d)),
              rng.standard_normal((d, k)), rng.standard_normal((d, d)),
              rng.standard_normal((d, d)), rng.standard_normal(d),
              rng.standard_normal(d)]

    def f(U1, U2, C, W2, W3, e, i):
        out = cond.m_forward(cond.MParams(U1, U2, C, W2, W3), e, i)
        return ad.mean(ad.square(out))

    rep = ad.finite_diff_check(f, arrays, step=1e-5, tol=1e-5)
    assert rep.passed, rep.max_rel_err


def test_finite_diff_trivials():
    rep = ad.finite_diff_check(lambda w: ad.square(w), [np.asarray(3.0)])
    assert rep.passed
    a = np.random.default_rng(2).standard_normal(5)
    rep = ad.finite_diff_check(lambda w: ad.sum_(ad.mul(w, a)),
                               [np.arange(5.0)])
    assert rep.max_rel_err < 1e-9  # linear: exact to rounding


def test_finite_diff_composited_pixel():
    # one ray, 8 samples, loss through the alpha compositing chain
    rng = np.random.default_rng(3)
    ts = np.sort(rng.uniform(0.1, 0.9, 8))
    deltas = np.append(np.diff(ts), 1.0 - ts[-1])
    gt = rng.uniform(0, 1, 3)

    def f(sig_raw, rgb_raw):
        sigma = ad.softplus(sig_raw)
        rgb = ad.sigmoid(rgb_raw)
        sd = ad.mul(sigma, deltas)
        cum = ad.matmul(ad.reshape(sd, (1, 8)), np.triu(np.ones((8, 8)), k=1))
        T = ad.exp(ad.neg(ad.reshape(cum, (8,))))
        alpha = ad.sub(np.ones(8), ad.exp(ad.neg(sd)))
        w = ad.mul(T, alpha)
        t_end = ad.exp(ad.neg(ad.sum_(sd)))
        acc = []
        for ch in range(3):
            pred = ad.sum_(ad.mul(w, rgb[:, ch])) + ad.scale(t_end, 0.5)
            acc.append(ad.square(ad.sub(pred, gt[ch])))
        return acc[0] + acc[1] + acc[2]

    rep = ad.finite_diff_check(f, [rng.standard_normal(8),
                                   rng.standard_normal((8, 3))], step=1e-5, tol=1e-4)
    assert rep.passed, rep.max_rel_err


def test_fanout_accumulates():
    t = ad.Tape()
    x = ad.leaf(t, np.asarray(2.0))
    y = ad.mul(x, x) + ad.scale(x, 3.0)  # x^2 + 3x
    assert ad.grad(t, y, [x])[0] == pytest.approx(7.0)


def test_backward_determinism_bit_identical():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(6)
    runs = []
    for _ in range(2):
        t = ad.Tape()
        xv = ad.leaf(t, x)
        out = ad.sum_(ad.mul(ad.sigmoid(xv), ad.exp(ad.scale(xv, 0.3))))
        runs.append((out.value.tobytes(), ad.grad(t, out, [xv])[0].tobytes()))
    assert runs[0] == runs[1]


def test_cross_tape_mixing_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = ad.leaf(t1, np.ones(2))
    b = ad.leaf(t2, np.ones(2))
    with pytest.raises(UsageError):
        ad.add(a, b)


def test_grad_requires_scalar_output():
    t = ad.Tape()
    x = ad.leaf(t, np.ones(3))
    with pytest.raises(UsageError):
        ad.grad(t, ad.square(x), [x])


def test_constants_receive_no_gradient_paths():
    t = ad.Tape()
    c = ad.const(t, np.ones(3))
    x = ad.leaf(t, np.full(3, 2.0))
    out = ad.sum_(ad.mul(c, x))
    assert not c.requires_grad and x.requires_grad
    assert np.array_equal(ad.grad(t, out, [x])[0], np.ones(3))


def test_tape_topological_by_construction():
    t = ad.Tape()
    x = ad.leaf(t, np.ones(3))
    y = ad.exp(ad.mul(x, 2.0))
    out = ad.sum_(y)
    for idx, node in enumerate(t.nodes):
        assert all(p < idx for p in node.parents)
    assert out.idx == len(t.nodes) - 1
