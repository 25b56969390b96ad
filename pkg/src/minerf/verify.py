"""Machine-checkable oracle suites behind the `verify` CLI subcommand.

Each suite returns {"suite", "passed", "checks": [{name, passed, max_err}]}.
The checks deliberately go through module attributes (tensor_core.hadamard,
not a from-import) so fault-injection tests can monkeypatch a kernel and watch
the suite fail.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import conditioning as cond
from . import renderer
from . import tensor_core as tc

SUITES = ("tensor", "autodiff", "render", "props")


def _rng(seed=1234):
    return np.random.default_rng(seed)


def _check(name, max_err, tol):
    return {"name": name, "passed": bool(max_err < tol), "max_err": float(max_err),
            "tol": tol}


# ---------------------------------------------------------------------------

def suite_tensor(cases: int = 200) -> dict:
    rng = _rng(7)
    checks = []

    err = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 9))
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        got = tc.hadamard(a, b)
        want = np.array([a[j] * b[j] for j in range(n)])
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("hadamard_vs_loop", err, 1e-14))

    err = 0.0
    for _ in range(50):
        d1, d2, k = (int(rng.integers(1, 6)) for _ in range(3))
        A, B = rng.standard_normal((d1, k)), rng.standard_normal((d2, k))
        got = tc.khatri_rao(A, B)
        want = np.zeros((d1 * d2, k))
        for j in range(k):
            for p in range(d1):
                for q in range(d2):
                    want[p * d2 + q, j] = A[p, j] * B[q, j]
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("khatri_rao_vs_loop", err, 1e-14))

    err = 0.0
    for _ in range(50):
        o, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        W = tc.Tensor3.from_array(rng.standard_normal((o, d, d)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        got = tc.mode_contract(W, e, i)
        want = np.zeros(o)
        for a_ in range(o):
            for b_ in range(d):
                for c_ in range(d):
                    want[a_] += W.data[a_, b_, c_] * e[b_] * i[c_]
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("mode_contract_vs_loop", err, 1e-12))

    # mixed-product identity: C[(A^T e)*(B^T i)] == contract(cp_expand, e, i)
    err = 0.0
    for _ in range(cases):
        o, d, k = (int(rng.integers(1, 9)) for _ in range(3))
        f = tc.FactorTriple.from_arrays(rng.standard_normal((o, k)),
                                        rng.standard_normal((d, k)),
                                        rng.standard_normal((d, k)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        lhs = f.C @ ((f.A.T @ e) * (f.B.T @ i))
        rhs = tc.mode_contract(tc.cp_expand(f), e, i)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    checks.append(_check("mixed_product_identity", err, 1e-10))

    # (A (.) B)^T (e kron i) == (A^T e) * (B^T i)
    err = 0.0
    for _ in range(cases):
        d1, d2, k = (int(rng.integers(1, 7)) for _ in range(3))
        A, B = rng.standard_normal((d1, k)), rng.standard_normal((d2, k))
        e, i = rng.standard_normal(d1), rng.standard_normal(d2)
        lhs = tc.khatri_rao(A, B).T @ np.kron(e, i)
        rhs = (A.T @ e) * (B.T @ i)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    checks.append(_check("khatri_rao_transpose_identity", err, 1e-10))

    # bilinearity of mode_contract in e and i
    err = 0.0
    for _ in range(50):
        o, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        W = tc.Tensor3.from_array(rng.standard_normal((o, d, d)))
        e1, e2, i1, i2 = (rng.standard_normal(d) for _ in range(4))
        a, b = rng.standard_normal(2)
        lhs = tc.mode_contract(W, a * e1 + b * e2, i1)
        rhs = a * tc.mode_contract(W, e1, i1) + b * tc.mode_contract(W, e2, i1)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
        lhs = tc.mode_contract(W, e1, a * i1 + b * i2)
        rhs = a * tc.mode_contract(W, e1, i1) + b * tc.mode_contract(W, e1, i2)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    checks.append(_check("mode_contract_bilinear", err, 1e-12))

    return {"suite": "tensor", "passed": all(c["passed"] for c in checks),
            "checks": checks}


# ---------------------------------------------------------------------------

def suite_autodiff(per_primitive: int = 50) -> dict:
    rng = _rng(11)
    checks = []

    def away_from_kinks(x, eps=1e-3):
        x = x.copy()
        x[np.abs(x) < eps] += 2 * eps
        return x

    unary = {
        "neg": (ad.neg, lambda r, n: r.standard_normal(n)),
        "square": (ad.square, lambda r, n: r.standard_normal(n)),
        "exp": (ad.exp, lambda r, n: r.standard_normal(n)),
        "sqrt": (ad.sqrt, lambda r, n: r.uniform(0.5, 3.0, n)),
        "sin": (ad.sin, lambda r, n: r.standard_normal(n)),
        "cos": (ad.cos, lambda r, n: r.standard_normal(n)),
        "relu": (ad.relu, lambda r, n: away_from_kinks(r.standard_normal(n))),
        "sigmoid": (ad.sigmoid, lambda r, n: r.standard_normal(n)),
        "softplus": (ad.softplus, lambda r, n: r.standard_normal(n)),
    }
    for name, (op, sample) in unary.items():
        worst = 0.0
        for _ in range(per_primitive):
            n = int(rng.integers(2, 6))
            x = sample(rng, n)
            w = rng.standard_normal(n)
            rep = ad.finite_diff_check(
                lambda xv: ad.sum_(ad.mul(op(xv), w)), [x])
            worst = max(worst, rep.max_rel_err)
        checks.append(_check(f"fd_{name}", worst, 1e-5))

    binary = {
        "add": ad.add,
        "sub": ad.sub,
        "mul": ad.mul,
        "hadamard": ad.hadamard,
    }
    for name, op in binary.items():
        worst = 0.0
        for _ in range(per_primitive):
            n = int(rng.integers(2, 6))
            a, b = rng.standard_normal(n), rng.standard_normal(n)
            w = rng.standard_normal(n)
            rep = ad.finite_diff_check(
                lambda av, bv: ad.sum_(ad.mul(op(av, bv), w)), [a, b])
            worst = max(worst, rep.max_rel_err)
        checks.append(_check(f"fd_{name}", worst, 1e-5))

    worst = 0.0
    for _ in range(per_primitive):
        m, n = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        W, x = rng.standard_normal((m, n)), rng.standard_normal(n)
        w = rng.standard_normal(m)
        rep = ad.finite_diff_check(
            lambda Wv, xv: ad.sum_(ad.mul(ad.matvec(Wv, xv), w)), [W, x])
        worst = max(worst, rep.max_rel_err)
    checks.append(_check("fd_matvec", worst, 1e-5))

    worst = 0.0
    for _ in range(per_primitive):
        m, k, n = (int(rng.integers(2, 5)) for _ in range(3))
        A, B = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        w = rng.standard_normal((m, n))
        rep = ad.finite_diff_check(
            lambda Av, Bv: ad.sum_(ad.mul(ad.matmul(Av, Bv), w)), [A, B])
        worst = max(worst, rep.max_rel_err)
    checks.append(_check("fd_matmul", worst, 1e-5))

    shape_ops = {
        "sum": lambda xv: ad.sum_(xv),
        "mean": lambda xv: ad.mean(xv),
        "scale": lambda xv: ad.sum_(ad.scale(xv, 1.7)),
        "slice": lambda xv: ad.sum_(xv[1:]),
        "reshape": lambda xv: ad.sum_(ad.square(ad.reshape(xv, (2, -1)))),
        "tile_rows": lambda xv: ad.sum_(ad.square(ad.tile_rows(xv, 3))),
        "concat": lambda xv: ad.sum_(ad.square(ad.concat([xv, xv]))),
    }
    for name, f in shape_ops.items():
        worst = 0.0
        for _ in range(per_primitive):
            x = rng.standard_normal(4)
            rep = ad.finite_diff_check(f, [x])
            worst = max(worst, rep.max_rel_err)
        checks.append(_check(f"fd_{name}", worst, 1e-5))

    # backward linearity: grad of sum of independent subgraphs
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(5)
        y = rng.standard_normal(5)
        t1 = ad.Tape()
        xv, yv = ad.leaf(t1, x), ad.leaf(t1, y)
        both = ad.grad(t1, ad.sum_(ad.square(xv)) + ad.sum_(ad.exp(yv)), [xv, yv])
        t2 = ad.Tape()
        xv2 = ad.leaf(t2, x)
        gx = ad.grad(t2, ad.sum_(ad.square(xv2)), [xv2])[0]
        t3 = ad.Tape()
        yv3 = ad.leaf(t3, y)
        gy = ad.grad(t3, ad.sum_(ad.exp(yv3)), [yv3])[0]
        worst = max(worst, float(np.max(np.abs(both[0] - gx))),
                    float(np.max(np.abs(both[1] - gy))))
    checks.append(_check("backward_linearity", worst, 1e-15))

    # determinism: identical tapes produce bit-identical gradients
    x = rng.standard_normal(6)
    outs = []
    for _ in range(2):
        t = ad.Tape()
        xv = ad.leaf(t, x)
        out = ad.sum_(ad.mul(ad.sigmoid(xv), ad.exp(ad.scale(xv, 0.3))))
        outs.append((float(out.value), ad.grad(t, out, [xv])[0]))
    same = outs[0][0] == outs[1][0] and np.array_equal(outs[0][1], outs[1][1])
    checks.append({"name": "determinism_bit_identical", "passed": bool(same),
                   "max_err": 0.0 if same else 1.0, "tol": 0.0})

    return {"suite": "autodiff", "passed": all(c["passed"] for c in checks),
            "checks": checks}


# ---------------------------------------------------------------------------

def suite_render(cases: int = 100) -> dict:
    rng = _rng(23)
    checks = []

    # partition of unity on arbitrary SampleSets
    err = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 40))
        t = np.sort(rng.uniform(0.1, 3.9, n))
        t_far = 4.0
        sigma = rng.uniform(0.0, 30.0, n)
        rgb = rng.uniform(0, 1, (n, 3))
        ss = renderer.SampleSet(t=t, sigma=sigma, rgb=rgb, t_far=t_far)
        deltas = ss.deltas()
        alpha = 1.0 - np.exp(-sigma * deltas)
        T = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
        t_end = np.prod(1.0 - alpha)
        err = max(err, abs(t_end + float((T * alpha).sum()) - 1.0))
    checks.append(_check("transmittance_partition_of_unity", err, 1e-12))

    # homogeneous medium vs closed form at 256 samples
    sigma0, color = 2.0, np.array([0.7, 0.2, 0.5])
    ray = renderer.Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, -1.0]),
                       t_near=1e-9, t_far=1.0)
    errs = {}
    for n in (64, 256):
        t = renderer.stratified_samples(ray, n, jitter=False)
        ss = renderer.SampleSet(t=t, sigma=np.full(n, sigma0),
                                rgb=np.tile(color, (n, 1)), t_far=ray.t_far)
        got = renderer.composite(ss, np.zeros(3))
        want = color * (1.0 - np.exp(-sigma0 * (ray.t_far - ray.t_near)))
        errs[n] = float(np.max(np.abs(got - want)))
    checks.append(_check("homogeneous_closed_form_256", errs[256], 1e-3))
    halved = errs[256] < 0.5 * errs[64] + 1e-12
    checks.append({"name": "quadrature_error_halves_64_to_256", "passed": bool(halved),
                   "max_err": errs[256] / max(errs[64], 1e-300), "tol": 0.5})

    # opaque first sample returns its color
    t = np.array([0.5, 0.7])
    ss = renderer.SampleSet(t=t, sigma=np.array([40.0 / 0.2, 0.0]),
                            rgb=np.array([[0.9, 0.1, 0.3], [0.2, 0.2, 0.2]]), t_far=1.0)
    err = float(np.max(np.abs(renderer.composite(ss, np.ones(3)) - [0.9, 0.1, 0.3])))
    checks.append(_check("opaque_saturation", err, 1e-12))

    # monotone transmittance
    err = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 30))
        t = np.sort(rng.uniform(0.1, 3.9, n))
        sigma = rng.uniform(0.0, 5.0, n)
        ss = renderer.SampleSet(t=t, sigma=sigma, rgb=np.zeros((n, 3)), t_far=4.0)
        alpha = 1.0 - np.exp(-sigma * ss.deltas())
        T = np.concatenate([[1.0], np.cumprod(1.0 - alpha)[:-1]])
        err = max(err, float(np.max(np.diff(T))))
    checks.append(_check("transmittance_monotone", max(err, 0.0), 1e-15))

    return {"suite": "render", "passed": all(c["passed"] for c in checks),
            "checks": checks}


# ---------------------------------------------------------------------------

def _triplet_expansion(p: cond.HParams, e, i):
    """Independent 8-term oracle for the degree-3 multiplicative branch."""
    terms = []
    for a in (p.U_e[1] @ e, p.U_i[1] @ i):
        for b in (p.U_e[0] @ e, p.U_i[0] @ i):
            for c in (p.U_e[2] @ e, p.U_i[2] @ i):
                terms.append(p.C @ (a * b * c))
    return np.sum(terms, axis=0)


def suite_props(cases: int = 200) -> dict:
    rng = _rng(31)
    checks = []

    # Prop 1: factored module equals the dense-tensor interaction
    err = 0.0
    for _ in range(cases):
        d, k = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        o = int(rng.integers(1, 9))
        p = cond.MParams(U1=rng.standard_normal((k, d)), U2=rng.standard_normal((k, d)),
                         C=rng.standard_normal((o, k)), W2=rng.standard_normal((o, d)),
                         W3=rng.standard_normal((o, d)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        got = cond.m_forward(p, e, i).value
        f = tc.FactorTriple.from_arrays(p.C, p.U1.T, p.U2.T)
        want = tc.m_full_oracle(tc.cp_expand(f), p.W2, p.W3, e, i)
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("prop1_factored_equals_full_tensor", err, 1e-10))

    # Prop 2: N=2 recursion equals its six-term expansion
    err = 0.0
    for _ in range(cases):
        d = int(rng.integers(1, 9))
        k = int(rng.integers(1, 9))
        o = int(rng.integers(1, 9))
        p = cond.HParams(U_e=[rng.standard_normal((k, d)) for _ in range(2)],
                         U_i=[rng.standard_normal((k, d)) for _ in range(2)],
                         C=rng.standard_normal((o, k)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        got = cond.h_forward(p, e, i).value
        want = cond.h_expand_oracle(p, e, i).value
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("prop2_recursion_equals_six_terms", err, 1e-10))

    # Prop 3 spot check: multiplicative branch equals the 8-triplet expansion
    err = 0.0
    for _ in range(max(20, cases // 10)):
        d, k, o = (int(rng.integers(1, 7)) for _ in range(3))
        p = cond.HParams(U_e=[rng.standard_normal((k, d)) for _ in range(3)],
                         U_i=[rng.standard_normal((k, d)) for _ in range(3)],
                         C=rng.standard_normal((o, k)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        got = cond.h_multiplicative_forward(p, e, i).value
        want = _triplet_expansion(p, e, i)
        err = max(err, float(np.max(np.abs(got - want))))
    checks.append(_check("prop3_multiplicative_branch_triplets", err, 1e-10))

    # pure multiplicative branch of M is linear in e
    err = 0.0
    for _ in range(50):
        d, k = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        p = cond.MParams(U1=rng.standard_normal((k, d)), U2=rng.standard_normal((k, d)),
                         C=rng.standard_normal((d, k)), W2=np.zeros((d, d)),
                         W3=np.zeros((d, d)))
        e, i = rng.standard_normal(d), rng.standard_normal(d)
        a = float(rng.standard_normal())
        lhs = cond.m_forward(p, a * e, i).value
        rhs = a * cond.m_forward(p, e, i).value
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    checks.append(_check("degree_linearity_in_e", err, 1e-12))

    return {"suite": "props", "passed": all(c["passed"] for c in checks),
            "checks": checks}


def run_suites(names) -> dict:
    table = {"tensor": suite_tensor, "autodiff": suite_autodiff,
             "render": suite_render, "props": suite_props}
    results = [table[n]() for n in names]
    return {"passed": all(r["passed"] for r in results), "suites": results}
