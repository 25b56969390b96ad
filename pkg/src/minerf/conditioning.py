"""Interaction modules mixing expression, identity, and latent vectors.

The main module computes C[(U1 e) * (U2 i)] + W2 e + W3 i (a factored
second-degree interaction); the high-degree module applies the recursion
x_n = x_{n-1} + (U_n1 e + U_n2 i) * x_{n-1}. Ablation variants A1..A7 plus
three extras (higher output dim, learnable concatenation, latent code inside
the module) are all dispatched through variant_forward.

All forwards are built from autodiff primitives so they are differentiable
w.r.t. every parameter and input; pass numpy arrays for plain evaluation
(a throwaway tape is created) or Vars bound to a training tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .errors import ConfigError, DimensionError, NumericError

VARIANTS = (
    "Baseline", "A1", "A2", "A3", "A4", "A5", "A6", "A7",
    "M", "H", "HigherOut_o256", "LearnableConcat", "LatentInM",
)

# variants whose formula only makes sense with o == d (un-projected e*i term
# or a shared square W1); LatentInM additionally pins o == k == d
_SQUARE_ONLY = ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "LearnableConcat")


@dataclass(frozen=True)
class ConditionVectors:
    """Per-frame conditioning state: expression e, identity code i, latent l."""

    e: np.ndarray
    i: np.ndarray
    l: np.ndarray

    def validate(self):
        if self.e.shape != self.i.shape:
            raise DimensionError(f"dim(e)={self.e.shape} != dim(i)={self.i.shape}")
        for name, v in (("e", self.e), ("i", self.i), ("l", self.l)):
            if not np.all(np.isfinite(v)):
                raise NumericError(f"condition vector {name} has non-finite entries")
        return self


@dataclass
class MParams:
    U1: object  # k x d
    U2: object  # k x d
    C: object   # o x k
    W2: object  # o x d
    W3: object  # o x d


@dataclass
class HParams:
    U_e: list   # per-level k x d (applied to e)
    U_i: list   # per-level k x d (applied to i)
    C: object   # o x k

    @property
    def N(self) -> int:
        return len(self.U_e)


def _find_tape(*objs, tape=None) -> Tape:
    for o in objs:
        if isinstance(o, Var):
            return o.tape
    return tape if tape is not None else Tape()


def m_forward(p: MParams, e, i, tape=None) -> Var:
    """Factored multiplicative interaction plus linear terms."""
    t = _find_tape(p.U1, p.U2, p.C, p.W2, p.W3, e, i, tape=tape)
    e = ad._coerce(t, e)
    i = ad._coerce(t, i)
    mixed = ad.mul(ad.matvec(p.U1, e), ad.matvec(p.U2, i))
    return ad.matvec(p.C, mixed) + ad.matvec(p.W2, e) + ad.matvec(p.W3, i)


def h_forward(p: HParams, e, i, tape=None) -> Var:
    """High-degree interaction: recursive Hadamard mixing of shared embeddings."""
    if p.N < 1:
        raise ConfigError("H needs at least one level")
    t = _find_tape(p.C, *p.U_e, *p.U_i, e, i, tape=tape)
    e = ad._coerce(t, e)
    i = ad._coerce(t, i)
    x = ad.matvec(p.U_e[0], e) + ad.matvec(p.U_i[0], i)
    for n in range(1, p.N):
        z = ad.matvec(p.U_e[n], e) + ad.matvec(p.U_i[n], i)
        x = x + ad.mul(z, x)
    return ad.matvec(p.C, x)


def h_multiplicative_forward(p: HParams, e, i, tape=None) -> Var:
    """The recursion with the additive carry dropped: C[z_N * ... * z_2 * x_1]."""
    t = _find_tape(p.C, *p.U_e, *p.U_i, e, i, tape=tape)
    e = ad._coerce(t, e)
    i = ad._coerce(t, i)
    x = ad.matvec(p.U_e[0], e) + ad.matvec(p.U_i[0], i)
    for n in range(1, p.N):
        z = ad.matvec(p.U_e[n], e) + ad.matvec(p.U_i[n], i)
        x = ad.mul(z, x)
    return ad.matvec(p.C, x)


def h_expand_oracle(p: HParams, e, i, tape=None) -> Var:
    """Symbolic distribution of the recursion into monomials of (U e)/(U i) factors.

    Supported for N in {2, 3}: 6 terms for N=2, 18 for N=3 (the 8 degree-3
    triplets plus every lower-order term carried through).
    """
    if p.N not in (2, 3):
        raise ConfigError(f"expansion oracle supports N in {{2, 3}}, got {p.N}")
    t = _find_tape(p.C, *p.U_e, *p.U_i, e, i, tape=tape)
    e = ad._coerce(t, e)
    i = ad._coerce(t, i)
    monomials = [ad.matvec(p.U_e[0], e), ad.matvec(p.U_i[0], i)]
    for n in range(1, p.N):
        factors = (ad.matvec(p.U_e[n], e), ad.matvec(p.U_i[n], i))
        monomials = monomials + [ad.mul(f, m) for f in factors for m in monomials]
    acc = monomials[0]
    for m in monomials[1:]:
        acc = acc + m
    return ad.matvec(p.C, acc)


# ---------------------------------------------------------------------------
# variants

def variant_output_dim(variant: str, d: int, o: int, d_latent: int = 0) -> int:
    if variant in ("Baseline", "LearnableConcat"):
        return 2 * d
    if variant.startswith("A"):
        return d
    if variant in ("M", "H", "HigherOut_o256", "LatentInM"):
        return o
    raise ConfigError(f"unknown variant {variant!r}")


def latent_inside(variant: str) -> bool:
    """True when the per-frame latent code feeds the module instead of the field."""
    return variant == "LatentInM"


def check_variant_dims(variant: str, d: int, k: int, o: int, d_latent: int):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r} (choose from {VARIANTS})")
    if variant in _SQUARE_ONLY and o != d:
        raise ConfigError(f"variant {variant} requires o == d, got o={o}, d={d}")
    if variant == "LatentInM":
        if not (o == k == d):
            raise ConfigError(f"LatentInM requires o == k == d, got o={o}, k={k}, d={d}")
        if d_latent != d:
            raise ConfigError(f"LatentInM requires d_latent == d, got {d_latent} != {d}")


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def init_variant_params(variant: str, d: int, k: int, o: int, rng: np.random.Generator,
                        d_latent: int = 0, n_levels: int = 2) -> dict[str, np.ndarray]:
    check_variant_dims(variant, d, k, o, d_latent if variant == "LatentInM" else d_latent)
    p: dict[str, np.ndarray] = {}
    if variant == "Baseline":
        return p
    if variant in ("A1", "A2", "A5"):
        p["W2"] = _xavier(rng, d, d)
        p["W3"] = _xavier(rng, d, d)
    elif variant in ("A3", "A4"):
        p["W1"] = _xavier(rng, d, d)
    elif variant == "A6":
        p["W1"] = _xavier(rng, d, d)
        p["W2"] = _xavier(rng, d, d)
        p["W3"] = _xavier(rng, d, d)
    elif variant == "A7":
        a = np.sqrt(6.0 / (d * d + d))
        p["W_tensor"] = rng.uniform(-a, a, size=(d, d, d))
    elif variant in ("M", "HigherOut_o256"):
        p["U1"] = _xavier(rng, k, d)
        p["U2"] = _xavier(rng, k, d)
        p["C"] = _xavier(rng, o, k)
        p["W2"] = _xavier(rng, o, d)
        p["W3"] = _xavier(rng, o, d)
    elif variant == "H":
        for n in range(1, n_levels + 1):
            p[f"U{n}_e"] = _xavier(rng, k, d)
            p[f"U{n}_i"] = _xavier(rng, k, d)
        p["C"] = _xavier(rng, o, k)
    elif variant == "LearnableConcat":
        p["W2"] = _xavier(rng, d, d)
        p["W3"] = _xavier(rng, d, d)
    elif variant == "LatentInM":
        p["U1"] = _xavier(rng, k, d)
        p["U2"] = _xavier(rng, k, d)
        p["U3"] = _xavier(rng, k, d)
        p["C"] = _xavier(rng, o, k)
    return p


def _h_params_from(params: Mapping) -> HParams:
    n = 1
    while f"U{n + 1}_e" in params:
        n += 1
    return HParams(U_e=[params[f"U{m}_e"] for m in range(1, n + 1)],
                   U_i=[params[f"U{m}_i"] for m in range(1, n + 1)],
                   C=params["C"])


def variant_forward(variant: str, params: Mapping, e, i, l=None, tape=None) -> Var:
    """Evaluate the selected conditioning variant; returns a differentiable Var."""
    vals = [v for v in params.values()]
    t = _find_tape(e, i, l, *vals, tape=tape)
    e = ad._coerce(t, e)
    i = ad._coerce(t, i)

    if variant == "Baseline":
        return ad.concat([e, i])
    if variant == "A1":
        return ad.matvec(params["W2"], e) + ad.matvec(params["W3"], i)
    if variant == "A2":
        return ad.mul(e, i) + ad.matvec(params["W2"], e) + ad.matvec(params["W3"], i)
    if variant == "A3":
        W1 = params["W1"]
        return ad.matvec(W1, ad.mul(e, i)) + ad.matvec(W1, e) + ad.matvec(W1, i)
    if variant == "A4":
        return ad.matvec(params["W1"], ad.mul(e, i))
    if variant == "A5":
        p2 = ad.matvec(params["W2"], e)
        p3 = ad.matvec(params["W3"], i)
        return ad.mul(p2, p3) + p2 + p3
    if variant == "A6":
        return (ad.matvec(params["W1"], ad.mul(e, i))
                + ad.matvec(params["W2"], e) + ad.matvec(params["W3"], i))
    if variant == "A7":
        W = ad._coerce(t, params["W_tensor"])
        o, d = W.shape[0], W.shape[1]
        # W x_2 e x_3 i through reshapes: contract i first, then e
        Yi = ad.matmul(ad.reshape(W, (o * d, d)), ad.reshape(i, (d, 1)))
        return ad.matvec(ad.reshape(Yi, (o, d)), e)
    if variant in ("M", "HigherOut_o256"):
        p = MParams(U1=params["U1"], U2=params["U2"], C=params["C"],
                    W2=params["W2"], W3=params["W3"])
        return m_forward(p, e, i, tape=t)
    if variant == "H":
        return h_forward(_h_params_from(params), e, i, tape=t)
    if variant == "LearnableConcat":
        return ad.concat([ad.matvec(params["W2"], e), ad.matvec(params["W3"], i)])
    if variant == "LatentInM":
        if l is None:
            raise ConfigError("LatentInM needs the latent code l")
        l = ad._coerce(t, l)
        ue = ad.matvec(params["U1"], e)
        ui = ad.matvec(params["U2"], i)
        ul = ad.matvec(params["U3"], l)
        inner = (ad.mul(ad.mul(ue, ui), ul)
                 + ad.mul(ue, ui) + ad.mul(ue, ul) + ad.mul(ui, ul)
                 + ue + ui + ul)
        return ad.matvec(params["C"], inner)
    raise ConfigError(f"unknown variant {variant!r}")


def variant_value(variant: str, params: Mapping, e, i, l=None) -> np.ndarray:
    """Plain-numpy evaluation of a variant (fresh throwaway tape)."""
    return variant_forward(variant, params, e, i, l, tape=Tape()).value
