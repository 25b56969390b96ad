"""Dense small-tensor kernels and CP-decomposition oracles.

Everything here is plain float64 numpy over immutable inputs; these functions
are the ground truth the factored interaction modules are tested against.
Index convention for third-order tensors: W[a, b, c] with a the output axis,
stored row-major (C order), flat offset a*d*d + b*d + c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class Tensor3:
    """Third-order tensor of shape (o, d, d), row-major contiguous."""

    data: np.ndarray
    o: int
    d: int

    @classmethod
    def from_array(cls, data) -> "Tensor3":
        a = _as_f64(data)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise DimensionError(f"Tensor3 expects shape (o, d, d), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError("Tensor3 entries must be finite")
        return cls(data=a, o=a.shape[0], d=a.shape[1])


@dataclass(frozen=True)
class FactorTriple:
    """CP factors: C (o x k), A (d x k), B (d x k), shared rank k."""

    C: np.ndarray
    A: np.ndarray
    B: np.ndarray
    k: int

    @classmethod
    def from_arrays(cls, C, A, B) -> "FactorTriple":
        C, A, B = _as_f64(C), _as_f64(A), _as_f64(B)
        if C.ndim != 2 or A.ndim != 2 or B.ndim != 2:
            raise DimensionError("factors must be matrices")
        k = C.shape[1]
        if A.shape[1] != k or B.shape[1] != k:
            raise DimensionError(
                f"factor column counts differ: C has {k}, A has {A.shape[1]}, B has {B.shape[1]}"
            )
        for name, m in (("C", C), ("A", A), ("B", B)):
            if not np.all(np.isfinite(m)):
                raise NumericError(f"factor {name} has non-finite entries")
        return cls(C=C, A=A, B=B, k=k)


def hadamard(a, b) -> np.ndarray:
    """Element-wise product of two equal-length vectors."""
    a, b = _as_f64(a), _as_f64(b)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} vs {b.shape}")
    return a * b


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product: column j is kron(A[:, j], B[:, j]).

    Row ordering is A-major: output row p*d2 + q holds A[p, j] * B[q, j].
    """
    A, B = _as_f64(A), _as_f64(B)
    if A.ndim != 2 or B.ndim != 2:
        raise DimensionError("khatri_rao expects matrices")
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"khatri_rao: column counts {A.shape[1]} vs {B.shape[1]}")
    d1, k = A.shape
    d2 = B.shape[0]
    # (d1, 1, k) * (1, d2, k) -> (d1, d2, k), A index varying slowest
    return (A[:, None, :] * B[None, :, :]).reshape(d1 * d2, k)


def mode_contract(W: Tensor3, e, i) -> np.ndarray:
    """Contract modes 2 and 3 of W with vectors e and i: out[a] = sum_bc W[a,b,c] e[b] i[c]."""
    e, i = _as_f64(e), _as_f64(i)
    if e.shape != (W.d,) or i.shape != (W.d,):
        raise DimensionError(
            f"mode_contract: expected vectors of length {W.d}, got {e.shape} and {i.shape}"
        )
    return np.einsum("abc,b,c->a", W.data, e, i)


def cp_expand(f: FactorTriple) -> Tensor3:
    """Expand CP factors to the dense tensor: W[a,b,c] = sum_j C[a,j] A[b,j] B[c,j]."""
    if f.A.shape != f.B.shape:
        raise DimensionError(f"cp_expand: A and B must share shape, got {f.A.shape} vs {f.B.shape}")
    data = np.einsum("aj,bj,cj->abc", f.C, f.A, f.B)
    return Tensor3.from_array(data)


def m_full_oracle(W: Tensor3, W2, W3, e, i) -> np.ndarray:
    """Full second-degree interaction: bilinear tensor term plus linear maps of e and i."""
    W2, W3 = _as_f64(W2), _as_f64(W3)
    e, i = _as_f64(e), _as_f64(i)
    if W2.shape != (W.o, W.d) or W3.shape != (W.o, W.d):
        raise DimensionError(
            f"m_full_oracle: linear maps must be {(W.o, W.d)}, got {W2.shape} and {W3.shape}"
        )
    return mode_contract(W, e, i) + W2 @ e + W3 @ i
