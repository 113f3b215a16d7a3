"""Kronecker-factored vectors, implicit operators and the restricted oracle.

A vector of length ``n**q`` is kept as its ``q`` factors of length ``n``.
Inner products, quadratic forms against rank-one operators and modal
contractions are evaluated factor by factor, so nothing of size ``n**q`` is
built unless the caller explicitly asks for it (and it fits under the
materialization cap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

DEFAULT_CAP = 2**24
SIGMA_FLOOR = 1e-13


class DimensionError(ValueError):
    pass


class CapacityError(MemoryError):
    pass


def _as_factors(factors) -> np.ndarray:
    arr = np.asarray(factors)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"factors must have shape (q, n) with q, n >= 1, got {arr.shape}")
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.float64)
    else:
        arr = arr.astype(np.complex128)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KronVector:
    """``x_1 (x) x_2 (x) ... (x) x_q`` stored as a ``(q, n)`` array of factors."""

    factors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "factors", _as_factors(self.factors))

    @classmethod
    def of(cls, *factors) -> "KronVector":
        fs = [np.asarray(f) for f in factors]
        if len({f.shape for f in fs}) > 1:
            raise DimensionError(f"factors differ in shape: {[f.shape for f in fs]}")
        return cls(np.stack(fs))

    @property
    def q(self) -> int:
        return self.factors.shape[0]

    @property
    def n(self) -> int:
        return self.factors.shape[1]

    @property
    def dim(self) -> int:
        return self.n**self.q

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.factors)

    def norm(self) -> float:
        return float(np.prod(np.linalg.norm(self.factors, axis=1)))

    def scaled(self, c) -> "KronVector":
        f = np.array(self.factors, dtype=np.result_type(self.factors, c))
        f[0] = f[0] * c
        return KronVector(f)

    def expand(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        return kron_expand(self, cap)


Operand = Union[KronVector, np.ndarray]


def _check_pair(u: KronVector, v: KronVector) -> None:
    if u.factors.shape != v.factors.shape:
        raise DimensionError(
            f"(q, n) mismatch: {u.factors.shape} vs {v.factors.shape}"
        )


def kron_inner(u: KronVector, v: KronVector, conjugate: bool = True):
    """Inner product of two Kronecker vectors as the product of factor inner products.

    The first argument is conjugated when ``conjugate`` is true; pass
    ``conjugate=False`` for the bilinear form ``u^T v``. Cost is ``O(nq)``.
    """
    _check_pair(u, v)
    a = np.conj(u.factors) if conjugate else u.factors
    val = np.prod(np.sum(a * v.factors, axis=1))
    if not (u.is_complex or v.is_complex):
        return float(val)
    return complex(val)


def kron_inner_batch(U: np.ndarray, V: np.ndarray, conjugate: bool = True) -> np.ndarray:
    """Batched ``kron_inner`` over leading axes of ``(..., q, n)`` factor arrays."""
    a = np.conj(U) if conjugate else U
    return np.prod(np.sum(a * V, axis=-1), axis=-1)


def kron_expand(v: KronVector, cap: int = DEFAULT_CAP) -> np.ndarray:
    if v.dim > cap:
        raise CapacityError(f"n**q = {v.dim} exceeds materialization cap {cap}")
    out = v.factors[0]
    for f in v.factors[1:]:
        out = np.kron(out, f)
    return np.array(out)


def expand_batch(F: np.ndarray, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Expand a ``(m, q, n)`` batch of factors to an ``(m, n**q)`` array."""
    m, q, n = F.shape
    if m * n**q > cap:
        raise CapacityError(f"batch of {m} vectors of length {n**q} exceeds cap {cap}")
    out = F[:, 0, :]
    for j in range(1, q):
        out = (out[:, :, None] * F[:, j, None, :]).reshape(m, -1)
    return out


def _dense(x: Operand, cap: int = DEFAULT_CAP) -> np.ndarray:
    if isinstance(x, KronVector):
        return kron_expand(x, cap)
    return np.asarray(x)


# ---------------------------------------------------------------------------
# Implicit operators


class ImplicitMatrix:
    """Base class of the structured operators reachable through the oracle."""

    n: int
    q: int

    @property
    def dim(self) -> int:
        return self.n**self.q

    def matvec(self, v: KronVector, cap: int = DEFAULT_CAP):
        raise NotImplementedError

    def vec_mat_vec(self, v: KronVector, cap: int = DEFAULT_CAP):
        raise NotImplementedError

    def to_dense(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        raise NotImplementedError

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.to_dense()))

    def _check(self, v: KronVector) -> None:
        if v.n != self.n or v.q != self.q:
            raise DimensionError(
                f"query has (n, q) = ({v.n}, {v.q}), operator expects ({self.n}, {self.q})"
            )


@dataclass(frozen=True, eq=False)
class Zero(ImplicitMatrix):
    n: int
    q: int

    def matvec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        if self.dim > cap:
            return v.scaled(0.0)
        return np.zeros(self.dim, dtype=v.factors.dtype)

    def vec_mat_vec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        return 0.0

    def to_dense(self, cap=DEFAULT_CAP):
        if self.dim**2 > cap:
            raise CapacityError("dense Zero exceeds cap")
        return np.zeros((self.dim, self.dim))

    def frobenius_norm(self):
        return 0.0


@dataclass(frozen=True, eq=False)
class RankOne(ImplicitMatrix):
    """``A = a a^H``: symmetric (Hermitian) PSD with ``tr(A) = ||a||^2``.

    ``a`` may be a :class:`KronVector` (factorized paths for any ``q``) or a
    dense vector of length ``n**q``.
    """

    a: Operand
    n: int = 0
    q: int = 0

    def __post_init__(self):
        if isinstance(self.a, KronVector):
            object.__setattr__(self, "n", self.a.n)
            object.__setattr__(self, "q", self.a.q)
        else:
            a = np.asarray(self.a)
            if self.n < 1 or self.q < 1 or a.shape != (self.n**self.q,):
                raise DimensionError("dense RankOne needs n, q and a of length n**q")
            object.__setattr__(self, "a", a)

    @property
    def structured(self) -> bool:
        return isinstance(self.a, KronVector)

    def _coef(self, v: KronVector, cap: int):
        # a^H v
        if self.structured:
            return kron_inner(self.a, v)
        return np.vdot(self.a, kron_expand(v, cap))

    def matvec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        c = self._coef(v, cap)
        if self.structured and self.dim > cap:
            return self.a.scaled(c)
        return _dense(self.a, cap) * c

    def vec_mat_vec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        return abs(self._coef(v, cap)) ** 2

    def trace(self) -> float:
        if self.structured:
            return float(np.prod(np.sum(np.abs(self.a.factors) ** 2, axis=1)))
        return float(np.vdot(self.a, self.a).real)

    def to_dense(self, cap=DEFAULT_CAP):
        if self.dim**2 > cap:
            raise CapacityError("dense RankOne exceeds cap")
        a = _dense(self.a, cap)
        return np.outer(a, np.conj(a))

    def frobenius_norm(self):
        return self.trace()


@dataclass(frozen=True, eq=False)
class ExplicitDense(ImplicitMatrix):
    matrix: np.ndarray
    n: int
    q: int

    def __post_init__(self):
        M = np.asarray(self.matrix)
        D = self.n**self.q
        if M.shape != (D, D):
            raise DimensionError(f"matrix must be {D}x{D}, got {M.shape}")
        M = M.copy()
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    def matvec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        return self.matrix @ kron_expand(v, cap)

    def vec_mat_vec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        x = kron_expand(v, cap)
        val = np.vdot(x, self.matrix @ x)
        return float(val.real) if val.imag == 0 else complex(val)

    def matvec_dense(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def to_dense(self, cap=DEFAULT_CAP):
        return np.array(self.matrix)


@dataclass(frozen=True, eq=False)
class SpikedWigner(ImplicitMatrix):
    """``(G + G^T) / sqrt(2D) + lam * u u^T`` with ``G`` drawn from ``wigner_seed``.

    ``G`` is generated once on first use and cached; the symmetric part is
    formed per product. ``lam = 0`` gives the null instance.
    """

    n: int
    q: int
    lam: float
    u: KronVector | None
    wigner_seed: int
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.dim**2 > self.cap:
            raise CapacityError(f"D^2 = {self.dim**2} exceeds cap {self.cap}")
        if self.lam > 0 and self.u is None:
            raise ValueError("a positive spike needs u")

    @cached_property
    def gaussian(self) -> np.ndarray:
        from .sampling import SeededStream

        G = SeededStream(self.wigner_seed, 0).normal((self.dim, self.dim))
        G.setflags(write=False)
        return G

    @cached_property
    def _u_dense(self):
        return None if self.u is None else kron_expand(self.u, self.cap)

    def matvec_dense(self, x: np.ndarray) -> np.ndarray:
        """Unrestricted product with an arbitrary length-``D`` vector."""
        G = self.gaussian
        out = (G @ x + G.T @ x) / np.sqrt(2.0 * self.dim)
        if self.lam > 0:
            ud = self._u_dense
            out = out + self.lam * ud * np.vdot(ud, x)
        return out

    def matvec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        return self.matvec_dense(kron_expand(v, cap))

    def vec_mat_vec(self, v, cap=DEFAULT_CAP):
        self._check(v)
        x = kron_expand(v, cap)
        return float(np.real(np.vdot(x, self.matvec_dense(x))))

    def to_dense(self, cap=DEFAULT_CAP):
        G = self.gaussian
        A = (G + G.T) / np.sqrt(2.0 * self.dim)
        if self.lam > 0:
            ud = self._u_dense
            A = A + self.lam * np.outer(ud, ud)
        return A


def matvec(A: ImplicitMatrix, v: KronVector, cap: int = DEFAULT_CAP):
    """Kronecker matrix-vector oracle: returns ``A @ expand(v)``.

    Dense output is returned while ``n**q`` is under ``cap``. Past the cap
    only ``Zero`` and structured ``RankOne`` can answer, and they answer with
    a :class:`KronVector`.
    """
    return A.matvec(v, cap)


def vec_mat_vec(A: ImplicitMatrix, v: KronVector, cap: int = DEFAULT_CAP):
    return A.vec_mat_vec(v, cap)


# ---------------------------------------------------------------------------
# Tensors and modal products


def as_tensor(entries, n: int, q: int) -> np.ndarray:
    arr = np.asarray(entries)
    if arr.size != n**q:
        raise DimensionError(f"need {n**q} entries for n={n}, q={q}, got {arr.size}")
    return arr.reshape((n,) * q)


def modal_product(T: np.ndarray, mode: int, w) -> np.ndarray:
    """Contract the mode-``mode`` fibers of ``T`` against ``w`` (1-based mode).

    The contraction is bilinear (no conjugation), so the order drops by one.
    """
    T = np.asarray(T)
    w = np.asarray(w)
    if not 1 <= mode <= T.ndim:
        raise DimensionError(f"mode {mode} out of range 1..{T.ndim}")
    if w.shape != (T.shape[mode - 1],):
        raise DimensionError(f"vector of length {w.shape} does not match mode size {T.shape[mode - 1]}")
    return np.tensordot(T, w, axes=([mode - 1], [0]))


def full_contraction(T: np.ndarray, v: KronVector):
    """``T x_1 v_1 x_2 v_2 ... x_q v_q`` evaluated by repeated modal products."""
    T = np.asarray(T)
    if T.ndim != v.q:
        raise DimensionError(f"tensor order {T.ndim} vs q={v.q}")
    # contracting the last mode first keeps the remaining mode indices fixed
    for mode in range(v.q, 0, -1):
        T = modal_product(T, mode, v.factors[mode - 1])
    return T[()]


def rank_one_tensor(v: KronVector) -> np.ndarray:
    return kron_expand(v).reshape((v.n,) * v.q)


# ---------------------------------------------------------------------------
# Query matrices


def _column_inner(x: Operand, y: Operand):
    if isinstance(x, KronVector) and isinstance(y, KronVector):
        return kron_inner(x, y)
    return np.vdot(_dense(x), _dense(y))


@dataclass(eq=False)
class QueryMatrix:
    """Columns ``v^(1..t)`` of the stacked queries and their running Gram matrix.

    Appending is single-writer; the Gram matrix grows by one row/column per
    append using ``kron_inner`` when both columns are factored.
    """

    columns: list = field(default_factory=list)
    gram: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        cols, self.columns = list(self.columns), []
        self.gram = np.zeros((0, 0))
        for c in cols:
            self.append(c)

    @property
    def t(self) -> int:
        return len(self.columns)

    def append(self, v: Operand) -> None:
        if not isinstance(v, KronVector):
            v = np.asarray(v)
        if self.columns:
            d0 = _dim(self.columns[0])
            if _dim(v) != d0:
                raise DimensionError(f"column of dimension {_dim(v)} vs {d0}")
        row = np.array([_column_inner(c, v) for c in self.columns] + [_column_inner(v, v)])
        t = self.t
        dtype = np.result_type(self.gram, row)
        G = np.zeros((t + 1, t + 1), dtype=dtype)
        G[:t, :t] = self.gram
        G[:t, t] = row[:t]
        G[t, :t] = np.conj(row[:t])
        G[t, t] = row[t].real
        self.gram = G
        self.columns.append(v)

    def dense(self, cap: int = DEFAULT_CAP) -> np.ndarray:
        return np.stack([_dense(c, cap) for c in self.columns], axis=1)

    def normalized(self) -> "QueryMatrix":
        out = QueryMatrix()
        for c in self.columns:
            if isinstance(c, KronVector):
                out.append(c.scaled(1.0 / c.norm()))
            else:
                out.append(c / np.linalg.norm(c))
        return out

    def adjoint_apply(self, u: Operand) -> np.ndarray:
        """``V^H u``."""
        return np.array([_column_inner(c, u) for c in self.columns])


def _dim(v: Operand) -> int:
    return v.dim if isinstance(v, KronVector) else int(np.asarray(v).shape[0])


def condition_number(V: QueryMatrix) -> float:
    """``sigma_max / sigma_min`` of ``V`` from the eigenvalues of its Gram matrix.

    Returns ``inf`` when ``V`` is numerically rank deficient: ``sigma_min`` is
    below ``1e-13 * sigma_max``, or the smallest Gram eigenvalue is within
    rounding (``t * eps * lambda_max``) of zero.
    """
    if V.t == 0:
        raise ValueError("empty query matrix")
    ev = np.linalg.eigvalsh(V.gram)
    lmax = ev[-1]
    if lmax <= 0:
        raise ValueError("query matrix has only zero columns")
    floor = max(SIGMA_FLOOR**2, V.t * np.finfo(float).eps) * lmax
    if ev[0] <= floor:
        return float("inf")
    return float(np.sqrt(lmax / ev[0]))


@dataclass
class ProjectionEnergy:
    per_column: np.ndarray
    total: float
    dropped: list
    kappa: float
    conditioning_bound: float


def _gs_coefficients(gram: np.ndarray, rel_tol: float):
    """Modified Gram-Schmidt in coefficient space.

    Returns rows ``C`` so that ``x_i = sum_j C[i, j] v_j`` are orthonormal in
    the inner product defined by ``gram``, plus the dropped column indices.
    """
    t = gram.shape[0]
    ip = lambda a, b: np.vdot(a, gram @ b)
    basis, dropped = [], []
    for j in range(t):
        c = np.zeros(t, dtype=gram.dtype)
        c[j] = 1.0
        start = np.sqrt(max(ip(c, c).real, 0.0))
        if start == 0:
            dropped.append(j)
            continue
        nrm = start
        for _ in range(2):
            before = nrm
            for b in basis:
                c = c - ip(b, c) * b
            nrm = np.sqrt(max(ip(c, c).real, 0.0))
            if nrm >= before / np.sqrt(2.0):
                break
        if nrm <= rel_tol * start:
            dropped.append(j)
            continue
        basis.append(c / nrm)
    return np.array(basis).reshape(len(basis), t), dropped


def _gs_dense(cols: np.ndarray, rel_tol: float):
    basis, dropped = [], []
    for j in range(cols.shape[1]):
        x = np.array(cols[:, j])
        start = np.linalg.norm(x)
        if start == 0:
            dropped.append(j)
            continue
        nrm = start
        for _ in range(2):
            before = nrm
            for b in basis:
                x = x - np.vdot(b, x) * b
            nrm = np.linalg.norm(x)
            if nrm >= before / np.sqrt(2.0):
                break
        if nrm <= rel_tol * start:
            dropped.append(j)
            continue
        basis.append(x / nrm)
    return basis, dropped


def projection_energy(V: QueryMatrix, u: Operand, cap: int = DEFAULT_CAP) -> ProjectionEnergy:
    """Squared overlaps of ``u`` with the Gram-Schmidt basis of ``range(V)``.

    Factored columns are orthonormalized in the ``t``-dimensional coefficient
    space (only ``kron_inner`` is needed); dense columns directly. Dependent
    columns are dropped and listed. When nothing is dropped, each overlap is
    checked against ``kappa^2 ||V^T u||^2`` computed on unit-normalized
    columns and a violation raises ``ArithmeticError``.
    """
    if V.t == 0:
        raise ValueError("empty query matrix")
    factored = all(isinstance(c, KronVector) for c in V.columns) and isinstance(u, KronVector)
    if factored:
        C, dropped = _gs_coefficients(V.gram, 1e-7)
        b = V.adjoint_apply(u)
        overlaps = C.conj() @ b if C.size else np.zeros(0)
    else:
        basis, dropped = _gs_dense(V.dense(cap), 1e-12)
        ud = _dense(u, cap)
        overlaps = np.array([np.vdot(x, ud) for x in basis])
    per_column = np.abs(overlaps) ** 2
    total = float(per_column.sum())

    Vn = V.normalized()
    kappa = condition_number(Vn)
    unorm2 = _column_inner(u, u).real
    bound = float("inf")
    if not dropped and np.isfinite(kappa) and unorm2 > 0:
        bound = kappa**2 * float(np.sum(np.abs(Vn.adjoint_apply(u)) ** 2))
        if per_column.max() > bound + 1e-9 * unorm2:
            raise ArithmeticError(
                f"overlap {per_column.max()} exceeds kappa^2 ||V^T u||^2 = {bound}"
            )
    return ProjectionEnergy(per_column, total, dropped, kappa, bound)
