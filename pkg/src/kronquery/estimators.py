"""Estimators that touch an operator only through Kronecker-structured queries."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import (
    DEFAULT_CAP,
    ImplicitMatrix,
    KronVector,
    QueryMatrix,
    RankOne,
    Zero,
    expand_batch,
    full_contraction,
    kron_inner_batch,
)
from .sampling import ConfigurationError, FactorDistribution, SeededStream, sample_kron_batch

ZERO_THRESHOLD = 1e-12


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class QueryBudget:
    t_max: int
    stop_early: bool = True

    def __post_init__(self):
        if self.t_max < 1:
            raise ConfigurationError("t_max must be positive")


class Verdict(enum.Enum):
    ZERO = "Zero"
    NONZERO = "NonZero"

    def __str__(self):
        return self.value


@dataclass
class ZeroTestVerdict:
    verdict: Verdict
    queries_used: int
    first_hit_index: int | None = None
    responses: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def nonzero(self) -> bool:
        return self.verdict is Verdict.NONZERO


@dataclass
class EstimateReport:
    value: float
    queries_used: int
    per_query_values: np.ndarray = field(repr=False)


def _operand_shape(A):
    if isinstance(A, ImplicitMatrix):
        return A.n, A.q
    if isinstance(A, KronVector):
        return A.n, A.q
    T = np.asarray(A)
    return T.shape[0], T.ndim


def _operand_norm(A) -> float:
    if isinstance(A, KronVector):
        return A.norm()
    if isinstance(A, ImplicitMatrix):
        return A.frobenius_norm()
    return float(np.linalg.norm(np.asarray(A)))


def _responses(A, Q: np.ndarray) -> np.ndarray:
    """Measurements of ``A`` against a ``(k, q, n)`` batch of queries.

    Matrices answer with the quadratic form ``v^H A v``; tensors (given as an
    ndarray of order ``q`` or as a rank-one :class:`KronVector`) answer with
    the bilinear contraction ``<A, v_1 (x) ... (x) v_q>``.
    """
    if isinstance(A, KronVector):
        return kron_inner_batch(A.factors[None], Q, conjugate=False)
    if isinstance(A, Zero):
        return np.zeros(Q.shape[0])
    if isinstance(A, RankOne) and A.structured:
        return np.abs(kron_inner_batch(A.a.factors[None], Q)) ** 2
    if isinstance(A, ImplicitMatrix):
        return np.array([A.vec_mat_vec(KronVector(f)) for f in Q])
    T = np.asarray(A)
    return np.array([full_contraction(T, KronVector(f)) for f in Q])


def _factor_cosines(F: np.ndarray, Q: np.ndarray, conjugate: bool) -> np.ndarray:
    # |<f_j, v_j>| / (||f_j|| ||v_j||) for every query and mode, shape (k, q)
    G = np.conj(F) if conjugate else F
    num = np.abs(np.einsum("jn,kjn->kj", G, Q))
    den = np.linalg.norm(F, axis=1)[None, :] * np.linalg.norm(Q, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def _hits(A, Q: np.ndarray, w: np.ndarray, zero_threshold: float) -> np.ndarray:
    """Mask of responses that count as nonzero.

    A Kronecker-structured response is a product of per-mode inner products
    and vanishes exactly when one of them does, so the threshold is applied
    to each mode's normalized inner product. Anything else is compared with
    ``zero_threshold`` times the operand norm and the query norm (squared for
    matrices, whose response is quadratic in the query).
    """
    if isinstance(A, KronVector):
        return _factor_cosines(A.factors, Q, False).min(axis=1) > zero_threshold
    if isinstance(A, RankOne) and A.structured:
        return _factor_cosines(A.a.factors, Q, True).min(axis=1) > zero_threshold
    power = 2 if isinstance(A, ImplicitMatrix) else 1
    qnorm = np.prod(np.linalg.norm(Q, axis=2), axis=1) ** power
    return np.abs(w) > zero_threshold * _operand_norm(A) * qnorm


def zero_test(A, d: FactorDistribution, m: int, s: SeededStream,
              zero_threshold: float = ZERO_THRESHOLD, chunk: int = 256) -> ZeroTestVerdict:
    """Decide ``A == 0`` from up to ``m`` i.i.d. Kronecker measurements.

    Stops at the first response that clears ``zero_threshold`` (see
    :func:`_hits` for how the threshold is scaled).
    """
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    n, q = _operand_shape(A)
    if d.n != n:
        raise ConfigurationError(f"distribution has n={d.n}, operand has n={n}")
    seen = []
    used = 0
    while used < m:
        k = min(chunk, m - used)
        Q = sample_kron_batch(d, q, k, s)
        w = _responses(A, Q)
        hit = np.flatnonzero(_hits(A, Q, w, zero_threshold))
        if hit.size:
            j = int(hit[0])
            seen.append(w[: j + 1])
            return ZeroTestVerdict(Verdict.NONZERO, used + j + 1, used + j, np.concatenate(seen))
        seen.append(w)
        used += k
    return ZeroTestVerdict(Verdict.ZERO, used, None, np.concatenate(seen))


def required_queries_upper(Q_value, q: int) -> int:
    """``ceil(2 * Q^-q)``, the measurement count that drives failure below 1/4."""
    Qf = Fraction(Q_value)
    if Qf <= 0 or Qf > 1:
        raise ConfigurationError(f"Q must lie in (0, 1], got {Q_value}")
    return math.ceil(2 * Qf ** (-q))


def _check_isotropic(d: FactorDistribution):
    if not d.isotropic:
        raise ConfigurationError(f"{d!r} is not isotropic; Hutchinson would be biased")


def hutchinson_trace(A: ImplicitMatrix, d: FactorDistribution, t: int, s: SeededStream,
                     chunk: int = 1024) -> EstimateReport:
    """Khatri-Rao Hutchinson estimate ``(1/t) sum_i v_i^H A v_i`` of ``tr(A)``.

    Unit-sphere factors are rescaled by ``n`` per factor so every supported
    law is isotropic.
    """
    _check_isotropic(d)
    if t < 1:
        raise ConfigurationError("t must be >= 1")
    scale = d.hutchinson_scale**A.q
    vals = []
    done = 0
    while done < t:
        k = min(chunk, t - done)
        Q = sample_kron_batch(d, A.q, k, s)
        w = _responses(A, Q)
        vals.append(np.real(w) * scale)
        done += k
    per = np.concatenate(vals)
    return EstimateReport(float(per.mean()), t, per)


def _linear_measurements(a, Q: np.ndarray, cap: int) -> np.ndarray:
    if isinstance(a, KronVector):
        return kron_inner_batch(a.factors[None], Q)
    a = np.asarray(a)
    m, q, n = Q.shape
    if a.shape != (n**q,):
        raise ConfigurationError(f"vector of length {a.shape} does not match n**q = {n**q}")
    if m * n**q <= cap:
        return expand_batch(Q, cap) @ np.conj(a)
    T = np.conj(a).reshape((n,) * q)
    return np.array([full_contraction(T, KronVector(f)) for f in Q])


def l2_estimate(a, d: FactorDistribution, t: int, s: SeededStream, chunk: int = 1024,
                cap: int = DEFAULT_CAP) -> EstimateReport:
    """Estimate ``||a||^2`` as the mean of squared linear measurements ``<a, v_i>``."""
    _check_isotropic(d)
    if t < 1:
        raise ConfigurationError("t must be >= 1")
    n = d.n
    if isinstance(a, KronVector):
        q = a.q
    else:
        q = round(math.log(len(a), n))
        if n**q != len(a):
            raise ConfigurationError(f"length {len(a)} is not a power of n={n}")
    scale = d.hutchinson_scale**q
    vals = []
    done = 0
    while done < t:
        k = min(chunk, t - done)
        Q = sample_kron_batch(d, q, k, s)
        vals.append(np.abs(_linear_measurements(a, Q, cap)) ** 2 * scale)
        done += k
    per = np.concatenate(vals)
    return EstimateReport(float(per.mean()), t, per)


@dataclass
class QueryTranscript:
    """Ordered ``(query, response)`` pairs plus the stacked query matrix."""

    queries: list = field(default_factory=list)
    responses: list = field(default_factory=list)
    matrix: QueryMatrix = field(default_factory=QueryMatrix)

    def record(self, query, response) -> None:
        self.queries.append(query)
        self.responses.append(response)
        self.matrix.append(query)

    def __len__(self):
        return len(self.queries)


def _norm(x) -> float:
    if isinstance(x, KronVector):
        return x.norm()
    return float(np.linalg.norm(np.atleast_1d(np.asarray(x))))


def threshold_distinguisher(transcript: QueryTranscript, threshold: float) -> int:
    """1 when some ``||response|| / ||query||`` exceeds ``threshold``, else 0."""
    if len(transcript) == 0:
        raise ValueError("empty transcript")
    ratios = [_norm(w) / _norm(v) for v, w in zip(transcript.queries, transcript.responses)]
    return int(max(ratios) > threshold)
