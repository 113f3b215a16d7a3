"""Lower-bound instance generators, the distinguishing game and KL/TV diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import binomtest

from .core import (
    DEFAULT_CAP,
    ImplicitMatrix,
    KronVector,
    QueryMatrix,
    RankOne,
    SpikedWigner,
    condition_number,
)
from .estimators import BudgetExceeded, QueryBudget, QueryTranscript, threshold_distinguisher
from .sampling import (
    Alphabet,
    ConfigurationError,
    FactorDistribution,
    SeededStream,
    UnitSphere,
    adversary_for,
    make_planted_vector,
    sample_kron,
    sample_kron_batch,
)

WILSON_95 = 0.95


def wilson_interval(successes: int, trials: int, confidence: float = WILSON_95):
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def wilson_halfwidth(successes: int, trials: int, confidence: float = WILSON_95) -> float:
    lo, hi = wilson_interval(successes, trials, confidence)
    return (hi - lo) / 2.0


# ---------------------------------------------------------------------------
# Instances


def make_spiked_pair(n: int, q: int, lam: float, coin: int, s: SeededStream,
                     cap: int = DEFAULT_CAP) -> SpikedWigner:
    """One arm of the Wigner-versus-spiked-Wigner pair.

    The Wigner seed and the spike direction are drawn from ``s`` before the
    coin is consulted, so both arms share ``G`` and ``u`` and differ only by
    ``lam u u^T``.
    """
    if lam < 0:
        raise ConfigurationError("lam must be nonnegative")
    wigner_seed = s.raw()
    u = sample_kron(UnitSphere(n), q, s)
    return SpikedWigner(n, q, float(lam) if coin else 0.0, u, wigner_seed, cap)


def make_trace_hard_instance(alphabet: Alphabet, n: int, q: int, s: SeededStream) -> RankOne:
    """``x x^T`` with ``x`` a Kronecker product of adversarial factors for ``alphabet``."""
    pmf = adversary_for(alphabet, n)
    return RankOne(KronVector(pmf.draw(s, q)))


# ---------------------------------------------------------------------------
# Closed-form diagnostics


def _as_matrix(V) -> np.ndarray:
    if isinstance(V, QueryMatrix):
        return V.dense()
    return np.asarray(V, dtype=float)


def kl_nonadaptive(V, u, lam: float):
    """KL divergence between ``N(lam V^T u, V^T V)`` and ``N(0, V^T V)``.

    Returns ``(kl, bound)`` where ``kl = lam^2/2 u^T V (V^T V)^{-1} V^T u``
    and ``bound = lam^2/2 kappa^2 ||V^T u||^2`` evaluated on unit-normalized
    columns (the divergence itself does not depend on column scaling).
    """
    M = _as_matrix(V)
    u = np.asarray(u.expand() if isinstance(u, KronVector) else u, dtype=float)
    if M.ndim != 2 or M.shape[0] != u.shape[0]:
        raise ConfigurationError(f"V has shape {M.shape}, u has length {u.shape[0]}")
    gram = M.T @ M
    Vm = QueryMatrix(list(M.T))
    if not np.isfinite(condition_number(Vm)):
        raise np.linalg.LinAlgError("V is rank deficient")
    b = M.T @ u
    kl = 0.5 * lam**2 * float(b @ np.linalg.solve(gram, b))
    Mn = M / np.linalg.norm(M, axis=0)
    kappa = condition_number(QueryMatrix(list(Mn.T)))
    bn = Mn.T @ u
    bound = 0.5 * lam**2 * kappa**2 * float(bn @ bn)
    return kl, bound


def tv_upper_from_kl(kl: float) -> float:
    """Pinsker: ``D_TV <= sqrt(KL / 2)``, clamped to 1."""
    if kl < 0:
        raise ValueError("KL divergence must be nonnegative")
    return min(1.0, math.sqrt(kl / 2.0))


# ---------------------------------------------------------------------------
# Distinguishing game


@dataclass(frozen=True)
class PlantedVector:
    n: int
    q: int
    eps: float


@dataclass(frozen=True)
class SpikedWignerFamily:
    n: int
    q: int
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be nonnegative")


class GameOracle:
    """Budgeted oracle handed to a policy for one trial.

    ``query`` accepts Kronecker vectors only; ``query_dense`` is available
    when the game is played without the Kronecker restriction. Every call is
    recorded in :attr:`transcript`.
    """

    def __init__(self, target, budget: QueryBudget, unrestricted: bool = False):
        self._target = target
        self.budget = budget
        self.unrestricted = unrestricted
        self.transcript = QueryTranscript()
        q = target.q if isinstance(target, ImplicitMatrix) else None
        self.n = target.n if isinstance(target, ImplicitMatrix) else None
        self.q = q

    @property
    def used(self) -> int:
        return len(self.transcript)

    def _spend(self):
        if self.used >= self.budget.t_max:
            raise BudgetExceeded(f"more than {self.budget.t_max} queries")

    def query(self, v: KronVector):
        self._spend()
        if isinstance(self._target, ImplicitMatrix):
            w = self._target.matvec(v)
        else:
            # linear measurement of a planted vector
            w = float(np.dot(self._target, v.expand()))
        self.transcript.record(v, w)
        return w

    def query_dense(self, x: np.ndarray):
        if not self.unrestricted:
            raise PermissionError("dense queries are not allowed under the Kronecker restriction")
        self._spend()
        x = np.asarray(x)
        w = self._target.matvec_dense(x) if isinstance(self._target, ImplicitMatrix) else float(self._target @ x)
        self.transcript.record(x, w)
        return w


Policy = Callable[[GameOracle, SeededStream], int]


def blind_policy(guess: int = 0) -> Policy:
    def policy(oracle, stream):
        return guess
    return policy


@dataclass
class ThresholdPolicy:
    """Issue ``t`` i.i.d. Kronecker queries, then apply :func:`threshold_distinguisher`."""

    dist: FactorDistribution
    t: int
    threshold: float

    def __call__(self, oracle: GameOracle, stream: SeededStream) -> int:
        Q = sample_kron_batch(self.dist, oracle.q, self.t, stream)
        for f in Q:
            oracle.query(KronVector(f))
        return threshold_distinguisher(oracle.transcript, self.threshold)


@dataclass
class PowerIterationPolicy:
    """Unrestricted baseline: dense power iteration, declare a spike when
    the final ``||A x||`` exceeds ``threshold``."""

    iterations: int = 20
    threshold: float = 10.0

    def __call__(self, oracle: GameOracle, stream: SeededStream) -> int:
        D = oracle.n**oracle.q
        x = stream.normal(D)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(self.iterations):
            y = oracle.query_dense(x)
            est = float(np.linalg.norm(y))
            if est == 0:
                break
            x = y / est
        return int(est > self.threshold)


@dataclass
class GameSpec:
    family: PlantedVector | SpikedWignerFamily
    trials: int
    algorithm: Policy
    budget: QueryBudget
    unrestricted: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")


@dataclass
class TrialOutcome:
    coin: int
    guess: int
    correct: bool
    queries: int
    kappa: float
    aborted: bool


@dataclass
class GameReport:
    success_rate: float
    wilson_halfwidth: float
    mean_queries: float
    kappa_max: float
    trials: int
    successes: int
    aborted: int
    outcomes: list = field(default_factory=list, repr=False)

    @property
    def wilson(self):
        return wilson_interval(self.successes, self.trials)


def play_trial(spec: GameSpec, stream: SeededStream) -> TrialOutcome:
    """One round: fair coin, instance, policy, score. Budget overruns score as failures."""
    coin = int(stream.bits())
    fam = spec.family
    if isinstance(fam, SpikedWignerFamily):
        target = make_spiked_pair(fam.n, fam.q, fam.lam, coin, stream)
    else:
        target, _ = make_planted_vector(fam.n, fam.q, fam.eps, coin, stream)
    oracle = GameOracle(target, spec.budget, spec.unrestricted)
    if not isinstance(target, ImplicitMatrix):
        oracle.n, oracle.q = fam.n, fam.q
    aborted = False
    try:
        guess = int(spec.algorithm(oracle, stream))
    except BudgetExceeded:
        guess, aborted = -1, True
    kappa = 1.0
    if oracle.used:
        cols = oracle.transcript.matrix
        kappa = condition_number(cols.normalized())
    return TrialOutcome(coin, guess, (not aborted) and guess == coin, oracle.used, kappa, aborted)


def run_game(spec: GameSpec, seed: int, stream_offset: int = 0, threads: int = 1) -> GameReport:
    """Play ``spec.trials`` independent rounds; trial ``i`` uses stream ``offset + i``."""
    def one(i):
        return play_trial(spec, SeededStream(seed, stream_offset + i))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(one, range(spec.trials)))
    else:
        outcomes = [one(i) for i in range(spec.trials)]
    wins = sum(o.correct for o in outcomes)
    return GameReport(
        success_rate=wins / spec.trials,
        wilson_halfwidth=wilson_halfwidth(wins, spec.trials),
        mean_queries=float(np.mean([o.queries for o in outcomes])),
        kappa_max=float(max(o.kappa for o in outcomes)),
        trials=spec.trials,
        successes=wins,
        aborted=sum(o.aborted for o in outcomes),
        outcomes=outcomes,
    )
