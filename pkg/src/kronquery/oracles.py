"""Independent verification: exact enumeration, digamma analytics and Monte Carlo.

Nothing here reuses the factorized fast paths it is meant to check. Game
values are computed over the finite probability space in exact rational
(or Gaussian-rational) arithmetic and converted to float only for display.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import special

from .core import KronVector, QueryMatrix, projection_energy
from .sampling import (
    Alphabet,
    ConfigurationError,
    ExplicitPMF,
    Gaussian,
    SeededStream,
    UnitSphere,
    sample_kron_batch,
)

ENUMERATION_CAP = 10**7


class EnumerationTooLarge(ConfigurationError):
    pass


# ---------------------------------------------------------------------------
# Exact scalars: pairs (re, im) of Fractions, exact on the binary value of floats


def _exact(x):
    z = complex(x)
    return (Fraction(z.real), Fraction(z.imag))


def _dot_exact(v, u, conjugate: bool = False):
    re, im = Fraction(0), Fraction(0)
    for a, b in zip(v, u):
        ar, ai = _exact(a)
        br, bi = _exact(b)
        if conjugate:
            ai = -ai
        re += ar * br - ai * bi
        im += ar * bi + ai * br
    return re, im


def _is_zero(z) -> bool:
    return z[0] == 0 and z[1] == 0


def _kron_exact(vectors):
    out = [1]
    for v in vectors:
        out = [a * b for a in out for b in v]
    return out


# ---------------------------------------------------------------------------
# Game values


@dataclass
class GameValueReport:
    alphabet: Alphabet
    n: int
    detection_prob: Fraction
    witness_u: tuple
    method: str = "enumeration"
    per_candidate: dict = field(default_factory=dict, repr=False)

    def __float__(self):
        return float(self.detection_prob)


def eval_detection_prob(dist: ExplicitPMF, u: Sequence, conjugate: bool = False) -> Fraction:
    """``Pr_{v ~ dist}[v^T u != 0]`` exactly (bilinear unless ``conjugate``)."""
    if len(u) != dist.n:
        raise ConfigurationError(f"u has length {len(u)}, distribution has n={dist.n}")
    return sum(
        (w for v, w in zip(dist.support, dist.weights) if not _is_zero(_dot_exact(v, u, conjugate))),
        Fraction(0),
    )


def _check_enumeration(alphabet: Alphabet, n: int):
    if alphabet.size**n > ENUMERATION_CAP:
        raise EnumerationTooLarge(f"|L|^n = {alphabet.size**n} exceeds {ENUMERATION_CAP}")


def _int_parts(rows):
    """``(re, im)`` int64 arrays when every entry is a Gaussian integer, else ``None``."""
    arr = np.asarray(rows, dtype=np.complex128)
    re, im = arr.real, arr.imag
    if not (np.all(re == np.round(re)) and np.all(im == np.round(im))):
        return None
    if max(np.abs(re).max(initial=0), np.abs(im).max(initial=0)) > 2**20:
        return None
    return re.astype(np.int64), im.astype(np.int64)


def _nonzero_bilinear(S, U, conjugate):
    """Exact ``S @ U.T != 0`` for Gaussian-integer ``(re, im)`` pairs."""
    sr, si = S
    ur, ui = U
    if conjugate:
        si = -si
    re = sr @ ur.T - si @ ui.T
    im = sr @ ui.T + si @ ur.T
    return (re != 0) | (im != 0)


def _points(alphabet: Alphabet, n: int, chunk: int = 100_000):
    it = itertools.product(alphabet.symbols, repeat=n)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield block


def alphabet_worst_case(dist: ExplicitPMF, alphabet: Alphabet, n: int,
                        conjugate: bool = False) -> GameValueReport:
    """Max over ``u in L^n`` of the detection probability under ``dist``.

    This is an exact upper bound on ``P_F(L, n)`` certified by ``dist``.
    Gaussian-integer inputs are handled with exact int64 products; anything
    else falls back to rational arithmetic.
    """
    if dist.n != n:
        raise ConfigurationError(f"distribution has n={dist.n}, asked for n={n}")
    _check_enumeration(alphabet, n)
    S = _int_parts(dist.support)
    best, witness = Fraction(-1), None
    if S is not None and _int_parts(list(alphabet.symbols)) is not None:
        den = math.lcm(*(w.denominator for w in dist.weights))
        num = np.array([int(w * den) for w in dist.weights], dtype=np.int64)
        for block in _points(alphabet, n):
            mask = _nonzero_bilinear(S, _int_parts(block), conjugate)
            score = num @ mask
            j = int(np.argmax(score))
            p = Fraction(int(score[j]), den)
            if p > best:
                best, witness = p, tuple(block[j])
        return GameValueReport(alphabet, n, best, witness)
    for u in itertools.product(alphabet.symbols, repeat=n):
        p = eval_detection_prob(dist, u, conjugate)
        if p > best:
            best, witness = p, u
    return GameValueReport(alphabet, n, best, witness)


def iid_detection_prob(alphabet: Alphabet, v: Sequence, conjugate: bool = False) -> Fraction:
    """``Pr[v^T u != 0]`` for ``u`` with i.i.d. uniform entries from ``alphabet``."""
    n = len(v)
    _check_enumeration(alphabet, n)
    V = _int_parts([v])
    if V is not None and _int_parts(list(alphabet.symbols)) is not None:
        hits = sum(int(_nonzero_bilinear(V, _int_parts(block), conjugate).sum())
                   for block in _points(alphabet, n))
        return Fraction(hits, alphabet.size**n)
    hits = sum(
        1 for u in itertools.product(alphabet.symbols, repeat=n)
        if not _is_zero(_dot_exact(v, u, conjugate))
    )
    return Fraction(hits, alphabet.size**n)


def iid_alphabet_min_search(alphabet: Alphabet, n: int, candidates: Sequence,
                            conjugate: bool = False) -> GameValueReport:
    """Min over candidate inputs ``v`` of the i.i.d.-alphabet detection probability.

    Certifies ``Q_F(L, n)`` from below when the candidates exhaust the
    relevant hyperplanes (see :func:`hyperplane_candidates`). Raises
    ``ArithmeticError`` if any candidate falls under ``1 - 1/|L|``.
    """
    if not candidates:
        raise ConfigurationError("no candidates")
    floor = 1 - Fraction(1, alphabet.size)
    best, witness, table = Fraction(2), None, {}
    for v in candidates:
        v = tuple(v)
        if len(v) != n:
            raise ConfigurationError(f"candidate {v} has length != {n}")
        if all(_is_zero(_exact(x)) for x in v):
            raise ConfigurationError("candidate measurement vector is zero")
        p = iid_detection_prob(alphabet, v, conjugate)
        table[v] = p
        if p < floor:
            raise ArithmeticError(f"candidate {v} detects with {p} < 1 - 1/|L| = {floor}")
        if p < best:
            best, witness = p, v
    return GameValueReport(alphabet, n, best, witness, per_candidate=table)


def _cofactor_normal(rows):
    """Generalized cross product of ``n - 1`` vectors in ``F^n`` (exact for ints)."""
    n = len(rows) + 1
    normal = []
    for k in range(n):
        minor = [[r[j] for j in range(n) if j != k] for r in rows]
        normal.append((-1) ** k * _det(minor))
    return tuple(normal)


def _det(M):
    if not M:
        return 1
    if len(M) == 1:
        return M[0][0]
    return sum((-1) ** j * M[0][j] * _det([row[:j] + row[j + 1:] for row in M[1:]])
               for j in range(len(M)))


def hyperplane_candidates(alphabet: Alphabet, n: int, limit: int = 200_000) -> list:
    """Normals of every hyperplane spanned by ``n - 1`` points of ``L^n``.

    The zero set of ``v -> v^T u`` over the finite support of ``u`` is
    largest on one of these hyperplanes (or a coordinate one), so the min
    over these candidates equals the min over all nonzero ``v``.
    """
    pts = list(itertools.product(alphabet.symbols, repeat=n))
    if math.comb(len(pts), n - 1) > limit:
        raise EnumerationTooLarge("too many point subsets for hyperplane enumeration")
    seen = set()
    out = []
    for e in np.eye(n, dtype=int):
        key = tuple(int(x) for x in e)
        seen.add(key)
        out.append(key)
    for rows in itertools.combinations(pts, n - 1):
        normal = _cofactor_normal([list(r) for r in rows])
        if all(x == 0 for x in normal):
            continue
        key = _projective_key(normal)
        if key not in seen:
            seen.add(key)
            out.append(normal)
    return out


def _projective_key(v):
    lead = next(x for x in v if x != 0)
    return tuple(_round_key(complex(x) / complex(lead)) for x in v)


def _round_key(z: complex):
    return (round(z.real, 12), round(z.imag, 12))


def tensorized_detection_prob(pmf: ExplicitPMF, u_factors: Sequence, conjugate: bool = False) -> Fraction:
    """Detection probability of ``x = x_1 (x) ... (x) x_q``, ``x_i ~ pmf`` i.i.d.

    Enumerates every tensorized support point and takes the exact inner
    product of the expanded vectors, without using factorization.
    """
    u = _kron_exact(u_factors)
    total = Fraction(0)
    q = len(u_factors)
    for combo in itertools.product(range(len(pmf.support)), repeat=q):
        x = _kron_exact([pmf.support[k] for k in combo])
        w = Fraction(1)
        for k in combo:
            w *= pmf.weights[k]
        if not _is_zero(_dot_exact(x, u, conjugate)):
            total += w
    return total


# ---------------------------------------------------------------------------
# Concentration of Kronecker inner products


def log_beta_mean(n: int) -> float:
    """``E[log X]`` for ``X ~ Beta(1/2, (n-1)/2)``: ``psi(1/2) - psi(n/2)``."""
    return float(special.digamma(0.5) - special.digamma(n / 2.0))


def log_beta_var(n: int) -> float:
    return float(special.polygamma(1, 0.5) - special.polygamma(1, n / 2.0))


def abs_coordinate_mean(n: int) -> float:
    """``E|<u, e_1>|`` for ``u`` uniform on the unit sphere of ``R^n``."""
    return float(math.exp(math.lgamma(n / 2.0) - math.lgamma((n + 1) / 2.0)) / math.sqrt(math.pi))


def mu_interval(n: int):
    """The stated band ``1.27 + ln n - 2/n <= |mu| <= 1.271 + ln n``."""
    return 1.27 + math.log(n) - 2.0 / n, 1.271 + math.log(n)


@dataclass
class ConcentrationReport:
    n: int
    q_values: np.ndarray
    trials: int
    tau_scale: float
    mean_log_X: np.ndarray
    stderr_log_X: np.ndarray
    digamma_prediction: np.ndarray
    empirical_f_tau: np.ndarray
    fitted_decay_rate: float
    fit_intercept: float
    fit_r2: float
    mean_sq_inner: float
    mean_abs_inner: float
    abs_inner_prediction: float
    mu_abs: float
    mu_in_stated_band: bool


def _linear_fit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def concentration_probe(n: int, q: int, trials: int, tau_scale: float, s: SeededStream,
                        chunk: int = 20_000) -> ConcentrationReport:
    """Law of ``<u, v>^2`` for ``u`` a product of uniform unit factors.

    ``v = e_1 (x) ... (x) e_1``; rotation invariance makes the choice
    immaterial. For every order ``1..q`` this reports the sample mean of
    ``Y = sum_i log <u_i, v_i>^2`` against ``q (psi(1/2) - psi(n/2))`` and
    ``f(tau) = Pr[<u, v>^2 >= tau / n^q]`` at ``tau = tau_scale^-q``, and fits
    a line to ``log f`` over orders ``2..q``.
    """
    if trials < 1000:
        raise ConfigurationError("concentration probe needs at least 1000 trials")
    if n < 2 or q < 1:
        raise ConfigurationError("need n >= 2 and q >= 1")
    qs = np.arange(1, q + 1)
    sum_y = np.zeros(q)
    sum_y2 = np.zeros(q)
    hits = np.zeros(q)
    sq_total = 0.0
    abs_total = 0.0
    log_thresh = -qs * math.log(tau_scale) - qs * math.log(n)
    done = 0
    dist = UnitSphere(n)
    while done < trials:
        k = min(chunk, trials - done)
        U = sample_kron_batch(dist, q, k, s)
        x = U[:, :, 0] ** 2
        Y = np.cumsum(np.log(x), axis=1)
        sum_y += Y.sum(axis=0)
        sum_y2 += (Y**2).sum(axis=0)
        hits += (Y >= log_thresh).sum(axis=0)
        sq_total += x[:, 0].sum()
        abs_total += np.abs(U[:, 0, 0]).sum()
        done += k
    mean = sum_y / trials
    var = np.maximum(sum_y2 / trials - mean**2, 0.0)
    f = hits / trials
    fit_q = qs[1:] if q >= 3 else qs
    fit_f = f[fit_q - 1]
    if np.all(fit_f > 0) and len(fit_q) >= 2:
        slope, intercept, r2 = _linear_fit(fit_q.astype(float), np.log(fit_f))
    else:
        slope = intercept = r2 = float("nan")
    mu = abs(log_beta_mean(n))
    lo, hi = mu_interval(n)
    return ConcentrationReport(
        n=n, q_values=qs, trials=trials, tau_scale=tau_scale,
        mean_log_X=mean, stderr_log_X=np.sqrt(var / trials),
        digamma_prediction=qs * log_beta_mean(n),
        empirical_f_tau=f, fitted_decay_rate=slope, fit_intercept=intercept, fit_r2=r2,
        mean_sq_inner=sq_total / trials, mean_abs_inner=abs_total / trials,
        abs_inner_prediction=abs_coordinate_mean(n),
        mu_abs=mu, mu_in_stated_band=lo <= mu <= hi,
    )


# ---------------------------------------------------------------------------
# Gaussian divergence identities


@dataclass
class DivergenceCheck:
    dim: int
    mean_a: np.ndarray
    mean_b: np.ndarray
    covariance: np.ndarray
    mc_samples: int
    mc_value: float
    mc_stderr: float
    closed_form: float

    @property
    def relative_error(self) -> float:
        return abs(self.mc_value - self.closed_form) / self.closed_form


def _spd_factor(cov: np.ndarray):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise ConfigurationError("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("covariance is not positive definite") from exc


def gaussian_divergence_check(a, b, cov, mc_samples: int, s: SeededStream,
                              chunk: int = 250_000) -> DivergenceCheck:
    """Monte Carlo ``E_Q[dP_a dP_b / dQ^2]`` against ``exp(a^T Sigma^-1 b)``.

    ``Q = N(0, Sigma)``, ``P_a = N(a, Sigma)``; the likelihood ratio is
    ``exp(a^T Sigma^-1 z - a^T Sigma^-1 a / 2)``. Taking ``b = a`` checks the
    second-moment (chi-squared) identity.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    L = _spd_factor(cov)
    d = L.shape[0]
    if a.shape != (d,) or b.shape != (d,):
        raise ConfigurationError("mean vectors must match the covariance dimension")
    cov = np.asarray(cov, dtype=float)
    ia = np.linalg.solve(cov, a)
    ib = np.linalg.solve(cov, b)
    total = total2 = 0.0
    done = 0
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        z = s.normal((k, d)) @ L.T
        r = np.exp(z @ ia - 0.5 * a @ ia + z @ ib - 0.5 * b @ ib)
        total += r.sum()
        total2 += (r**2).sum()
        done += k
    mean = total / mc_samples
    var = max(total2 / mc_samples - mean**2, 0.0)
    return DivergenceCheck(d, a, b, cov, mc_samples, float(mean), math.sqrt(var / mc_samples),
                           float(math.exp(a @ ib)))


def mc_gaussian_kl(mean: np.ndarray, cov: np.ndarray, samples: int, s: SeededStream) -> tuple:
    """Monte Carlo ``KL(N(mean, cov) || N(0, cov))`` via scipy log-densities."""
    from scipy.stats import multivariate_normal

    mean = np.asarray(mean, dtype=float)
    L = _spd_factor(cov)
    w = mean + s.normal((samples, mean.size)) @ L.T
    llr = (multivariate_normal(mean, cov).logpdf(w)
           - multivariate_normal(np.zeros_like(mean), cov).logpdf(w))
    return float(llr.mean()), float(llr.std() / math.sqrt(samples))


# ---------------------------------------------------------------------------
# Projection onto Khatri-Rao ranges


@dataclass
class ProjectionProbeReport:
    n: int
    t: int
    trials: int
    q_values: np.ndarray
    quantile_levels: tuple
    quantiles: np.ndarray  # (len(q_values), len(levels)) of ||Pu||^2 n^q
    median: np.ndarray
    frac_above: np.ndarray  # Pr[||Pu||^2 >= c1^-q / n^q]
    c1: float


def projection_probe(n: int, q_values: Sequence[int], t: int, trials: int, s: SeededStream,
                     c1: float = 1.0, levels=(0.1, 0.5, 0.9, 0.99)) -> ProjectionProbeReport:
    """Empirical law of ``||P u||^2 n^q`` for ``P`` the projector onto a Khatri-Rao range.

    Columns of ``V`` have i.i.d. Gaussian factors; ``u`` has i.i.d. uniform
    unit factors. Exploratory only.
    """
    if t < 1 or trials < 1:
        raise ConfigurationError("need t >= 1 and trials >= 1")
    qv = np.asarray(list(q_values))
    Q = np.zeros((len(qv), len(levels)))
    med = np.zeros(len(qv))
    above = np.zeros(len(qv))
    for k, q in enumerate(qv):
        vals = np.empty(trials)
        for r in range(trials):
            cols = sample_kron_batch(Gaussian(n), int(q), t, s)
            u = KronVector(UnitSphere(n).draw(s, int(q)))
            V = QueryMatrix([KronVector(c) for c in cols])
            vals[r] = projection_energy(V, u).total * float(n) ** q
        Q[k] = np.quantile(vals, levels)
        med[k] = np.median(vals)
        above[k] = np.mean(vals >= c1 ** (-float(q)))
    return ProjectionProbeReport(n, t, trials, qv, tuple(levels), Q, med, above, c1)
