"""Seeded samplers for query factors, planted vectors and adversarial inputs.

Every draw comes from a :class:`SeededStream`: a Philox-4x64 counter-based
generator keyed by ``(seed, stream_id)``. Uniforms use the top 53 bits of
each 64-bit word; normals use the Marsaglia polar method on those uniforms,
so results never depend on a library normal sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np

from .core import DEFAULT_CAP, CapacityError, KronVector, kron_expand

MASK64 = (1 << 64) - 1


class ConfigurationError(ValueError):
    pass


class SeededStream:
    """Deterministic random stream fully determined by ``(seed, stream_id)``.

    Distinct ``stream_id`` values give independent Philox keys, so parallel
    trials each get their own stream and never share state.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> "SeededStream":
        return SeededStream(self.seed, stream_id)

    def raw(self, size=None):
        if size is None:
            return int(self._bits.random_raw())
        return self._bits.random_raw(size)

    def uniform(self, size=None):
        """Uniform on ``[0, 1)`` with 53 random bits."""
        if size is None:
            return (self.raw() >> 11) * 2.0**-53
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, k: int, size=None):
        """Uniform integers in ``[0, k)``."""
        if k < 1:
            raise ValueError("k must be positive")
        if size is None:
            return int(self.uniform() * k)
        return (self.uniform(size) * k).astype(np.int64)

    def bits(self, size=None):
        """Fair coin flips (0/1) from the top bit of each word."""
        if size is None:
            return self.raw() >> 63
        return (self.raw(size) >> np.uint64(63)).astype(np.int64)

    def normal(self, size=None):
        """Standard normals via the polar method."""
        shape = () if size is None else (size if isinstance(size, tuple) else (size,))
        count = int(np.prod(shape, dtype=np.int64))
        out = np.empty(count)
        filled = 0
        while filled < count:
            need = count - filled
            pairs = int(need * 0.65) + 8
            w = 2.0 * self.uniform(2 * pairs) - 1.0
            x, y = w[0::2], w[1::2]
            s = x * x + y * y
            ok = (s > 0.0) & (s < 1.0)
            x, y, s = x[ok], y[ok], s[ok]
            f = np.sqrt(-2.0 * np.log(s) / s)
            z = np.empty(2 * x.size)
            z[0::2] = x * f
            z[1::2] = y * f
            take = min(need, z.size)
            out[filled:filled + take] = z[:take]
            filled += take
        if size is None:
            return float(out[0])
        return out.reshape(shape)


# ---------------------------------------------------------------------------
# Alphabets


ALIASES = {
    "pm1": (1, -1),
    "pm1i": (1, -1, 1j, -1j),
    "pm12": (1, -1, 2, -2),
}


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple

    def __post_init__(self):
        syms = tuple(complex(s) if complex(s).imag != 0 else _real(s) for s in self.symbols)
        if not syms:
            raise ConfigurationError("alphabet must be nonempty")
        if len(set(syms)) != len(syms):
            raise ConfigurationError(f"alphabet symbols must be distinct: {syms}")
        object.__setattr__(self, "symbols", syms)

    @property
    def field(self) -> str:
        return "complex" if any(isinstance(s, complex) for s in self.symbols) else "real"

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def array(self) -> np.ndarray:
        dt = np.complex128 if self.field == "complex" else np.float64
        return np.array(self.symbols, dtype=dt)

    def contains(self, values) -> bool:
        vals = np.asarray(values).ravel()
        return bool(np.all(np.isin(vals, self.array())))

    @classmethod
    def parse(cls, text: str) -> "Alphabet":
        """``pm1``, ``pm1i``, ``pm12`` or comma-separated literals like ``1,-1,2+1i``."""
        text = text.strip()
        if text in ALIASES:
            return cls(ALIASES[text])
        out = []
        for tok in text.split(","):
            tok = tok.strip().replace(" ", "")
            if not tok:
                raise ConfigurationError(f"empty symbol in alphabet {text!r}")
            try:
                val = complex(tok.replace("i", "j")) if "i" in tok else float(tok)
            except ValueError as exc:
                raise ConfigurationError(f"bad alphabet symbol {tok!r}") from exc
            out.append(val)
        return cls(tuple(out))


def _real(s):
    v = complex(s).real
    return int(v) if float(v).is_integer() else float(v)


# ---------------------------------------------------------------------------
# Factor distributions


class FactorDistribution:
    """A law on ``F^n`` for one Kronecker factor."""

    n: int
    field = "real"

    def draw(self, stream: SeededStream, m: int) -> np.ndarray:
        """``m`` independent factors as an ``(m, n)`` array."""
        raise NotImplementedError

    @property
    def isotropic(self) -> bool:
        return False

    @property
    def hutchinson_scale(self) -> float:
        """Per-factor multiplier making ``E[v v^H] = I``."""
        return 1.0


@dataclass(frozen=True)
class Gaussian(FactorDistribution):
    n: int

    def draw(self, stream, m):
        return stream.normal((m, self.n))

    @property
    def isotropic(self):
        return True


@dataclass(frozen=True)
class UnitSphere(FactorDistribution):
    n: int

    def draw(self, stream, m):
        g = stream.normal((m, self.n))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    @property
    def isotropic(self):
        # isotropic after rescaling each factor by sqrt(n)
        return True

    @property
    def hutchinson_scale(self):
        return float(self.n)


@dataclass(frozen=True)
class SqrtNSphere(FactorDistribution):
    n: int

    def draw(self, stream, m):
        g = stream.normal((m, self.n))
        return np.sqrt(self.n) * g / np.linalg.norm(g, axis=1, keepdims=True)

    @property
    def isotropic(self):
        return True


@dataclass(frozen=True)
class AlphabetIID(FactorDistribution):
    alphabet: Alphabet
    n: int

    @property
    def field(self):
        return self.alphabet.field

    def draw(self, stream, m):
        idx = stream.integers(self.alphabet.size, (m, self.n))
        return self.alphabet.array()[idx]

    @property
    def isotropic(self):
        a = self.alphabet.array()
        return bool(abs(a.mean()) < 1e-12 and abs(np.mean(np.abs(a) ** 2) - 1) < 1e-12)


def Rademacher(n: int) -> AlphabetIID:
    return AlphabetIID(Alphabet((1, -1)), n)


def ComplexRademacher(n: int) -> AlphabetIID:
    return AlphabetIID(Alphabet((1, -1, 1j, -1j)), n)


@dataclass(frozen=True)
class ExplicitPMF(FactorDistribution):
    """Finite-support law; weights are exact ``Fraction`` values summing to 1."""

    support: tuple
    weights: tuple

    def __post_init__(self):
        sup = tuple(tuple(v) for v in self.support)
        w = tuple(Fraction(x) for x in self.weights)
        if not sup or len(sup) != len(w):
            raise ConfigurationError("support and weights must be nonempty and the same length")
        if len({len(v) for v in sup}) != 1:
            raise ConfigurationError("support vectors must share a length")
        if any(x < 0 for x in w) or sum(w) != 1:
            raise ConfigurationError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, support) -> "ExplicitPMF":
        support = list(support)
        return cls(tuple(support), tuple(Fraction(1, len(support)) for _ in support))

    @property
    def n(self):
        return len(self.support[0])

    @property
    def field(self):
        return "complex" if any(isinstance(x, complex) for v in self.support for x in v) else "real"

    def array(self) -> np.ndarray:
        dt = np.complex128 if self.field == "complex" else np.float64
        return np.array(self.support, dtype=dt)

    def draw(self, stream, m):
        k = len(self.support)
        if all(w == self.weights[0] for w in self.weights):
            idx = stream.integers(k, m)
        else:
            cdf = np.cumsum([float(w) for w in self.weights])
            idx = np.minimum(np.searchsorted(cdf, stream.uniform(m), side="right"), k - 1)
        return self.array()[idx]

    @property
    def isotropic(self):
        S = self.array()
        w = np.array([float(x) for x in self.weights])
        second = np.einsum("k,ki,kj->ij", w, S, S.conj())
        return bool(np.allclose(second, np.eye(self.n), atol=1e-12))


def sample_factor(d: FactorDistribution, s: SeededStream) -> np.ndarray:
    return d.draw(s, 1)[0]


def sample_kron(d: FactorDistribution, q: int, s: SeededStream) -> KronVector:
    if q < 1:
        raise ConfigurationError("q must be >= 1")
    return KronVector(d.draw(s, q))


def sample_kron_batch(d: FactorDistribution, q: int, m: int, s: SeededStream) -> np.ndarray:
    """``m`` independent Kronecker vectors as an ``(m, q, n)`` factor array."""
    if q < 1:
        raise ConfigurationError("q must be >= 1")
    return d.draw(s, m * q).reshape(m, q, d.n)


# ---------------------------------------------------------------------------
# Adversarial input distributions


def adversary_pm1_n2_pmf() -> ExplicitPMF:
    return ExplicitPMF.uniform([(1, 1), (1, -1)])


def support2_pairs(n: int):
    """All ``(i, j)`` with ``i < j`` in lexicographic order."""
    return list(combinations(range(n), 2))


def adversary_support2_pmf(n: int) -> ExplicitPMF:
    if n < 2:
        raise ConfigurationError("support-2 adversary needs n >= 2")
    support = []
    for i, j in support2_pairs(n):
        v = [0] * n
        v[i], v[j] = 1, -1
        support.append(tuple(v))
    return ExplicitPMF.uniform(support)


def adversary_complex_n2_pmf() -> ExplicitPMF:
    return ExplicitPMF.uniform([(1, 1), (1, -1), (1, 1j), (1, -1j)])


def adversary_pm1_n2(s: SeededStream, size=None) -> np.ndarray:
    out = adversary_pm1_n2_pmf().draw(s, 1 if size is None else size)
    return out[0] if size is None else out


def adversary_support2(n: int, s: SeededStream, size=None) -> np.ndarray:
    if n < 2:
        raise ConfigurationError("support-2 adversary needs n >= 2")
    pairs = np.array(support2_pairs(n))
    m = 1 if size is None else size
    idx = s.integers(len(pairs), m)
    out = np.zeros((m, n))
    rows = np.arange(m)
    out[rows, pairs[idx, 0]] = 1.0
    out[rows, pairs[idx, 1]] = -1.0
    return out[0] if size is None else out


def adversary_complex_n2(s: SeededStream, size=None) -> np.ndarray:
    out = adversary_complex_n2_pmf().draw(s, 1 if size is None else size)
    return out[0] if size is None else out


def adversary_for(alphabet: Alphabet, n: int) -> ExplicitPMF:
    """The hard input distribution matched to a query alphabet."""
    syms = set(alphabet.symbols)
    if n == 2 and syms == {1, -1}:
        return adversary_pm1_n2_pmf()
    if n == 2 and syms == {1, -1, 1j, -1j}:
        return adversary_complex_n2_pmf()
    if n >= 2:
        return adversary_support2_pmf(n)
    raise ConfigurationError(f"no adversary for alphabet {alphabet.symbols} with n={n}")


# ---------------------------------------------------------------------------
# Planted vectors


def make_planted_vector(n: int, q: int, eps: float, coin: int, s: SeededStream,
                        cap: int = DEFAULT_CAP):
    """``a = g`` (coin 0) or ``a = g + 6 sqrt(eps) u`` (coin 1).

    ``g ~ N(0, I)`` of length ``n**q`` and ``u`` is a Kronecker product of
    factors uniform on the sphere of squared radius ``n``. Both are drawn
    whatever the coin, so a fixed stream state yields the same ``g`` and ``u``
    on either arm.
    """
    if not 0 < eps < 0.25:
        raise ConfigurationError(f"eps must lie in (0, 0.25), got {eps}")
    D = n**q
    if D > cap:
        raise CapacityError(f"n**q = {D} exceeds cap {cap}")
    g = s.normal(D)
    u = sample_kron(SqrtNSphere(n), q, s)
    if coin:
        return g + 6.0 * math.sqrt(eps) * kron_expand(u, cap), u
    return g, u
