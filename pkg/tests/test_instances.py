import math

import numpy as np
import pytest

from kronquery.core import KronVector, QueryMatrix, RankOne
from kronquery.estimators import QueryBudget
from kronquery.instances import (
    GameOracle,
    GameSpec,
    PlantedVector,
    PowerIterationPolicy,
    SpikedWignerFamily,
    ThresholdPolicy,
    blind_policy,
    kl_nonadaptive,
    make_spiked_pair,
    make_trace_hard_instance,
    run_game,
    tv_upper_from_kl,
    wilson_interval,
)
from kronquery.oracles import mc_gaussian_kl
from kronquery.sampling import Alphabet, ConfigurationError, Gaussian, Rademacher, SeededStream


def test_spiked_pair_lambda_zero_identical_arms():
    A0 = make_spiked_pair(2, 3, 0.0, 0, SeededStream(1))
    A1 = make_spiked_pair(2, 3, 0.0, 1, SeededStream(1))
    np.testing.assert_array_equal(A0.to_dense(), A1.to_dense())


def test_spiked_pair_coupling():
    lam = 3.5
    A0 = make_spiked_pair(2, 4, lam, 0, SeededStream(2))
    A1 = make_spiked_pair(2, 4, lam, 1, SeededStream(2))
    u = A1.u.expand()
    diff = A1.to_dense() - A0.to_dense() - lam * np.outer(u, u)
    assert np.linalg.norm(diff) <= 1e-10
    assert abs(np.linalg.norm(u) - 1.0) < 1e-12


def test_wigner_spectral_norm_near_two():
    norms = [np.abs(np.linalg.eigvalsh(make_spiked_pair(2, 6, 0.0, 0, SeededStream(3, i)).to_dense())).max()
             for i in range(100)]
    assert 1.5 <= np.mean(norms) <= 2.5


def test_spiked_pair_rejects_negative_lambda():
    with pytest.raises(ConfigurationError):
        make_spiked_pair(2, 2, -1.0, 1, SeededStream(0))
    with pytest.raises(ConfigurationError):
        SpikedWignerFamily(2, 2, -1.0)


def test_trace_hard_instance_pm1():
    A = make_trace_hard_instance(Alphabet.parse("pm1"), 2, 3, SeededStream(4))
    assert isinstance(A, RankOne)
    assert A.trace() == 8.0
    assert set(np.unique(A.a.expand())) <= {-1.0, 1.0}


def test_trace_hard_instance_detection_rate_exact_by_enumeration():
    # average over all Rademacher queries of 1[<x,v> != 0] is exactly 2^-q for every draw of x
    q = 3
    A = make_trace_hard_instance(Alphabet.parse("pm1"), 2, q, SeededStream(5))
    import itertools

    hits = 0
    for bits in itertools.product((1.0, -1.0), repeat=2 * q):
        v = KronVector(np.reshape(bits, (q, 2)))
        hits += A.vec_mat_vec(v) != 0
    assert hits / 2 ** (2 * q) == 2.0**-q


def test_trace_hard_instance_gaussian_query():
    A = make_trace_hard_instance(Alphabet.parse("pm1"), 2, 5, SeededStream(6))
    v = KronVector(Gaussian(2).draw(SeededStream(7), 5))
    assert A.vec_mat_vec(v) > 0


# KL / TV


def test_kl_orthogonal_u():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    kl, bound = kl_nonadaptive(V, np.array([0.0, 0.0, 1.0]), 3.0)
    assert kl == 0.0 and bound == 0.0


def test_kl_orthonormal_in_range():
    V = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    kl, _ = kl_nonadaptive(V, np.array([1.0, 0.0, 0.0]), 1.0)
    assert kl == pytest.approx(0.5)


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(8)
    V = rng.standard_normal((16, 3))
    u = rng.standard_normal(16)
    u /= np.linalg.norm(u)
    lam = 2.0
    kl, _ = kl_nonadaptive(V, u, lam)
    mc, se = mc_gaussian_kl(lam * V.T @ u, V.T @ V, 1_000_000, SeededStream(9))
    assert mc == pytest.approx(kl, rel=0.05)


def test_kl_basis_invariance_and_bound():
    rng = np.random.default_rng(10)
    for _ in range(20):
        V = rng.standard_normal((16, 4))
        u = rng.standard_normal(16)
        R = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        kl, bound = kl_nonadaptive(V, u, 1.7)
        kl2, _ = kl_nonadaptive(V @ R, u, 1.7)
        assert kl2 == pytest.approx(kl, rel=1e-9)
        assert kl <= bound * (1 + 1e-12)


def test_kl_accepts_query_matrix_and_kron_u():
    rng = np.random.default_rng(11)
    cols = [KronVector(rng.standard_normal((3, 2))) for _ in range(3)]
    u = KronVector(rng.standard_normal((3, 2)))
    a, _ = kl_nonadaptive(QueryMatrix(cols), u, 1.0)
    b, _ = kl_nonadaptive(np.stack([c.expand() for c in cols], axis=1), u.expand(), 1.0)
    assert a == pytest.approx(b, rel=1e-12)


def test_kl_rank_deficient():
    c = np.array([1.0, 2.0, 3.0])
    with pytest.raises(np.linalg.LinAlgError):
        kl_nonadaptive(np.stack([c, 2 * c], axis=1), c, 1.0)


@pytest.mark.parametrize("kl,tv", [(0.0, 0.0), (2.0, 1.0), (0.5, 0.5), (8.0, 1.0)])
def test_tv_from_kl(kl, tv):
    assert tv_upper_from_kl(kl) == pytest.approx(tv)


def test_tv_negative():
    with pytest.raises(ValueError):
        tv_upper_from_kl(-0.1)


# games


def test_blind_policy_is_chance():
    spec = GameSpec(SpikedWignerFamily(2, 3, 8.0), 1000, blind_policy(0), QueryBudget(4))
    rep = run_game(spec, seed=12)
    lo, hi = rep.wilson
    assert lo <= 0.5 <= hi
    assert rep.mean_queries == 0.0
    assert rep.success_rate == rep.successes / rep.trials


def test_blind_policy_wilson_coverage():
    covered = 0
    for r in range(40):
        spec = GameSpec(PlantedVector(2, 3, 0.1), 200, blind_policy(1), QueryBudget(1))
        rep = run_game(spec, seed=100 + r)
        lo, hi = rep.wilson
        covered += lo <= 0.5 <= hi
    assert covered >= 36


def test_near_degenerate_planted_is_chance():
    spec = GameSpec(PlantedVector(2, 4, 1e-6), 400, ThresholdPolicy(Gaussian(2), 4, 3.0), QueryBudget(4))
    rep = run_game(spec, seed=13)
    lo, hi = rep.wilson
    assert lo <= 0.5 <= hi


def test_power_iteration_distinguishes_large_spike():
    spec = GameSpec(SpikedWignerFamily(2, 3, 50.0), 200, PowerIterationPolicy(20, 10.0), QueryBudget(20),
                    unrestricted=True)
    assert run_game(spec, seed=14).success_rate >= 0.95


def test_dense_queries_need_unrestricted_game():
    oracle = GameOracle(make_spiked_pair(2, 2, 1.0, 1, SeededStream(0)), QueryBudget(3))
    with pytest.raises(PermissionError):
        oracle.query_dense(np.ones(4))


def test_budget_overrun_counts_as_failure():
    spec = GameSpec(SpikedWignerFamily(2, 3, 8.0), 30, ThresholdPolicy(Gaussian(2), 5, 3.0), QueryBudget(4))
    rep = run_game(spec, seed=15)
    assert rep.aborted == 30 and rep.success_rate == 0.0
    assert rep.mean_queries == 4


def test_threshold_policy_records_kappa():
    spec = GameSpec(SpikedWignerFamily(2, 3, 8.0), 50, ThresholdPolicy(Gaussian(2), 4, 3.0), QueryBudget(4))
    rep = run_game(spec, seed=16)
    assert rep.kappa_max >= 1.0
    assert all(o.queries == 4 for o in rep.outcomes)


def test_threshold_success_monotone_in_lambda():
    rates = []
    for lam in (0.0, 2.0, 8.0, 32.0):
        vals = []
        for seed in range(3):
            spec = GameSpec(SpikedWignerFamily(2, 3, lam), 200, ThresholdPolicy(Gaussian(2), 4, 3.0),
                            QueryBudget(4))
            vals.append(run_game(spec, seed=seed).success_rate)
        rates.append(np.mean(vals))
    assert all(b >= a - 0.02 for a, b in zip(rates, rates[1:])), rates
    assert rates[-1] > rates[0]


def test_run_game_thread_independent():
    spec = GameSpec(PlantedVector(2, 4, 0.1), 64, ThresholdPolicy(Rademacher(2), 3, 4.0), QueryBudget(3))
    a = run_game(spec, seed=17, threads=1)
    b = run_game(spec, seed=17, threads=4)
    assert [(o.coin, o.guess) for o in a.outcomes] == [(o.coin, o.guess) for o in b.outcomes]


def test_gamespec_validation():
    with pytest.raises(ConfigurationError):
        GameSpec(PlantedVector(2, 2, 0.1), 0, blind_policy(), QueryBudget(1))


def test_wilson_interval_reference():
    # independent closed form of the Wilson score interval
    k, n, z = 37, 100, 1.959963984540054
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n)
    assert lo == pytest.approx(centre - half, rel=1e-9)
    assert hi == pytest.approx(centre + half, rel=1e-9)
