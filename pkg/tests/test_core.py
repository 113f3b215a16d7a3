import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kronquery.core import (
    CapacityError,
    DimensionError,
    ExplicitDense,
    KronVector,
    QueryMatrix,
    RankOne,
    SpikedWigner,
    Zero,
    as_tensor,
    condition_number,
    full_contraction,
    kron_expand,
    kron_inner,
    matvec,
    modal_product,
    projection_energy,
    rank_one_tensor,
    vec_mat_vec,
)


def rand_kron(rng, n, q, complex_=False):
    f = rng.standard_normal((q, n))
    if complex_:
        f = f + 1j * rng.standard_normal((q, n))
    return KronVector(f)


def dense_kron(factors):
    # independent oracle: np.kron chain
    out = np.ones(1, dtype=np.result_type(*factors))
    for f in factors:
        out = np.kron(out, f)
    return out


# kron_inner / kron_expand


def test_inner_identity_case():
    e1 = KronVector.of([1.0, 0.0], [1.0, 0.0])
    assert kron_inner(e1, e1) == 1.0


def test_inner_annihilated_by_orthogonal_factor():
    u = KronVector.of([1.0, 2.0], [1.0, 0.0], [3.0, -1.0])
    v = KronVector.of([5.0, 7.0], [0.0, 4.0], [2.0, 2.0])
    assert kron_inner(u, v) == 0.0


def test_inner_matches_expansion_n3_q4():
    rng = np.random.default_rng(0)
    u, v = rand_kron(rng, 3, 4), rand_kron(rng, 3, 4)
    ref = dense_kron(list(u.factors)) @ dense_kron(list(v.factors))
    assert abs(kron_inner(u, v) - ref) <= 1e-12 * u.norm() * v.norm()


def test_inner_conjugates_first_argument():
    u = KronVector.of([1j, 0], [1, 0])
    assert kron_inner(u, u) == pytest.approx(1.0)
    assert kron_inner(u, u, conjugate=False) == pytest.approx(-1.0)


def test_inner_dimension_mismatch():
    with pytest.raises(DimensionError):
        kron_inner(KronVector.of([1, 0], [1, 0]), KronVector.of([1, 0, 0], [1, 0, 0]))
    with pytest.raises(DimensionError):
        kron_inner(KronVector.of([1, 0]), KronVector.of([1, 0], [1, 0]))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 4), q=st.integers(1, 6), seed=st.integers(0, 2**32 - 1), cplx=st.booleans())
def test_inner_factorization_property(n, q, seed, cplx):
    rng = np.random.default_rng(seed)
    u, v = rand_kron(rng, n, q, cplx), rand_kron(rng, n, q, cplx)
    ref = np.vdot(dense_kron(list(u.factors)), dense_kron(list(v.factors)))
    assert abs(kron_inner(u, v) - ref) <= 1e-12 * u.norm() * v.norm()


def test_expand_basis():
    np.testing.assert_array_equal(kron_expand(KronVector.of([1, 0], [1, 0])), [1, 0, 0, 0])


def test_expand_hand_example():
    np.testing.assert_array_equal(kron_expand(KronVector.of([1, 1], [1, -1])), [1, -1, 1, -1])


def test_expand_multi_index_convention():
    rng = np.random.default_rng(3)
    v = rand_kron(rng, 3, 3)
    T = kron_expand(v).reshape(3, 3, 3)
    f = v.factors
    assert T[2, 0, 1] == pytest.approx(f[0][2] * f[1][0] * f[2][1])


def test_expand_norm_of_unit_factors():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((5, 3))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    assert abs(np.linalg.norm(kron_expand(KronVector(f))) - 1.0) <= 1e-12


def test_expand_cap():
    with pytest.raises(CapacityError):
        kron_expand(KronVector(np.ones((5, 4))), cap=1000)


def test_kronvector_is_immutable():
    v = KronVector.of([1.0, 2.0])
    with pytest.raises(ValueError):
        v.factors[0, 0] = 5.0


def test_kronvector_rejects_ragged():
    with pytest.raises(DimensionError):
        KronVector.of([1, 2], [1, 2, 3])


# operators


def test_zero_matvec():
    v = KronVector.of([1.0, 2.0], [3.0, 4.0])
    np.testing.assert_array_equal(matvec(Zero(2, 2), v), np.zeros(4))


def test_zero_matvec_past_cap_stays_factored():
    v = KronVector(np.ones((30, 2)))
    out = matvec(Zero(2, 30), v)
    assert isinstance(out, KronVector) and out.norm() == 0.0


def test_rank_one_orthogonal_gives_zero():
    a = KronVector.of([1.0, 1.0], [1.0, 0.0])
    v = KronVector.of([1.0, -1.0], [2.0, 3.0])
    np.testing.assert_array_equal(matvec(RankOne(a), v), np.zeros(4))


def test_rank_one_large_q_is_factored():
    rng = np.random.default_rng(2)
    a, v = rand_kron(rng, 2, 40), rand_kron(rng, 2, 40)
    A = RankOne(a)
    w = matvec(A, v)
    assert isinstance(w, KronVector)
    c = kron_inner(a, v)
    assert vec_mat_vec(A, v) == pytest.approx(c**2, rel=1e-12)
    assert A.trace() == pytest.approx(a.norm() ** 2)


def test_rank_one_vec_mat_vec_unit():
    f = np.array([[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]])
    a = KronVector(f)
    assert vec_mat_vec(RankOne(a), a) == pytest.approx(1.0, abs=1e-15)
    perp = KronVector(np.array([[0.8, -0.6], [1.0, 0.0], [0.0, 1.0]]))
    assert vec_mat_vec(RankOne(a), perp) == 0.0


def test_rank_one_dense_and_structured_agree():
    rng = np.random.default_rng(4)
    a = rand_kron(rng, 2, 4)
    dense = RankOne(a.expand(), n=2, q=4)
    v = rand_kron(rng, 2, 4)
    np.testing.assert_allclose(RankOne(a).matvec(v), dense.matvec(v), rtol=1e-12)
    assert RankOne(a).trace() == pytest.approx(dense.trace())


def test_explicit_dense_quadratic_form():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((8, 8))
    M = M + M.T
    A = ExplicitDense(M, 2, 3)
    v = rand_kron(rng, 2, 3)
    x = dense_kron(list(v.factors))
    assert vec_mat_vec(A, v) == pytest.approx(x @ M @ x, rel=1e-12)


def test_explicit_dense_shape_checked():
    with pytest.raises(DimensionError):
        ExplicitDense(np.eye(5), 2, 2)


def test_spiked_wigner_null_matches_dense():
    W = SpikedWigner(2, 3, 0.0, None, wigner_seed=11)
    G = W.gaussian
    ref = (G + G.T) / math.sqrt(16)
    v = KronVector.of([1.0, 2.0], [0.5, -1.0], [3.0, 1.0])
    np.testing.assert_allclose(matvec(W, v), ref @ dense_kron(list(v.factors)), rtol=1e-10, atol=1e-12)


def test_spiked_wigner_symmetry_and_determinism():
    rng = np.random.default_rng(6)
    u = rand_kron(rng, 2, 3)
    u = u.scaled(1 / u.norm())
    A = SpikedWigner(2, 3, 5.0, u, wigner_seed=99).to_dense()
    B = SpikedWigner(2, 3, 5.0, u, wigner_seed=99).to_dense()
    np.testing.assert_array_equal(A, B)
    np.testing.assert_allclose(A, A.T, rtol=1e-10, atol=1e-14)
    v, w = rng.standard_normal(8), rng.standard_normal(8)
    assert v @ A @ w == pytest.approx(w @ A @ v, rel=1e-10)


def test_spiked_wigner_cap():
    with pytest.raises(CapacityError):
        SpikedWigner(2, 13, 0.0, None, 1)


@pytest.mark.parametrize("kind", ["zero", "rank1", "rank1dense", "dense", "wigner"])
def test_oracle_consistency_all_variants(kind):
    rng = np.random.default_rng(7)
    n, q = 2, 4
    D = n**q
    u = rand_kron(rng, n, q)
    A = {
        "zero": lambda: Zero(n, q),
        "rank1": lambda: RankOne(u),
        "rank1dense": lambda: RankOne(rng.standard_normal(D), n=n, q=q),
        "dense": lambda: ExplicitDense(rng.standard_normal((D, D)), n, q),
        "wigner": lambda: SpikedWigner(n, q, 2.0, u.scaled(1 / u.norm()), 5),
    }[kind]()
    ref = A.to_dense()
    for _ in range(5):
        v = rand_kron(rng, n, q)
        x = v.expand()
        got = matvec(A, v)
        np.testing.assert_allclose(got, ref @ x, rtol=1e-10, atol=1e-12 * np.linalg.norm(ref) * np.linalg.norm(x))
        assert vec_mat_vec(A, v) == pytest.approx(np.vdot(x, got).real, rel=1e-10, abs=1e-12)


def test_matvec_dimension_mismatch():
    with pytest.raises(DimensionError):
        matvec(Zero(2, 3), KronVector.of([1, 0], [1, 0]))


# modal products


def test_modal_product_rank_one_unit():
    a1 = np.array([0.6, 0.8])
    a2 = np.array([2.0, -1.0])
    T = np.outer(a1, a2)
    np.testing.assert_allclose(modal_product(T, 1, a1), a2)


def test_contraction_factorizes():
    rng = np.random.default_rng(8)
    a, b, c, u, v, w = rng.standard_normal((6, 3))
    T = rank_one_tensor(KronVector.of(a, b, c))
    got = full_contraction(T, KronVector.of(u, v, w))
    assert got == pytest.approx((a @ u) * (b @ v) * (c @ w), rel=1e-12)


def test_sequential_modal_products_match_dense():
    rng = np.random.default_rng(9)
    T = as_tensor(rng.standard_normal(8), 2, 3)
    v = rand_kron(rng, 2, 3)
    seq = modal_product(modal_product(modal_product(T, 1, v.factors[0]), 1, v.factors[1]), 1, v.factors[2])
    ref = T.reshape(-1) @ v.expand()
    assert seq == pytest.approx(ref, rel=1e-12)
    assert full_contraction(T, v) == pytest.approx(ref, rel=1e-12)


def test_modal_product_errors():
    T = np.zeros((2, 2, 2))
    with pytest.raises(DimensionError):
        modal_product(T, 0, np.ones(2))
    with pytest.raises(DimensionError):
        modal_product(T, 4, np.ones(2))
    with pytest.raises(DimensionError):
        modal_product(T, 1, np.ones(3))
    with pytest.raises(DimensionError):
        as_tensor(np.ones(7), 2, 3)


# query matrices


def test_gram_is_incremental_and_exact():
    rng = np.random.default_rng(10)
    cols = [rand_kron(rng, 3, 3) for _ in range(4)]
    V = QueryMatrix(cols)
    M = V.dense()
    np.testing.assert_allclose(V.gram, M.T @ M, rtol=1e-10)


def test_condition_number_orthonormal():
    V = QueryMatrix([np.array([1.0, 0, 0]), np.array([0, 1.0, 0])])
    assert condition_number(V) == pytest.approx(1.0, abs=1e-10)


def test_condition_number_duplicate_column():
    c = np.array([1.0, 2.0, 3.0])
    assert condition_number(QueryMatrix([c, c])) == math.inf


def test_condition_number_hand_example():
    V = QueryMatrix([np.array([1.0, 0.0]), np.array([1.0, 1.0]) / math.sqrt(2)])
    assert condition_number(V) == pytest.approx(math.tan(3 * math.pi / 8), rel=1e-12)


def test_condition_number_matches_svd():
    rng = np.random.default_rng(11)
    V = QueryMatrix([rand_kron(rng, 2, 4) for _ in range(5)])
    s = np.linalg.svd(V.dense(), compute_uv=False)
    assert condition_number(V) == pytest.approx(s[0] / s[-1], rel=1e-8)
    assert condition_number(V) >= 1.0


def test_condition_number_empty():
    with pytest.raises(ValueError):
        condition_number(QueryMatrix())


def test_projection_orthonormal_first_column():
    V = QueryMatrix([np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])])
    pe = projection_energy(V, np.array([1.0, 0, 0, 0]))
    assert pe.per_column[0] == pytest.approx(1.0)
    assert pe.total == pytest.approx(1.0)


def test_projection_orthogonal_u():
    V = QueryMatrix([KronVector.of([1.0, 0], [1.0, 1.0])])
    u = KronVector.of([0.0, 1.0], [0.3, 0.7])
    assert abs(projection_energy(V, u).total) <= 1e-12


@pytest.mark.parametrize("factored", [True, False])
def test_projection_matches_pseudoinverse(factored):
    rng = np.random.default_rng(12)
    cols = [rand_kron(rng, 2, 4) for _ in range(3)]
    u = rand_kron(rng, 2, 4)
    V = QueryMatrix(cols if factored else [c.expand() for c in cols])
    M = np.stack([c.expand() for c in cols], axis=1)
    ud = u.expand()
    Pu = M @ np.linalg.solve(M.T @ M, M.T @ ud)
    pe = projection_energy(V, u if factored else ud)
    assert pe.total == pytest.approx(Pu @ Pu, rel=1e-9)


def test_projection_drops_dependent_columns():
    a = KronVector.of([1.0, 2.0], [1.0, -1.0])
    b = KronVector.of([0.0, 1.0], [1.0, 1.0])
    V = QueryMatrix([a, b, a.scaled(3.0)])
    pe = projection_energy(V, a)
    assert pe.dropped == [2]
    assert pe.total == pytest.approx(a.norm() ** 2, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), t=st.integers(1, 6), q=st.integers(2, 5))
def test_conditioning_lemma_property(seed, t, q):
    rng = np.random.default_rng(seed)
    V = QueryMatrix([rand_kron(rng, 3, q) for _ in range(t)])
    u = rand_kron(rng, 3, q)
    u = u.scaled(1 / u.norm())
    pe = projection_energy(V, u)
    if np.isfinite(pe.conditioning_bound):
        assert pe.per_column.max() <= pe.conditioning_bound + 1e-9


def test_projection_u_in_range():
    rng = np.random.default_rng(13)
    cols = [rand_kron(rng, 2, 5) for _ in range(4)]
    u = cols[2]
    pe = projection_energy(QueryMatrix(cols), u)
    assert pe.total == pytest.approx(u.norm() ** 2, rel=1e-9)
