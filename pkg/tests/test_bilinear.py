import numpy as np
import pytest

from geodex import bilinear as bl


def test_identity_form_counts():
    counts = bl.index_coindex_nullity(bl.symform(np.eye(3)))
    assert counts.astuple() == (0, 3, 0)
    assert not counts.marginal


def test_mixed_diagonal_counts():
    form = bl.symform(np.diag([1.0, -1.0, -1.0, 0.0]))
    assert bl.index_coindex_nullity(form).astuple() == (2, 1, 1)


def test_exact_zeros_are_not_marginal():
    form = bl.symform(np.diag([1.0, 0.0, -2.0]))
    counts = bl.index_coindex_nullity(form)
    assert counts.astuple() == (1, 1, 1)
    assert not counts.marginal
    assert counts.margin > 3


def test_marginal_flag_near_band_edge():
    form = bl.symform(np.diag([1.0, 2e-9]), tol=1e-9 * 3.0)
    counts = bl.index_coindex_nullity(form)
    assert counts.marginal


def test_asymmetric_rejection_reports_norm():
    mat = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(bl.AsymmetricFormError) as err:
        bl.symform(mat)
    assert err.value.asym_norm == pytest.approx(1.0)


def test_rank_deficient_subspace_rejected():
    cols = np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    with pytest.raises(bl.RankDeficientError):
        bl.subspace(cols)


def test_counts_match_charpoly_oracle_random():
    rng = np.random.default_rng(0)
    for _ in range(40):
        n = int(rng.integers(2, 9))
        b = bl.symform(bl.random_symmetric(rng, n))
        assert bl.index_coindex_nullity(b).astuple() == bl.charpoly_inertia(b.matrix, b.tol)


def test_charpoly_oracle_handles_multiplicities():
    rng = np.random.default_rng(1)
    for _ in range(10):
        # eigenvalues with forced repeats and exact zeros
        d = np.array([2.0, 2.0, -1.0, -1.0, -1.0, 0.0, 0.0])
        q, _ = np.linalg.qr(rng.standard_normal((7, 7)))
        b = bl.symform(q @ np.diag(d) @ q.T)
        assert bl.index_coindex_nullity(b).astuple() == (3, 2, 2)
        assert bl.charpoly_inertia(b.matrix, b.tol) == (3, 2, 2)


def test_congruence_invariance():
    rng = np.random.default_rng(2)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        b = bl.symform(bl.random_symmetric(rng, n, degenerate_rank=int(rng.integers(1, n + 1))))
        g = rng.standard_normal((n, n))
        while abs(np.linalg.det(g)) < 1e-3:
            g = rng.standard_normal((n, n))
        congruent = bl.symform(g.T @ b.matrix @ g)
        assert bl.index_coindex_nullity(b).astuple()[:2] == bl.index_coindex_nullity(congruent).astuple()[:2]
        assert bl.index_coindex_nullity(b).n_zero == bl.index_coindex_nullity(congruent).n_zero


def test_b_orthogonal_examples():
    b = bl.symform(np.eye(4))
    e1 = bl.subspace(np.eye(4)[:, :1])
    perp = bl.b_orthogonal(b, e1)
    assert perp.dim == 3
    assert bl.same_span(perp, bl.subspace(np.eye(4)[:, 1:]))

    zero = bl.symform(np.zeros((4, 4)))
    assert bl.b_orthogonal(zero, e1).dim == 4


def test_double_orthogonal_closure():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(3, 8))
        b = bl.symform(bl.random_symmetric(rng, n, degenerate_rank=int(rng.integers(1, n + 1))))
        s = bl.random_subspace(rng, n, int(rng.integers(1, n)))
        dbl = bl.b_orthogonal(b, bl.b_orthogonal(b, s))
        assert bl.same_span(dbl, bl.span_sum(s, bl.kernel(b)), 1e-7)


def test_splitting_hand_case():
    # B = diag(1, -1), W = span(e1 + e2): isotropic line inside its own
    # B-orthogonal; identity reads 1 = 0 + 0 + 1 - 0.
    b = bl.symform(np.diag([1.0, -1.0]))
    w = bl.subspace(np.array([[1.0], [1.0]]))
    rep = bl.splitting_check(b, w)
    assert (rep.n_B, rep.n_W, rep.n_S, rep.dim_WS, rep.dim_WK) == (1, 0, 0, 1, 0)
    assert rep.holds and not rep.marginal


def test_splitting_randomized():
    rng = np.random.default_rng(4)
    checked = 0
    for case in range(200):
        n = int(rng.integers(2, 10))
        if case % 3 == 0:
            b = bl.symform(bl.random_symmetric(rng, n, degenerate_rank=int(rng.integers(1, n))))
        else:
            b = bl.symform(bl.random_symmetric(rng, n))
        w = bl.random_subspace(rng, n, int(rng.integers(1, n + 1)))
        rep = bl.splitting_check(b, w)
        if not rep.marginal:
            assert rep.holds
            checked += 1
    assert checked > 150


def test_isotropic_reduction():
    b = bl.symform(np.diag([1.0, -1.0, 1.0, -1.0]))
    z = bl.subspace(np.array([[1.0], [1.0], [0.0], [0.0]]))
    assert bl.isotropic_reduction_check(b, z)

    not_iso = bl.subspace(np.eye(4)[:, :1])
    with pytest.raises(bl.NotIsotropicError):
        bl.isotropic_reduction_check(b, not_iso)

    degenerate = bl.symform(np.diag([1.0, -1.0, 0.0]))
    z2 = bl.subspace(np.array([[1.0], [1.0], [0.0]]))
    with pytest.raises(ValueError):
        bl.isotropic_reduction_check(degenerate, z2)


def test_isotropic_dimension_bound():
    # dim of an isotropic subspace of a nondegenerate form is at most
    # min(index, coindex); exercised through randomly generated seeds.
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(3, 8))
        b = bl.symform(bl.random_symmetric(rng, n))
        counts = bl.index_coindex_nullity(b)
        if counts.n_zero != 0:
            continue
        vec = bl.isotropic_seed(b, rng)
        if vec is None:
            continue
        assert 1 <= min(counts.n_minus, counts.n_plus)


def test_additivity_over_orthogonal_sums():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n1, n2 = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        b1 = bl.random_symmetric(rng, n1)
        b2 = bl.random_symmetric(rng, n2)
        big = np.zeros((n1 + n2, n1 + n2))
        big[:n1, :n1] = b1
        big[n1:, n1:] = b2
        c = bl.index_coindex_nullity(bl.symform(big))
        c1 = bl.index_coindex_nullity(bl.symform(b1))
        c2 = bl.index_coindex_nullity(bl.symform(b2))
        assert c.n_minus == c1.n_minus + c2.n_minus
        assert c.n_plus == c1.n_plus + c2.n_plus
        assert c.n_zero == c1.n_zero + c2.n_zero


def test_self_test_clean_and_deterministic():
    summary = bl.self_test(seed=11, cases=60)
    assert summary["ok"], summary["failures"]
    again = bl.self_test(seed=11, cases=60)
    assert summary == again
