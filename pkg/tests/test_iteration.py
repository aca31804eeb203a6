"""Tests for iterate-level analysis: nullities of powers of the return
map, the nullity partition, the Morse-relations checker, and the iterate
table with its integer bounds and growth classification."""

import json
import math

import numpy as np
import pytest

import geodex.iteration as it


def rotation_block(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def embed_blocks(*planar):
    """Assemble 2x2 blocks acting on the (q_i, p_i) planes of a canonical
    symplectic space into one matrix."""
    k = len(planar)
    out = np.zeros((2 * k, 2 * k))
    for i, block in enumerate(planar):
        out[i, i] = block[0, 0]
        out[i, k + i] = block[0, 1]
        out[k + i, i] = block[1, 0]
        out[k + i, k + i] = block[1, 1]
    return out


class TestNullityOfIterate:
    def test_flat_shear_every_power(self):
        shear = np.eye(4)
        shear[:2, 2:] = np.diag([-1.0, 1.0])
        for n in (1, 2, 7, 64):
            assert it.nullity_of_iterate(shear, n) == 2

    def test_third_root_rotation_with_identity_block(self):
        p = embed_blocks(rotation_block(2 * np.pi / 3), np.eye(2))
        assert it.nullity_of_iterate(p, 1) == 2
        assert it.nullity_of_iterate(p, 2) == 2
        assert it.nullity_of_iterate(p, 3) == 4
        assert it.nullity_of_iterate(p, 6) == 4

    def test_matches_direct_rank_oracle(self):
        rng = np.random.default_rng(11)
        blocks = [rotation_block(2 * np.pi / 3),
                  rotation_block(2 * np.pi / 5),
                  np.diag([1.25, 0.8])]
        p = embed_blocks(*blocks)
        for n in range(1, 31):
            power = np.linalg.matrix_power(p, n) - np.eye(6)
            sing = np.linalg.svd(power, compute_uv=False)
            oracle = int(np.sum(sing <= 1e-9 * (1 + sing[0])))
            assert it.nullity_of_iterate(p, n) == oracle
        del rng

    def test_defective_cluster_falls_back_to_rank(self, twisted_transfer):
        # the twisted benchmark return map carries a genuine Jordan block
        # at eigenvalue one, split by integration noise
        value, flagged = it.nullity_of_iterate(
            twisted_transfer.monodromy, 1, details=True)
        assert value == 2
        assert flagged

    def test_agrees_with_variational_route(self, s2xr_transfer):
        import geodex.morse as ms
        for n in (1, 2, 3):
            report = ms.index_report(s2xr_transfer, n)
            assert it.nullity_of_iterate(s2xr_transfer.monodromy,
                                         n) == report.nullity


class TestNullityPartition:
    def test_single_rational_angle(self):
        p = embed_blocks(rotation_block(2 * np.pi / 3), np.eye(2))
        part = it.nullity_partition(p, 2, 12)
        assert part.m_values == [1, 3]
        assert part.classes[3] == [3, 6, 9, 12]
        assert part.classes[1] == [1, 2, 4, 5, 7, 8, 10, 11]
        assert part.nullities == {1: 2, 3: 4}

    def test_two_rational_angles(self):
        p = embed_blocks(rotation_block(2 * np.pi / 3),
                         rotation_block(2 * np.pi / 4))
        part = it.nullity_partition(p, 2, 24)
        assert part.m_values == [1, 3, 4, 12]
        assert part.s == 4
        assert part.classes[12] == [12, 24]

    def test_hyperbolic_map_is_one_class(self):
        p = embed_blocks(np.diag([1.1, 1 / 1.1]), np.diag([1.2, 1 / 1.2]))
        part = it.nullity_partition(p, 2, 10)
        assert part.m_values == [1]
        assert part.classes[1] == list(range(1, 11))

    def test_matches_brute_force_enumeration(self):
        p = embed_blocks(rotation_block(2 * np.pi / 6),
                         rotation_block(2 * np.pi / 4),
                         np.diag([1.3, 1 / 1.3]))
        n_max = 64
        part = it.nullity_partition(p, 3, n_max)
        # brute force: group 1..n_max by the nullity of the power
        brute = {}
        for n in range(1, n_max + 1):
            power = np.linalg.matrix_power(p, n) - np.eye(6)
            sing = np.linalg.svd(power, compute_uv=False)
            brute.setdefault(int(np.sum(sing <= 1e-8 * (1 + sing[0]))),
                             []).append(n)
        got = {}
        for m, members in part.classes.items():
            if members:
                got.setdefault(part.nullities[m], []).extend(members)
        assert {k: sorted(v) for k, v in got.items()} == brute

    def test_class_count_bound(self):
        p = embed_blocks(rotation_block(2 * np.pi / 3),
                         rotation_block(2 * np.pi / 4),
                         rotation_block(2 * np.pi / 5))
        part = it.nullity_partition(p, 3, 64)
        assert part.s <= 2 ** 3

    def test_ambiguous_angle_rejected(self):
        # halfway between 1/3 and the nearest admissible neighbor, with a
        # tolerance wide enough to reach both
        angle = 2 * np.pi * (1 / 3 + 1 / (2 * 3 * 64))
        p = embed_blocks(rotation_block(angle), np.eye(2))
        with pytest.raises(it.AngleRecognitionError):
            it.nullity_partition(p, 2, 8, angle_tol=0.1)

    def test_irrational_angle_contributes_nothing(self):
        p = embed_blocks(rotation_block(1.0), np.eye(2))
        part = it.nullity_partition(p, 2, 16)
        assert part.denominators == [1]
        assert part.m_values == [1]


class TestMorseRelations:
    def test_equal_sequences_give_zero_series(self):
        res = it.morse_relations_check([3, 2, 1], [3, 2, 1])
        assert res.holds
        assert all(q == 0 for q in res.q_coeffs)

    def test_plain_dominance(self):
        res = it.morse_relations_check([2, 1, 0], [1, 0, 0])
        assert res.holds
        assert res.q_coeffs[:2] == [1, 0]

    def test_weak_violation_fails(self):
        assert not it.morse_relations_check([0, 1], [1, 0]).holds

    def test_tail_must_vanish(self):
        # alternating sums differ, so the quotient series never terminates
        assert not it.morse_relations_check([1, 0], [0, 0]).holds

    def test_strong_implies_weak_on_random_pairs(self):
        rng = np.random.default_rng(23)
        seen_holds = 0
        for _ in range(300):
            length = int(rng.integers(1, 8))
            beta = rng.integers(0, 4, size=length)
            bump = rng.integers(0, 3, size=length)
            mu = beta + bump
            res = it.morse_relations_check(list(mu), list(beta))
            if res.holds:
                seen_holds += 1
                assert all(m >= b for m, b in zip(mu, beta))
        assert seen_holds > 50

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            it.morse_relations_check([1, -1], [0, 0])


class TestIterateTable:
    def test_flat_orbit_table_is_bounded(self, cylinder_transfer):
        table = it.iterate_analysis(cylinder_transfer, 6)
        assert table.growth_class == "bounded"
        assert table.all_bounds_hold
        assert [table.reports[n].mu for n in range(1, 7)] == [0] * 6
        assert all(table.reports[n].converged for n in range(1, 7))
        assert all(t > 0 for t in table.wall_times.values())

    def test_product_orbit_table_is_superlinear(self, s2xr_transfer):
        table = it.iterate_analysis(s2xr_transfer, 8)
        assert table.growth_class == "superlinear"
        assert table.alpha_bar > 0
        assert table.all_bounds_hold
        mus = [table.reports[n].mu for n in range(1, 9)]
        assert mus == [2 * n - 1 for n in range(1, 9)]
        assert all(mus[i] < mus[i + 1] for i in range(7))

    def test_first_row_bounds_are_trivial(self, s2xr_transfer):
        table = it.iterate_analysis(s2xr_transfer, 1)
        row = table.bounds[1]
        assert row["maslov"] and row["mubar_monotone"]
        assert row["superadditive"]
        assert row["cz"] is True

    def test_table_serializes_to_json(self, s2xr_transfer):
        table = it.iterate_analysis(s2xr_transfer, 2)
        blob = json.dumps(table.as_dict(), sort_keys=True)
        parsed = json.loads(blob)
        assert parsed["growth_class"] == "superlinear"
        assert parsed["reports"]["2"]["mu"] == 3

    def test_thread_count_env(self, monkeypatch):
        monkeypatch.setenv("GEODEX_THREADS", "4")
        assert it._thread_count() == 4
        monkeypatch.setenv("GEODEX_THREADS", "zero")
        with pytest.raises(ValueError):
            it._thread_count()

    def test_threaded_rows_match_serial(self, cylinder_transfer, monkeypatch):
        serial = it.iterate_analysis(cylinder_transfer, 3)
        monkeypatch.setenv("GEODEX_THREADS", "3")
        threaded = it.iterate_analysis(cylinder_transfer, 3)
        assert {n: r.mu for n, r in serial.reports.items()} \
            == {n: r.mu for n, r in threaded.reports.items()}
        assert serial.growth_class == threaded.growth_class


def test_lcm_helper_consistency():
    # the partition class representative must divide every member
    p = embed_blocks(rotation_block(2 * np.pi / 6), np.eye(2))
    part = it.nullity_partition(p, 2, 36)
    for m, members in part.classes.items():
        for n in members:
            assert n % m == 0
            assert math.gcd(n, m) == m
