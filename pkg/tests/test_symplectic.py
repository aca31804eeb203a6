"""Tests for Maslov / Conley-Zehnder / Hormander index machinery."""

import json

import numpy as np
import pytest
import scipy.linalg

import geodex.symplectic as sp
from geodex import bilinear as bl


def rotated_line_path(space, alpha0, alpha1):
    """Path of Lagrangian lines span(cos a, sin a) in R^2."""

    def many(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        a = alpha0 + (alpha1 - alpha0) * (ts - 0.0)
        return np.stack([np.cos(a), np.sin(a)], axis=1)[:, :, None]

    return sp.SympPath(space, "lagrangian", lambda t: many([t])[0],
                       0.0, 1.0, np.linspace(0, 1, 33), many)


class TestChartForm:
    def test_line_chart_value_is_cotangent(self):
        # L = span(cos a, sin a) in the (vertical, horizontal) chart has
        # the 1x1 chart form cot(a)
        space = sp.SympSpace(2)
        l0 = sp.vertical(space)
        l1 = sp.horizontal(space)
        for alpha in (0.3, 1.1, 2.0, 2.8):
            frame = np.array([[np.cos(alpha)], [np.sin(alpha)]])
            form = sp.chart_form(space, frame, l0, l1)
            assert form.matrix[0, 0] == pytest.approx(1.0 / np.tan(alpha), rel=1e-12)

    def test_chart_form_kernel_is_intersection(self):
        space = sp.SympSpace(2)
        form = sp.chart_form(space, sp.vertical(space).basis,
                             sp.vertical(space), sp.horizontal(space))
        counts = bl.index_coindex_nullity(form)
        assert (counts.n_minus, counts.n_plus, counts.n_zero) == (0, 0, 1)

    def test_nontransverse_chart_rejected(self):
        space = sp.SympSpace(2)
        with pytest.raises(sp.TransversalityError):
            sp.chart_form(space, sp.horizontal(space).basis,
                          sp.vertical(space), sp.vertical(space))


class TestLagrangianFrame:
    def test_non_lagrangian_columns_rejected(self):
        space = sp.SympSpace(4)
        bad = np.zeros((4, 2))
        bad[0, 0] = 1.0
        bad[2, 1] = 1.0  # span{e1, e3} pairs to omega(e1, e3) = 1
        with pytest.raises(ValueError):
            sp.lagrangian_frame(space, bad)

    def test_frames_are_orthonormalized(self):
        space = sp.SympSpace(4)
        cols = sp.vertical(space).basis @ np.array([[2.0, 1.0], [0.0, 3.0]])
        frame = sp.lagrangian_frame(space, cols)
        assert np.allclose(frame.basis.T @ frame.basis, np.eye(2), atol=1e-12)


class TestMaslovLine:
    def test_quarter_turn_through_vertical(self):
        # line sweeping alpha from pi/4 to 3pi/4 crosses the vertical
        # (alpha = pi/2) once, negatively in this convention
        space = sp.SympSpace(2)
        path = rotated_line_path(space, np.pi / 4, 3 * np.pi / 4)
        assert sp.maslov_index(path) == -1
        assert sp.maslov_index_uniform(path, samples=2000) == -1

    def test_full_half_turn_loop(self):
        space = sp.SympSpace(2)
        path = rotated_line_path(space, 0.2, 0.2 + np.pi)
        assert sp.maslov_index(path) == -1

    def test_no_crossing_is_zero(self):
        space = sp.SympSpace(2)
        path = rotated_line_path(space, 0.2, 0.8)
        assert sp.maslov_index(path) == 0

    def test_start_on_train_counts_endpoint(self):
        # starting exactly at the vertical: extco drops from 1 to 0 as
        # the line leaves the train (the crossing is negative in this
        # convention); the reversed path gains it back on arrival
        space = sp.SympSpace(2)
        path = rotated_line_path(space, np.pi / 2, np.pi / 2 + 0.5)
        assert sp.maslov_index(path) == -1
        rev = rotated_line_path(space, np.pi / 2 + 0.5, np.pi / 2)
        assert sp.maslov_index(rev) == 1


class TestRotationLoop:
    def test_winding_of_full_turn(self):
        space = sp.SympSpace(2)
        rot = sp.rotation_path(space, [1.0])
        assert sp.loop_winding(rot) == -1
        assert sp.loop_winding(sp.rotation_path(space, [-2.0])) == 2

    def test_cz_of_full_turn_matches_oracle(self):
        space = sp.SympSpace(2)
        rot = sp.rotation_path(space, [1.0])
        cz = sp.conley_zehnder(rot)
        assert abs(cz) == 2
        assert cz == sp.conley_zehnder_uniform(rot, samples=4000)

    def test_loop_identity_cz_equals_minus_mu(self):
        space = sp.SympSpace(2)
        rot = sp.rotation_path(space, [1.0])
        mu = sp.maslov_index(sp.lagrangian_image(rot, sp.vertical(space)))
        assert sp.conley_zehnder(rot) == -mu


class TestOracleAgreement:
    def test_maslov_random_paths(self):
        rng = np.random.default_rng(101)
        for k in range(12):
            n = 1 + k % 2
            space = sp.SympSpace(2 * n)
            p = sp.random_symplectic_path(space, rng,
                                          from_identity=bool(k % 3))
            lp = sp.lagrangian_image(p, sp.vertical(space))
            assert sp.maslov_index(lp) == sp.maslov_index_uniform(lp, samples=2500)

    def test_cz_random_paths(self):
        rng = np.random.default_rng(102)
        for k in range(8):
            n = 1 + k % 2
            space = sp.SympSpace(2 * n)
            p = sp.random_symplectic_path(space, rng)
            assert sp.conley_zehnder(p) == sp.conley_zehnder_uniform(p, samples=2500)


class TestGroupoidProperties:
    def test_concatenation_additivity(self):
        rng = np.random.default_rng(103)
        for k in range(6):
            space = sp.SympSpace(2 * (1 + k % 2))
            p = sp.random_symplectic_path(space, rng, from_identity=False)
            lp = sp.lagrangian_image(p, sp.vertical(space))
            t_split = float(rng.uniform(0.25, 0.75))

            def clip(a, b, lp=lp):
                def many(ts, lp=lp):
                    return lp.at_many(ts)
                return sp.SympPath(lp.space, "lagrangian", lp.evaluate, a, b,
                                   np.linspace(a, b, 17), many)

            whole = sp.maslov_index(lp)
            left = sp.maslov_index(clip(0.0, t_split))
            right = sp.maslov_index(clip(t_split, 1.0))
            assert whole == left + right

    def test_reversal_negates(self):
        rng = np.random.default_rng(104)
        for k in range(6):
            space = sp.SympSpace(2 * (1 + k % 2))
            p = sp.random_symplectic_path(space, rng, from_identity=False)
            lp = sp.lagrangian_image(p, sp.vertical(space))
            assert sp.maslov_index(sp.reverse_path(lp)) == -sp.maslov_index(lp)

    def test_symplectic_invariance(self):
        rng = np.random.default_rng(105)
        for k in range(6):
            space = sp.SympSpace(2 * (1 + k % 2))
            p = sp.random_symplectic_path(space, rng, from_identity=False)
            l0 = sp.vertical(space)
            lp = sp.lagrangian_image(p, l0)
            psi = sp.random_symplectic_path(space, rng).evaluate(0.77)

            def many(ts, lp=lp, psi=psi):
                return psi[None] @ lp.at_many(ts)

            moved = sp.SympPath(space, "lagrangian",
                                lambda t: many([t])[0], 0.0, 1.0, lp.grid, many)
            moved_l0 = sp.lagrangian_frame(space, psi @ l0.basis)
            assert sp.maslov_index(moved, moved_l0) == sp.maslov_index(lp, l0)

    def test_reparameterization_invariance(self):
        rng = np.random.default_rng(106)
        space = sp.SympSpace(4)
        p = sp.random_symplectic_path(space, rng, from_identity=False)
        lp = sp.lagrangian_image(p, sp.vertical(space))

        def warp(ts):
            ts = np.asarray(ts, dtype=float)
            return ts * ts * (3.0 - 2.0 * ts)

        def many(ts):
            return lp.at_many(warp(ts))

        warped = sp.SympPath(space, "lagrangian", lambda t: many([t])[0],
                             0.0, 1.0, np.linspace(0, 1, 33), many)
        assert sp.maslov_index(warped) == sp.maslov_index(lp)


class TestHormander:
    def test_equal_endpoint_pair_is_zero(self):
        rng = np.random.default_rng(107)
        space = sp.SympSpace(4)
        l0 = sp.random_lagrangian_frame(space, rng)
        l1 = sp.random_lagrangian_frame(space, rng)
        lp = sp.random_lagrangian_frame(space, rng)
        assert sp.hormander_index(l0, l1, lp, lp) == 0

    def test_equal_index_pair_is_zero(self):
        rng = np.random.default_rng(108)
        space = sp.SympSpace(4)
        l0 = sp.random_lagrangian_frame(space, rng)
        lp = sp.random_lagrangian_frame(space, rng)
        lq = sp.random_lagrangian_frame(space, rng)
        assert sp.hormander_index(l0, l0, lp, lq) == 0

    def test_antisymmetry_in_first_pair(self):
        rng = np.random.default_rng(109)
        space = sp.SympSpace(4)
        frames = [sp.random_lagrangian_frame(space, rng) for _ in range(4)]
        q1 = sp.hormander_index(frames[0], frames[1], frames[2], frames[3])
        q2 = sp.hormander_index(frames[1], frames[0], frames[2], frames[3])
        assert q1 == -q2

    def test_relative_maslov_difference_formula(self):
        rng = np.random.default_rng(110)
        for k in range(6):
            space = sp.SympSpace(2 * (1 + k % 2))
            p = sp.random_symplectic_path(space, rng, from_identity=False)
            l1 = sp.random_lagrangian_frame(space, rng)
            l2 = sp.random_lagrangian_frame(space, rng)
            out = sp.relative_maslov_check(p, l1, l2)
            assert out["holds"], out


class TestBridgeIdentity:
    def test_generic_paths(self):
        rng = np.random.default_rng(111)
        for k in range(10):
            n = 1 + k % 2
            space = sp.SympSpace(2 * n)
            p = sp.random_symplectic_path(space, rng, from_identity=False)
            out = sp.cz_maslov_bridge_check(p)
            assert out["holds"], out

    def test_identity_start_needs_endpoint_term(self):
        rng = np.random.default_rng(112)
        space = sp.SympSpace(2)
        p = sp.random_symplectic_path(space, rng, from_identity=True)
        out = sp.cz_maslov_bridge_check(p)
        assert out["endpoint_term"] == -2
        assert not out["holds"]
        assert out["holds_with_endpoint_term"]

    def test_loops_reduce_to_loop_identity(self):
        rng = np.random.default_rng(113)
        for k in range(6):
            space = sp.SympSpace(2 * (1 + k % 2))
            loop = sp.random_symplectic_loop(space, rng,
                                             winding=int(rng.integers(-2, 3)))
            cz = sp.conley_zehnder(loop)
            mu = sp.maslov_index(sp.lagrangian_image(loop, sp.vertical(space)))
            assert cz == -mu


class TestIterationBounds:
    def test_small_angle_rotations_within_stated_bound(self):
        space = sp.SympSpace(2)
        for theta in (0.15, 1 / np.pi, np.sqrt(2) - 1):
            rot = sp.rotation_path(space, [theta])
            for n_iter in (1, 2, 3, 5, 8):
                rep = sp.iteration_bound_check(rot, n_iter, "cz")
                assert rep.within, rep

    def test_positive_wide_rotation_saturates_two_sided_envelope(self):
        # theta in (1/2, 1) exceeds the stated one-sided constant but
        # stays within 2n(N-1); N = 5 attains it exactly
        space = sp.SympSpace(2)
        rot = sp.rotation_path(space, [0.8])
        rep = sp.iteration_bound_check(rot, 5, "cz")
        assert not rep.within
        assert rep.within_two_sided
        assert abs(rep.iterate_value - 5 * rep.base_value) == rep.two_sided_bound

    def test_maslov_bound_on_rotations(self):
        space = sp.SympSpace(2)
        for theta in (0.15, 0.35, 0.8, -0.8):
            rot = sp.rotation_path(space, [theta])
            for n_iter in (2, 5, 8):
                rep = sp.iteration_bound_check(rot, n_iter, "maslov")
                assert rep.within, rep

    def test_random_identity_paths(self):
        rng = np.random.default_rng(114)
        for k in range(4):
            space = sp.SympSpace(2 * (1 + k % 2))
            p = sp.random_symplectic_path(space, rng, from_identity=True)
            for n_iter in (2, 4):
                rep = sp.iteration_bound_check(p, n_iter, "cz")
                assert rep.within_two_sided, rep
                rep = sp.iteration_bound_check(p, n_iter, "maslov")
                assert rep.within, rep

    def test_iterate_path_is_floquet(self):
        rng = np.random.default_rng(115)
        space = sp.SympSpace(4)
        p = sp.random_symplectic_path(space, rng, from_identity=True)
        ip = sp.iterate_path(p, 3)
        monodromy = p.evaluate(1.0)
        expect = p.evaluate(0.4) @ monodromy @ monodromy
        assert np.allclose(ip.evaluate(2.4), expect, atol=1e-10)
        assert np.allclose(ip.evaluate(3.0),
                           monodromy @ monodromy @ monodromy, atol=1e-10)


class TestWinding:
    def test_block_diagonal_loops_wind_zero(self):
        rng = np.random.default_rng(116)
        space = sp.SympSpace(4)
        n = 2
        for _ in range(4):
            a = rng.standard_normal((n, n))

            def many(ts, a=a):
                ts = np.atleast_1d(np.asarray(ts, dtype=float))
                out = np.zeros((ts.size, 2 * n, 2 * n))
                for i, t in enumerate(ts):
                    m = scipy.linalg.expm(np.sin(np.pi * t) ** 2 * a)
                    out[i, :n, :n] = m
                    out[i, n:, n:] = np.linalg.inv(m).T
                return out

            loop = sp.SympPath(space, "symplectic", lambda t: many([t])[0],
                               0.0, 1.0, np.linspace(0, 1, 65), many)
            assert sp.loop_winding(loop) == 0

    def test_multi_block_winding_adds(self):
        space = sp.SympSpace(4)
        rot = sp.rotation_path(space, [1.0, 2.0])
        assert sp.loop_winding(rot) == -3

    def test_open_path_rejected(self):
        space = sp.SympSpace(2)
        with pytest.raises(ValueError):
            sp.loop_winding(sp.rotation_path(space, [0.25]))


class TestPathFiles:
    def test_round_trip_preserves_indices(self, tmp_path):
        rng = np.random.default_rng(117)
        space = sp.SympSpace(4)
        p = sp.random_symplectic_path(space, rng)
        fn = tmp_path / "path.json"
        sp.save_path_json(fn, p, samples=np.linspace(0, 1, 401))
        q = sp.load_path_json(fn)
        assert q.kind == "symplectic"
        assert sp.conley_zehnder(q) == sp.conley_zehnder(p)

    def test_lagrangian_kind_round_trip(self, tmp_path):
        rng = np.random.default_rng(118)
        space = sp.SympSpace(2)
        p = sp.random_symplectic_path(space, rng)
        lp = sp.lagrangian_image(p, sp.vertical(space))
        fn = tmp_path / "lpath.json"
        sp.save_path_json(fn, lp, samples=np.linspace(0, 1, 401))
        q = sp.load_path_json(fn)
        assert q.kind == "lagrangian"
        assert sp.maslov_index(q) == sp.maslov_index(lp)

    def test_invalid_samples_rejected(self, tmp_path):
        doc = {
            "dim2n": 2,
            "kind": "symplectic",
            "omega": [[0.0, 1.0], [-1.0, 0.0]],
            "samples": [[0.0, [1.0, 0.0, 0.0, 1.0]],
                        [1.0, [2.0, 0.0, 0.0, 3.0]]],
        }
        fn = tmp_path / "bad.json"
        fn.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="residual"):
            sp.load_path_json(fn)

    def test_unknown_kind_rejected(self, tmp_path):
        doc = {"dim2n": 2, "kind": "banana", "omega": None, "samples": []}
        fn = tmp_path / "odd.json"
        fn.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="kind"):
            sp.load_path_json(fn)


class TestCustomOmega:
    def test_indices_invariant_under_coordinate_permutation(self):
        # same geometry expressed in shuffled coordinates; a fixed
        # permutation conjugates omega and the path
        rng = np.random.default_rng(119)
        space = sp.SympSpace(4)
        perm = np.eye(4)[[2, 0, 3, 1]]
        omega2 = perm @ space.omega @ perm.T
        space2 = sp.SympSpace(4, omega2)
        assert not space2._canonical
        p = sp.random_symplectic_path(space, rng, from_identity=False)

        def many(ts):
            return perm[None] @ p.at_many(ts) @ perm.T[None]

        p2 = sp.SympPath(space2, "symplectic", lambda t: many([t])[0],
                         0.0, 1.0, p.grid, many)
        assert sp.conley_zehnder(p2) == sp.conley_zehnder(p)

    def test_degenerate_omega_rejected(self):
        with pytest.raises(ValueError):
            sp.SympSpace(4, np.zeros((4, 4)))


def test_self_test_passes_and_is_deterministic():
    a = sp.self_test(seed=3, cases=4)
    b = sp.self_test(seed=3, cases=4)
    assert a["ok"], a["failures"]
    assert a == b
