import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motionprior.errors import InputError
from motionprior.latent import central_difference, gpdm_terms, sequence_pairs
from motionprior.serialization import from_json, to_json
from motionprior.skeleton import catalogue_spec, generate_synthetic_action
from motionprior.transitions import (
    SEPARATE, UNIFIED, ModelBank, build_separate_bank, build_unified_bank, find_transition_pairs,
    mean_transition_distance, path_cost, reconstruct_path, synthesize_path, unified_topo_pairs,
)


class TestFindPairs:
    def test_shared_pose_ranked_first(self):
        a = np.array([[0.0, 1.0], [2.0, 2.0], [5.0, 5.0]])
        b = np.array([[9.0, 9.0], [2.0, 2.0]])
        assert find_transition_pairs(a, b, 1) == [(1, 1, 0.0)]

    def test_brute_force_grid(self):
        r = np.random.default_rng(0)
        a, b = r.normal(size=(3, 2)), r.normal(size=(3, 2))
        best = min(itertools.product(range(3), range(3)), key=lambda ij: np.linalg.norm(a[ij[0]] - b[ij[1]]))
        i, j, dist = find_transition_pairs(a, b, 1)[0]
        assert (i, j) == best
        assert dist == pytest.approx(np.linalg.norm(a[i] - b[j]))

    def test_tie_prefers_lower_a_index(self):
        a = np.array([[1.0], [0.0], [0.0]])
        b = np.array([[0.0], [0.0]])
        assert [p[:2] for p in find_transition_pairs(a, b, 3)] == [(1, 0), (1, 1), (2, 0)]

    @given(st.integers(0, 1000), st.integers(1, 12))
    def test_sorted_and_complete(self, seed, k):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(4, 3)), r.normal(size=(3, 3))
        pairs = find_transition_pairs(a, b, k)
        d = [p[2] for p in pairs]
        assert d == sorted(d) and len(pairs) == k
        all_d = sorted(np.linalg.norm(a[i] - b[j]) for i in range(4) for j in range(3))
        assert np.allclose(d, all_d[:k])

    @pytest.mark.parametrize("k", [0, 7])
    def test_bad_k(self, k):
        with pytest.raises(InputError):
            find_transition_pairs(np.zeros((2, 1)), np.zeros((3, 1)), k)


def dense_path_oracle(start, end, n, lam):
    """Minimize the quadratic path cost by one dense linear solve over the interior points."""
    D1 = np.diff(np.eye(n), axis=0)
    D2 = np.diff(np.eye(n), n=2, axis=0)
    Q = D1.T @ D1 + lam * D2.T @ D2
    inner = list(range(1, n - 1))
    fixed = np.array([start, end])
    rhs = -Q[np.ix_(inner, [0, n - 1])] @ fixed
    W = np.vstack([start, np.linalg.solve(Q[np.ix_(inner, inner)], rhs), end])
    return W


class TestSynthesizePath:
    def test_degenerate(self):
        w = synthesize_path([0.3, -0.1], [0.3, -0.1])
        assert np.allclose(w, [0.3, -0.1]) and path_cost(w, 1.0) == 0.0

    def test_length_only_is_collinear(self):
        w = synthesize_path([0, 0, 0], [1, 2, -1], smooth_weight=0.0, n_waypoints=7)
        u = np.array([1, 2, -1]) / np.linalg.norm([1, 2, -1])
        resid = w - np.outer(w @ u, u)
        assert np.max(np.abs(resid)) < 1e-6

    def test_dense_solve_oracle(self):
        w = synthesize_path([0.0, 0.0], [1.0, 0.0], n_waypoints=5, smooth_weight=1.0)
        assert np.max(np.abs(w - dense_path_oracle(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 5, 1.0))) < 1e-8

    @given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.integers(2, 8), st.floats(0, 5))
    def test_endpoints_fixed_and_cost_not_above_straight_line(self, pts, n, lam):
        s, e = np.array(pts[:2]), np.array(pts[2:])
        w = synthesize_path(s, e, n_waypoints=n, smooth_weight=lam)
        assert np.allclose(w[0], s, atol=1e-12) and np.allclose(w[-1], e, atol=1e-12)
        t = np.linspace(0, 1, n)[:, None]
        assert path_cost(w, lam) <= path_cost((1 - t) * s + t * e, lam) + 1e-12

    def test_bad_arguments(self):
        with pytest.raises(InputError):
            synthesize_path([0.0], [1.0], n_waypoints=1)
        with pytest.raises(InputError):
            synthesize_path([0.0], [1.0], smooth_weight=-1.0)


class TestSeparateBank:
    def test_counts_and_connectivity(self, separate_bank):
        assert separate_bank.mode == SEPARATE
        assert len(separate_bank.models) == 2
        assert len(separate_bank.paths) == 2 * 3
        assert separate_bank.is_strongly_connected()
        assert not separate_bank.without_paths().is_strongly_connected()

    def test_endpoints(self, separate_bank):
        for p in separate_bank.paths:
            src, dst = separate_bank.models[p.src_model], separate_bank.models[p.dst_model]
            assert np.max(np.abs(p.waypoints[-1] - dst.X[p.dst_entry_index])) < 1e-9
            assert np.max(np.abs(p.exit_point - src.X[p.src_exit_index])) < 1e-9
            assert p.cost == pytest.approx(path_cost(p.waypoints, 1.0), rel=1e-12)

    def test_exit_image_reconstructs_exit_observation(self, separate_bank):
        # the first waypoint is the exit frame's image in the destination space
        for p in separate_bank.paths:
            src = separate_bank.models[p.src_model]
            y_exit = src.base.data_mean + src.base.Y_centered[p.src_exit_index]
            first = reconstruct_path(separate_bank, p)[0]
            far = separate_bank.models[p.dst_model].base.data_mean
            assert np.linalg.norm(first - y_exit) < np.linalg.norm(far - y_exit)

    def test_short_action_rejected(self):
        groups = {"a": [np.zeros((2, 3))], "b": [np.ones((5, 3))]}
        with pytest.raises(InputError):
            build_separate_bank(groups, d=1)

    def test_single_action_rejected(self):
        with pytest.raises(InputError):
            build_separate_bank({"a": [np.random.default_rng(0).normal(size=(5, 3))]}, d=1)

    def test_identical_actions_give_cheaper_paths(self):
        def seq(label, seed):
            return generate_synthetic_action(catalogue_spec(label), 30, noise_sd=0.01, seed=seed)
        same = build_separate_bank({"walk": [seq("walk", 0)], "walk2": [seq("walk", 1)]}, d=2, k_paths=2,
                                   max_iters=100)
        diff = build_separate_bank({"walk": [seq("walk", 0)], "kick": [seq("kick", 1)]}, d=2, k_paths=2,
                                   max_iters=100)
        assert min(p.cost for p in same.paths) < min(p.cost for p in diff.paths)


def _groups(n=25):
    return {a: [generate_synthetic_action(catalogue_spec(a), n, noise_sd=0.01, seed=i)]
            for i, a in enumerate(("walk", "kick"))}


class TestUnifiedBank:
    def test_structure(self, unified_bank):
        assert unified_bank.mode == UNIFIED and len(unified_bank.models) == 1
        assert unified_bank.labels == ["walk", "kick"]
        assert len(unified_bank.paths) == 2 * 3
        X = unified_bank.models[0].X
        for p in unified_bank.paths:
            assert np.max(np.abs(p.waypoints[0] - X[p.src_exit_index])) < 1e-9
            assert np.max(np.abs(p.waypoints[-1] - X[p.dst_entry_index])) < 1e-9

    def test_zero_penalty_equals_plain_objective(self):
        r = np.random.default_rng(0)
        Y = r.normal(size=(8, 3))
        p = np.concatenate([r.normal(size=16), r.normal(0, 0.3, size=6)])
        pairs, firsts = sequence_pairs([4, 4])
        a, ga = gpdm_terms(p, Y, 2, pairs, firsts, topo_pairs=np.array([[0, 5]]), topo_weight=0.0)
        b, gb = gpdm_terms(p, Y, 2, pairs, firsts)
        assert sum(a.values()) == sum(b.values()) and np.array_equal(ga, gb)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_penalized_gradient(self, seed):
        r = np.random.default_rng(seed)
        groups = _groups(6)
        topo = np.array(unified_topo_pairs(groups, 2))
        Y = np.vstack([g[0].frames for g in groups.values()])
        Y -= Y.mean(0)
        p = np.concatenate([r.normal(size=24), r.normal(0, 0.3, size=6)])
        pairs, firsts = sequence_pairs([6, 6])
        kw = dict(topo_pairs=topo, topo_weight=10.0)
        _, g = gpdm_terms(p, Y, 2, pairs, firsts, **kw)
        fd = central_difference(lambda q: sum(gpdm_terms(q, Y, 2, pairs, firsts, **kw)[0].values()), p)
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    def test_penalty_monotone(self):
        groups = _groups()
        dists = [mean_transition_distance(build_unified_bank(groups, d=2, k_paths=3, topo_weight=w,
                                                             max_iters=150, seed=0))
                 for w in (0.0, 10.0, 100.0)]
        # topo_weight 10 against 0 is strict; the three weights are ordered
        assert dists[1] < dists[0]
        assert dists[0] >= dists[1] >= dists[2]

    def test_mean_distance_needs_unified(self, separate_bank):
        with pytest.raises(InputError):
            mean_transition_distance(separate_bank)


class TestBankInvariants:
    def test_unified_needs_one_model(self, separate_bank):
        with pytest.raises(InputError):
            ModelBank(separate_bank.models, ["a", "b"], [], UNIFIED)

    def test_separate_needs_labels(self, separate_bank):
        with pytest.raises(InputError):
            ModelBank(separate_bank.models, ["a"], [], SEPARATE)

    def test_json_round_trip(self, separate_bank):
        back = from_json(to_json(separate_bank))
        assert back.labels == separate_bank.labels and len(back.paths) == len(separate_bank.paths)
        for m0, m1 in zip(separate_bank.models, back.models):
            assert np.array_equal(m0.X, m1.X) and m0.dyn_kernel == m1.dyn_kernel
        for p0, p1 in zip(separate_bank.paths, back.paths):
            assert np.array_equal(p0.waypoints, p1.waypoints) and p0.cost == p1.cost
