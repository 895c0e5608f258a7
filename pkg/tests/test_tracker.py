import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st

from motionprior.errors import DegenerateWeightsError, InputError, WiringError
from motionprior.harness.config import ExperimentConfig
from motionprior.harness.experiments import build_switch_sequence, pose_mappings, train_setup, training_data
from motionprior.latent import (
    GpdmModel, KernelParams, LatentModel, dynamics_step, gpdm_fit, gplvm_fit, latent_to_observation, sequence_pairs,
)
from motionprior.mappings import fit_mapping
from motionprior.skeleton import ObservationModel, default_skeleton, joint_error, make_observation
from motionprior.tracker import (
    Particle, ParticleSet, TrackerConfig, default_transfer_radius, estimate, init_particles, maybe_transfer,
    predict, resample, track, weight,
)
from motionprior.transitions import SEPARATE, ModelBank, TransitionPath

from test_latent import direct_posterior, hand_gpdm

# recorded bound for noise-free self-consistency tracking (meters); measured 0.005 on seeds 0-2
SELF_CONSISTENCY_BOUND = 0.02


def pset(xs, weights=None, model_ids=None, seed=0):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = len(xs)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    ids = np.zeros(n, dtype=int) if model_ids is None else np.asarray(model_ids, dtype=int)
    return ParticleSet(ids, xs.copy(), w, np.full(n, -1), np.full(n, -1), np.random.default_rng(seed))


@pytest.fixture(scope="module")
def setup0():
    cfg = ExperimentConfig()
    groups, feats, obs = training_data(cfg, 0)
    return cfg, groups, feats, obs, train_setup(groups, feats, cfg, 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(n_particles=0), dict(process_noise_sd=0.0), dict(obs_noise_sd=-1.0),
                                    dict(resample_threshold=0.0), dict(resample_threshold=1.5),
                                    dict(transfer_prob=2.0)])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            TrackerConfig(**kw)


class TestInit:
    def test_single_model(self, separate_bank, gait_features):
        bank = ModelBank(separate_bank.models[:1], ["walk"])
        ps = init_particles(bank, gait_features["walk"][0], TrackerConfig(n_particles=100))
        assert len(ps) == 100 and np.all(ps.model_id == 0)
        assert np.allclose(ps.weights, 0.01)

    def test_identical_models_split_evenly(self, separate_bank, gait_features):
        m = separate_bank.models[0]
        bank = ModelBank([m, m], ["a", "b"])
        ps = init_particles(bank, gait_features["walk"][3], TrackerConfig(n_particles=501))
        counts = np.bincount(ps.model_id, minlength=2)
        assert abs(counts[0] - counts[1]) <= 1

    @pytest.mark.parametrize("action,model", [("walk", 0), ("kick", 1)])
    def test_observed_action_gets_majority(self, separate_bank, gait_features, action, model):
        ps = init_particles(separate_bank, gait_features[action][10], TrackerConfig(seed=0))
        assert np.mean(ps.model_id == model) >= 0.6

    def test_observation_dimension(self, separate_bank):
        with pytest.raises(InputError):
            init_particles(separate_bank, np.zeros(3), TrackerConfig())


class TestPredict:
    def test_noiseless_dynamics(self):
        m = hand_gpdm()
        bank = ModelBank([m, m], ["a", "b"])
        ps = predict(pset(m.X[:5]), bank, TrackerConfig(process_noise_sd=1e-12))
        assert np.allclose(ps.x, m.X[1:6], atol=1e-3)

    def test_path_traversal(self):
        m = hand_gpdm()
        path = TransitionPath(0, 1, 2, 3, np.arange(8.0).reshape(4, 2), 1.0)
        bank = ModelBank([m, m], ["a", "b"], [path])
        ps = pset([[0.0, 0.0]])
        ps.path_id[0], ps.path_pos[0] = 0, 2
        out = predict(ps, bank, TrackerConfig(transfer_cooldown=3))
        assert out.model_id[0] == 1 and out.path_id[0] == -1
        assert np.array_equal(out.x[0], path.waypoints[3])
        assert out.cooldown[0] == 3
        # the input set is left untouched and weights are unchanged
        assert ps.path_pos[0] == 2 and np.array_equal(out.weights, ps.weights)

    def test_mid_path_keeps_source_model(self):
        m = hand_gpdm()
        path = TransitionPath(0, 1, 2, 3, np.arange(8.0).reshape(4, 2), 1.0)
        bank = ModelBank([m, m], ["a", "b"], [path])
        ps = pset([[0.0, 0.0]])
        ps.path_id[0], ps.path_pos[0] = 0, 0
        out = predict(ps, bank, TrackerConfig())
        assert out.path_pos[0] == 1 and out.model_id[0] == 0
        assert out.space_model(bank)[0] == 1

    def test_monte_carlo_mean(self):
        m = hand_gpdm(noise=0.01)
        bank = ModelBank([m], ["a"])
        x0 = np.array([0.4, 0.5])
        sd = 0.05
        ps = predict(pset(np.tile(x0, (1000, 1)), seed=3), bank, TrackerConfig(n_particles=1000, process_noise_sd=sd))
        mean, _ = dynamics_step(m, x0)
        assert np.all(np.abs(ps.x.mean(0) - mean) < 3 * sd / np.sqrt(1000))


class TestWeight:
    def test_delta_likelihood(self, separate_bank):
        m = separate_bank.models[0]
        bank = ModelBank([m], ["walk"])
        obs = latent_to_observation(m.base, m.X[5])[0]
        ps = weight(pset(m.X[[5, 12, 20, 27]]), bank, obs, TrackerConfig(obs_noise_sd=0.01))
        assert ps.weights[0] > 1 - 1e-9

    def test_identical_particles_uniform(self, separate_bank):
        m = separate_bank.models[0]
        bank = ModelBank([m], ["walk"])
        ps = weight(pset(np.tile(m.X[3], (7, 1))), bank, np.ones(m.D), TrackerConfig())
        assert np.allclose(ps.weights, 1 / 7, atol=1e-15)

    def test_hand_formula(self):
        r = np.random.default_rng(6)
        X = r.normal(size=(8, 2))
        base = LatentModel(X, r.normal(size=(8, 4)), np.array([0.5, -0.5, 1.0, 0.0]), KernelParams(1.0, 0.9, 0.05))
        m = GpdmModel(base, KernelParams(), sequence_pairs([8])[0])
        bank = ModelBank([m], ["hand"])
        xs = X[[1, 4, 6]] + 0.1
        prior = np.array([0.2, 0.3, 0.5])
        obs = np.array([0.3, -0.2, 1.4, 0.1])
        sd = 0.4
        ps = weight(pset(xs, prior), bank, obs, TrackerConfig(obs_noise_sd=sd))
        mus = [direct_posterior(X, base.Y_centered, base.kernel, x)[0] + base.data_mean for x in xs]
        raw = [p * np.exp(-np.sum((obs - mu) ** 2) / (2 * sd ** 2)) for p, mu in zip(prior, mus)]
        assert np.allclose(ps.weights, np.array(raw) / sum(raw), atol=1e-12, rtol=0)

    def test_normalized(self, separate_bank, gait_features):
        ps = init_particles(separate_bank, gait_features["walk"][0], TrackerConfig(seed=4))
        for t in range(1, 6):
            ps = weight(predict(ps, separate_bank, TrackerConfig()), separate_bank, gait_features["walk"][t],
                        TrackerConfig())
            assert abs(ps.weights.sum() - 1) < 1e-9 and np.all(ps.weights >= 0)
            assert len(ps) == 500

    def test_degenerate(self, separate_bank):
        m = separate_bank.models[0]
        bank = ModelBank([m], ["walk"])
        with pytest.raises(DegenerateWeightsError):
            weight(pset(m.X[:3]), bank, np.full(m.D, 1e6), TrackerConfig())

    def test_dimension_mismatch(self, separate_bank):
        with pytest.raises(InputError):
            weight(pset(separate_bank.models[0].X[:3]), separate_bank, np.zeros(2), TrackerConfig())


class TestEstimate:
    def test_single_particle_mass(self, separate_bank):
        ps = pset([[0.1, 0.2], [0.5, 0.5], [2.0, 1.0]], [0.0, 1.0, 0.0], [0, 1, 1])
        est = estimate(ps, separate_bank)
        assert est.model_id == 1 and np.array_equal(est.latent_mean, [0.5, 0.5])

    def test_midpoint(self, separate_bank):
        est = estimate(pset([[0.0, 0.0], [1.0, 3.0]], [0.5, 0.5]), separate_bank)
        assert np.allclose(est.latent_mean, [0.5, 1.5])

    def test_recomputation_oracle(self, separate_bank):
        r = np.random.default_rng(9)
        xs, w, ids = r.normal(size=(100, 2)), r.random(100), r.integers(0, 2, 100)
        w /= w.sum()
        est = estimate(pset(xs, w, ids), separate_bank)
        mass = [sum(w[i] for i in range(100) if ids[i] == k) for k in (0, 1)]
        k = int(np.argmax(mass))
        num = sum(w[i] * xs[i] for i in range(100) if ids[i] == k)
        assert est.model_id == k
        assert np.allclose(est.model_mass, mass, atol=1e-12)
        assert np.max(np.abs(est.latent_mean - num / mass[k])) < 1e-12

    @given(st.lists(st.floats(0.01, 10.0), min_size=4, max_size=4), st.floats(1e-3, 1e3))
    def test_argmax_invariance(self, raw, scale):
        bank = ModelBank([hand_gpdm(), hand_gpdm()], ["a", "b"])
        raw = np.array(raw)
        ids = [0, 1, 1, 0]
        xs = np.arange(8.0).reshape(4, 2)
        a = estimate(pset(xs, raw / raw.sum(), ids), bank)
        b = estimate(pset(xs, scale * raw / (scale * raw).sum(), ids), bank)
        assert a.model_id == b.model_id


class TestResample:
    def test_uniform_not_resampled(self):
        ps = pset(np.random.default_rng(0).normal(size=(10, 2)))
        assert resample(ps, TrackerConfig(resample_threshold=0.5)) is ps

    def test_single_weight_copies(self):
        xs = np.random.default_rng(1).normal(size=(10, 2))
        w = np.zeros(10)
        w[6] = 1.0
        out = resample(pset(xs, w), TrackerConfig())
        assert np.all(out.x == xs[6]) and np.allclose(out.weights, 0.1)

    def test_offspring_counts(self):
        n = 1000
        w = np.zeros(n)
        w[:3] = [0.5, 0.3, 0.2]
        out = resample(pset(np.arange(n)[:, None] * np.ones((1, 2)), w), TrackerConfig(n_particles=n))
        assert len(out) == n and abs(out.weights.sum() - 1) < 1e-9
        counts = np.bincount(out.x[:, 0].astype(int), minlength=3)[:3]
        for c, p in zip(counts, (0.5, 0.3, 0.2)):
            assert abs(c - n * p) <= 3 * np.sqrt(n * p * (1 - p))

    def test_deterministic_given_rng(self):
        w = np.random.default_rng(2).dirichlet(np.full(50, 0.1))
        xs = np.random.default_rng(3).normal(size=(50, 2))
        a = resample(pset(xs, w, seed=11), TrackerConfig())
        b = resample(pset(xs, w, seed=11), TrackerConfig())
        assert np.array_equal(a.x, b.x)


class TestTransfer:
    def _bank(self):
        m = hand_gpdm()
        path = TransitionPath(0, 1, 1, 4, np.array([[5.0, 5.0], [6.0, 6.0], [7.0, 7.0]]), 1.0,
                              exit_point=m.X[1].copy())
        return ModelBank([m, m], ["a", "b"], [path], SEPARATE)

    def test_enters_with_certainty(self):
        bank = self._bank()
        out = maybe_transfer(pset([bank.paths[0].exit_point]), bank, TrackerConfig(transfer_prob=1.0))
        assert out.path_id[0] == 0 and out.path_pos[0] == 0
        assert np.array_equal(out.x[0], bank.paths[0].waypoints[0])

    def test_out_of_radius_unchanged(self):
        bank = self._bank()
        ps = pset([[30.0, 30.0], [-20.0, 4.0]])
        out = maybe_transfer(ps, bank, TrackerConfig(transfer_prob=1.0))
        assert np.array_equal(out.x, ps.x) and np.all(out.path_id == -1)

    def test_wrong_source_model_ignored(self):
        bank = self._bank()
        out = maybe_transfer(pset([bank.paths[0].exit_point], model_ids=[1]), bank, TrackerConfig(transfer_prob=1.0))
        assert out.path_id[0] == -1

    def test_cooldown_blocks(self):
        bank = self._bank()
        ps = pset([bank.paths[0].exit_point])
        ps.cooldown[0] = 1
        assert maybe_transfer(ps, bank, TrackerConfig(transfer_prob=1.0)).path_id[0] == -1

    def test_binomial_count(self):
        bank = self._bank()
        ps = pset(np.tile(bank.paths[0].exit_point, (1000, 1)), seed=5)
        entered = int((maybe_transfer(ps, bank, TrackerConfig(n_particles=1000)).path_id == 0).sum())
        assert 440 <= entered <= 560

    def test_unified_is_noop(self, unified_bank):
        ps = pset(unified_bank.models[0].X[:4])
        assert maybe_transfer(ps, unified_bank, TrackerConfig(transfer_prob=1.0)) is ps

    def test_default_radius(self):
        m = hand_gpdm()
        steps = np.linalg.norm(np.diff(m.X, axis=0), axis=1)
        assert default_transfer_radius(ModelBank([m], ["a"])) == pytest.approx(0.5 * np.median(steps))


class TestTrack:
    def test_self_consistency(self, setup0):
        _, groups, _, _, setup = setup0
        m = setup.bank.models[0]
        y = latent_to_observation(m.base, m.X)[0]
        r = track(ModelBank([m], ["walk"]), y, setup.mappings[:1], setup.pose_model, TrackerConfig(seed=0))
        assert joint_error(r.estimate.frames, groups["walk"][0].frames, default_skeleton()) < SELF_CONSISTENCY_BOUND

    def test_static_target(self):
        pose = np.array([0.1, 0.0, -1.5, 0.3, 0.0, -1.5, 0.3, 1.5])
        obs = ObservationModel.random(10, 8, seed=1)
        P = np.tile(pose, (20, 1))
        F = make_observation(P, obs)
        bank = ModelBank([gpdm_fit([F], d=2, max_iters=200)], ["still"])
        pm = gplvm_fit(P, 2, max_iters=200)
        r = track(bank, np.tile(F[0], (30, 1)), pose_mappings(bank, pm), pm, TrackerConfig(seed=0))
        assert np.max(np.abs(r.estimate.frames - pose)) < 1e-3
        assert np.max(r.estimate.frames.std(0)) < 1e-3

    @pytest.mark.parametrize("seed", [0, 1])
    def test_switch_lag(self, seed):
        cfg = ExperimentConfig()
        groups, feats, obs = training_data(cfg, seed)
        setup = train_setup(groups, feats, cfg, seed)
        gt, na = build_switch_sequence("walk", "kick", 200, 10, 0.01, seed * 10 + 7)
        y = make_observation(gt.frames, obs, seed * 10 + 9)
        r = track(setup.bank, y, setup.mappings, setup.pose_model, TrackerConfig(seed=seed))
        assert np.all(r.model_posterior[na - 10: na, 0] > 0.5)
        majority_kick = np.flatnonzero(r.model_posterior[na:, 1] > 0.5)
        assert majority_kick.size and majority_kick[0] <= 15

    def test_deterministic(self, setup0):
        _, _, feats, _, setup = setup0
        y = feats["kick"][0][:25]
        runs = [track(setup.bank, y, setup.mappings, setup.pose_model, TrackerConfig(n_particles=100, seed=3))
                for _ in range(2)]
        assert np.array_equal(runs[0].estimate.frames, runs[1].estimate.frames)
        assert np.array_equal(runs[0].model_posterior, runs[1].model_posterior)

    def test_degenerate_frame_flagged(self, setup0):
        _, _, feats, _, setup = setup0
        y = feats["walk"][0][:12].copy()
        y[6] = 1e6
        r = track(setup.bank, y, setup.mappings, setup.pose_model, TrackerConfig(n_particles=100))
        assert r.degenerate.tolist() == [t == 6 for t in range(12)]
        rows = r.metadata_rows()
        assert rows[6]["degenerate"] and abs(rows[3]["mass_0"] + rows[3]["mass_1"] - 1) < 1e-9

    def test_wiring_error(self, setup0):
        _, _, feats, _, setup = setup0
        bad = fit_mapping(setup.bank.models[0].X, setup.pose_model.X[:60], ("latent:walk", "pose"), optimize=False)
        with pytest.raises(WiringError):
            track(setup.bank, feats["walk"][0][:5], [bad, bad], setup.pose_model, TrackerConfig())

    def test_particle_view(self):
        ps = ParticleSet.from_particles([Particle(0, np.zeros(2), 0.5), Particle(1, np.ones(2), 0.5, (0, 1))])
        assert ps[1].path_state == (0, 1) and ps[0].path_state is None
        with pytest.raises(InputError):
            ParticleSet.from_particles([])
