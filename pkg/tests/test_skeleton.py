import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from motionprior.errors import InputError, ParseError
from motionprior.skeleton import (
    ActionSpec, FeatureSequence, MotionSequence, ObservationModel, Skeleton, catalogue_spec, chain_skeleton,
    default_skeleton, forward_kinematics, generate_synthetic_action, joint_error, load_features, load_sequence,
    make_observation, per_frame_position_error, save_features, save_sequence,
)

angles = st.floats(-math.pi, math.pi, allow_nan=False)


class TestForwardKinematics:
    def test_zero_angles_lie_on_x_axis(self):
        P = forward_kinematics(chain_skeleton([1, 1]), [0, 0])
        assert np.allclose(P, [[0, 0, 0], [1, 0, 0], [2, 0, 0]], atol=1e-12)

    def test_quarter_turn_at_root(self):
        P = forward_kinematics(chain_skeleton([1, 1]), [math.pi / 2, 0])
        assert np.allclose(P, [[0, 0, 0], [0, 1, 0], [0, 2, 0]], atol=1e-12)

    def test_composed_rotations(self):
        P = forward_kinematics(chain_skeleton([1, 1]), [math.pi / 2, math.pi / 2])
        assert np.allclose(P[-1], [-1, 1, 0], atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InputError):
            forward_kinematics(chain_skeleton([1, 1]), [0.0])

    def test_root_at_origin_and_bone_lengths(self):
        sk = default_skeleton()
        P = forward_kinematics(sk, np.linspace(-1, 1, sk.n_dof))
        assert np.allclose(P[0], 0.0)
        for j in range(1, sk.joint_count):
            assert np.linalg.norm(P[j] - P[sk.parent[j]]) == pytest.approx(sk.bone_length[j], abs=1e-12)

    @given(st.lists(angles, min_size=8, max_size=8), st.integers(0, 8), angles)
    def test_locality(self, pose, j, delta):
        sk = default_skeleton()
        sl = sk.dof_slices()[j]
        if sl.stop == sl.start:
            return
        p2 = np.array(pose)
        p2[sl] += delta
        P1, P2 = forward_kinematics(sk, pose), forward_kinematics(sk, p2)
        for k in set(range(sk.joint_count)) - sk.descendants(j):
            assert np.allclose(P1[k], P2[k], atol=1e-12)
        # the joint itself does not move either: its rotation acts on its children
        assert np.allclose(P1[j], P2[j], atol=1e-12)

    @pytest.mark.parametrize("kw", [
        dict(parent=(0,), bone_length=(0.0,), dof=("z",)),
        dict(parent=(-1, 1), bone_length=(0.0, 1.0), dof=("", "")),
        dict(parent=(-1, 0), bone_length=(0.0, 0.0), dof=("", "")),
        dict(parent=(-1, 0), bone_length=(0.0, 1.0), dof=("zx", "")),
        dict(parent=(-1, 0), bone_length=(0.0, 1.0), dof=("w", "")),
    ])
    def test_invalid_skeletons(self, kw):
        with pytest.raises(InputError):
            Skeleton(**kw)


class TestGenerator:
    def test_zero_amplitude_gives_offsets(self):
        spec = ActionSpec("still", [1.0, 2.0], [0.0, 0.0], [0.3, -0.2], offsets=[0.5, -1.0])
        seq = generate_synthetic_action(spec, 10)
        assert np.array_equal(seq.frames, np.tile([0.5, -1.0], (10, 1)))
        assert seq.action_label == "still"

    def test_deterministic(self):
        spec = catalogue_spec("walk")
        a = generate_synthetic_action(spec, 50, noise_sd=0.1, seed=7)
        b = generate_synthetic_action(spec, 50, noise_sd=0.1, seed=7)
        assert np.array_equal(a.frames, b.frames)
        c = generate_synthetic_action(spec, 50, noise_sd=0.1, seed=8)
        assert not np.array_equal(a.frames, c.frames)

    def test_formula_at_sampled_frames(self):
        spec = ActionSpec("s", [0.7, 1.3], [0.4, 0.9], [0.1, 2.0], fps=24.0)
        seq = generate_synthetic_action(spec, 100)
        for t in (0, 7, 33, 64, 99):
            for k in range(2):
                expected = spec.amplitudes[k] * math.sin(2 * math.pi * spec.frequencies[k] * t / 24.0 + spec.phases[k])
                assert seq.frames[t, k] == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("n,noise", [(1, 0.0), (0, 0.0), (5, -0.1)])
    def test_rejects_bad_arguments(self, n, noise):
        with pytest.raises(InputError):
            generate_synthetic_action(catalogue_spec("walk"), n, noise_sd=noise)

    def test_unknown_action(self):
        with pytest.raises(InputError):
            catalogue_spec("swim")


class TestObservation:
    def test_identity(self):
        pose = np.array([0.1, -0.4, 2.0])
        assert np.array_equal(make_observation(pose, ObservationModel(np.eye(3))), pose)

    def test_zero_matrix(self):
        out = make_observation([1.0, 2.0, 3.0], ObservationModel(np.zeros((4, 3))))
        assert np.array_equal(out, np.zeros(4))

    def test_random_matrix_oracle(self):
        obs = ObservationModel.random(5, 4, seed=2)
        pose = [0.3, -1.1, 0.7, 0.05]
        expected = [sum(obs.matrix[r, c] * pose[c] for c in range(4)) for r in range(5)]
        assert np.allclose(make_observation(pose, obs), expected, atol=1e-14)

    def test_noise_is_seeded(self):
        obs = ObservationModel(np.eye(2), noise_sd=0.5)
        assert np.array_equal(make_observation([0, 0], obs, seed=4), make_observation([0, 0], obs, seed=4))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            make_observation([1.0, 2.0], ObservationModel(np.eye(3)))


class TestJointError:
    def test_identical_is_zero(self):
        seq = generate_synthetic_action(catalogue_spec("walk"), 20)
        assert joint_error(seq, seq, default_skeleton()) == 0.0

    def test_three_four_five(self):
        assert per_frame_position_error([[[0, 0, 0]]], [[[3, 4, 0]]])[0] == pytest.approx(5.0)

    def test_mean_over_frames(self):
        est = np.zeros((2, 1, 3))
        gt = np.array([[[1.0, 0, 0]], [[0, 0, 2.5]]])
        assert per_frame_position_error(est, gt).mean() == pytest.approx((1.0 + 2.5) / 2)

    def test_chain_oracle(self):
        # tip moves from (2,0) to (-2,0); the middle joint from (1,0) to (-1,0)
        sk = chain_skeleton([1, 1])
        assert joint_error([[0.0, 0.0]], [[math.pi, 0.0]], sk) == pytest.approx((0 + 2 + 4) / 3)

    def test_length_mismatch(self):
        sk = default_skeleton()
        with pytest.raises(InputError):
            joint_error(np.zeros((3, 8)), np.zeros((4, 8)), sk)

    @given(st.integers(0, 10_000))
    def test_triangle_and_symmetry(self, seed):
        r = np.random.default_rng(seed)
        sk = default_skeleton()
        a, b, c = (r.normal(0, 1, (4, 8)) for _ in range(3))
        ab, bc, ac = joint_error(a, b, sk), joint_error(b, c, sk), joint_error(a, c, sk)
        assert ac <= ab + bc + 1e-12
        assert ab == pytest.approx(joint_error(b, a, sk), abs=1e-14)
        assert ab >= 0


class TestSequenceIO:
    def test_round_trip(self, tmp_path):
        seq = generate_synthetic_action(catalogue_spec("kick"), 30, noise_sd=0.05, seed=1)
        save_sequence(seq, tmp_path / "s.csv")
        back = load_sequence(tmp_path / "s.csv")
        assert np.max(np.abs(back.frames - seq.frames)) <= 1e-12
        assert (back.fps, back.action_label, back.subject_id) == (seq.fps, seq.action_label, seq.subject_id)

    def test_feature_round_trip(self, tmp_path):
        f = FeatureSequence(np.random.default_rng(0).normal(size=(6, 3)), fps=25.0, action_label="walk")
        save_features(f, tmp_path / "f.csv")
        back = load_features(tmp_path / "f.csv")
        assert np.max(np.abs(back.values - f.values)) <= 1e-12 and back.fps == 25.0

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(ParseError):
            load_sequence(tmp_path / "e.csv")

    def test_wrong_column_count_reports_line(self, tmp_path):
        rows = ["# fps=30.0 action=walk subject=s0 dof=2"] + ["0.1,0.2"] * 5 + ["0.1,0.2,0.3", "0.1,0.2"]
        (tmp_path / "b.csv").write_text("\n".join(rows) + "\n")
        with pytest.raises(ParseError) as ei:
            load_sequence(tmp_path / "b.csv")
        assert ei.value.line == 7
        assert "line 7" in str(ei.value)

    def test_non_numeric_cell(self, tmp_path):
        (tmp_path / "n.csv").write_text("# fps=30 action=a subject=s dof=2\n0.1,0.2\n0.3,abc\n")
        with pytest.raises(ParseError) as ei:
            load_sequence(tmp_path / "n.csv")
        assert ei.value.line == 3

    def test_malformed_header(self, tmp_path):
        (tmp_path / "h.csv").write_text("fps,walk\n0.1,0.2\n0.3,0.4\n")
        with pytest.raises(ParseError) as ei:
            load_sequence(tmp_path / "h.csv")
        assert ei.value.line == 1

    def test_sequence_invariants(self):
        with pytest.raises(InputError):
            MotionSequence(np.zeros((1, 3)))
        with pytest.raises(InputError):
            MotionSequence(np.zeros((3, 3)), fps=0.0)
