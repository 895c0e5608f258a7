"""Articulated skeleton, synthetic motion generation, sequence CSV I/O and joint error."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, ParseError

_AXES = "xyz"


def _axis_rotation(axis: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree in topological order.

    Joint 0 is the root and sits at the origin. Every other joint hangs off its
    parent at ``bone_length`` along the parent's local x axis. ``dof[j]`` lists
    the rotation axes of joint j (any ordered subset of "xyz"); rotations are
    composed in fixed X, Y, Z order and act on the bones of j's children.
    The root's bone length is unused and stored as 0.
    """

    parent: tuple[int, ...]
    bone_length: tuple[float, ...]
    dof: tuple[str, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.parent)
        if n < 1 or len(self.bone_length) != n or len(self.dof) != n:
            raise InputError("parent, bone_length and dof must have equal nonzero length")
        if self.parent[0] != -1:
            raise InputError("joint 0 must be the root (parent -1)")
        for j in range(1, n):
            if not 0 <= self.parent[j] < j:
                raise InputError(f"joint {j}: parent must be an earlier joint, got {self.parent[j]}")
            if not self.bone_length[j] > 0:
                raise InputError(f"joint {j}: bone length must be positive")
        for j, axes in enumerate(self.dof):
            if len(axes) > 3 or any(a not in _AXES for a in axes) or list(axes) != sorted(set(axes)):
                raise InputError(f"joint {j}: dof must be an ordered subset of 'xyz', got {axes!r}")
        if self.names and len(self.names) != n:
            raise InputError("names must match joint count")

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    @property
    def n_dof(self) -> int:
        return sum(len(a) for a in self.dof)

    def dof_slices(self) -> list[slice]:
        """Slice of the pose vector owned by each joint."""
        out, start = [], 0
        for axes in self.dof:
            out.append(slice(start, start + len(axes)))
            start += len(axes)
        return out

    def descendants(self, j: int) -> set[int]:
        out = {j}
        for k in range(j + 1, self.joint_count):
            if self.parent[k] in out:
                out.add(k)
        return out


def chain_skeleton(lengths: Sequence[float], axes: str = "z") -> Skeleton:
    """Serial chain: root plus one joint per link; every joint but the tip rotates about ``axes``."""
    n = len(lengths) + 1
    return Skeleton(
        parent=tuple(range(-1, n - 1)),
        bone_length=(0.0, *map(float, lengths)),
        dof=tuple([axes] * (n - 1) + [""]),
    )


def default_skeleton() -> Skeleton:
    """Small lower-body figure with a spine, 8 DOF."""
    return Skeleton(
        parent=(-1, 0, 1, 2, 0, 4, 5, 0, 7),
        bone_length=(0.0, 0.45, 0.45, 0.12, 0.45, 0.45, 0.12, 0.5, 0.25),
        dof=("z", "yz", "z", "", "yz", "z", "", "y", ""),
        names=("pelvis", "l_hip", "l_knee", "l_foot", "r_hip", "r_knee", "r_foot", "spine", "head"),
    )


def forward_kinematics(skeleton: Skeleton, pose) -> np.ndarray:
    """Joint positions in meters, shape (joint_count, 3)."""
    angles = np.asarray(pose, dtype=float).ravel()
    if angles.shape[0] != skeleton.n_dof:
        raise InputError(f"pose has {angles.shape[0]} angles, skeleton has {skeleton.n_dof} DOF")
    n = skeleton.joint_count
    pos = np.zeros((n, 3))
    rot = [np.eye(3)] * n
    for j, (axes, sl) in enumerate(zip(skeleton.dof, skeleton.dof_slices())):
        p = skeleton.parent[j]
        base = np.eye(3) if p < 0 else rot[p]
        if p >= 0:
            pos[j] = pos[p] + base[:, 0] * skeleton.bone_length[j]
        local = np.eye(3)
        for axis, a in zip(axes, angles[sl]):
            local = local @ _axis_rotation(axis, a)
        rot[j] = base @ local
    return pos


def sequence_positions(skeleton: Skeleton, frames) -> np.ndarray:
    """FK over every frame, shape (T, joint_count, 3)."""
    return np.stack([forward_kinematics(skeleton, f) for f in np.atleast_2d(frames)])


@dataclass
class MotionSequence:
    """Ordered, action-labeled frames; ``frames`` has shape (T, DOF)."""

    frames: np.ndarray
    fps: float = 30.0
    action_label: str = "unknown"
    subject_id: str = "s0"

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames, dtype=float))
        if self.frames.shape[0] < 2:
            raise InputError("a motion sequence needs at least 2 frames")
        if not np.all(np.isfinite(self.frames)):
            raise InputError("sequence contains non-finite angles")
        if not self.fps > 0:
            raise InputError("fps must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dof(self) -> int:
        return self.frames.shape[1]


@dataclass
class ActionSpec:
    """Per-DOF sinusoids: angle(t) = offset + amplitude * sin(2*pi*frequency*t/fps + phase)."""

    label: str
    frequencies: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    offsets: np.ndarray | None = None
    fps: float = 30.0

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float).ravel()
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        self.phases = np.asarray(self.phases, dtype=float).ravel()
        n = self.frequencies.shape[0]
        if self.offsets is None:
            self.offsets = np.zeros(n)
        self.offsets = np.asarray(self.offsets, dtype=float).ravel()
        if not (self.amplitudes.shape[0] == self.phases.shape[0] == self.offsets.shape[0] == n):
            raise InputError("action spec arrays must share one length (the DOF count)")

    @property
    def dof(self) -> int:
        return self.frequencies.shape[0]


def generate_synthetic_action(
    spec: ActionSpec,
    n_frames: int,
    noise_sd: float = 0.0,
    seed: int = 0,
    subject_id: str = "synthetic",
    start_frame: int = 0,
) -> MotionSequence:
    """Sample ``n_frames`` frames of the action's sinusoids plus iid Gaussian noise."""
    if n_frames < 2:
        raise InputError("n_frames must be at least 2")
    if noise_sd < 0:
        raise InputError("noise_sd must be nonnegative")
    t = np.arange(start_frame, start_frame + n_frames, dtype=float)[:, None]
    angles = spec.offsets + spec.amplitudes * np.sin(2.0 * np.pi * spec.frequencies * t / spec.fps + spec.phases)
    if noise_sd > 0:
        angles = angles + np.random.default_rng(seed).normal(0.0, noise_sd, size=angles.shape)
    return MotionSequence(angles, fps=spec.fps, action_label=spec.label, subject_id=subject_id)


# Gait-like catalogue for the default skeleton. Order of DOF:
# pelvis z, l_hip y, l_hip z, l_knee z, r_hip y, r_hip z, r_knee z, spine y.
ACTION_CATALOGUE: dict[str, dict[str, list[float]]] = {
    "walk": dict(
        frequencies=[1.0] * 8,
        amplitudes=[0.05, 0.05, 0.45, 0.35, 0.05, 0.45, 0.35, 0.05],
        phases=[0.0, 0.0, 0.0, -1.2, np.pi, np.pi, np.pi - 1.2, 0.0],
        offsets=[0.0, 0.0, -1.57, 0.35, 0.0, -1.57, 0.35, 1.57],
    ),
    "jog": dict(
        frequencies=[1.5] * 8,
        amplitudes=[0.08, 0.08, 0.7, 0.6, 0.08, 0.7, 0.6, 0.1],
        phases=[0.0, 0.0, 0.0, -1.2, np.pi, np.pi, np.pi - 1.2, 0.0],
        offsets=[0.0, 0.0, -1.35, 0.8, 0.0, -1.35, 0.8, 1.35],
    ),
    "dance": dict(
        frequencies=[0.7] * 8,
        amplitudes=[0.4, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.4],
        phases=[0.0, 0.5, 1.0, 0.0, np.pi + 0.5, np.pi + 1.0, np.pi, np.pi / 2],
        offsets=[0.0, 0.2, -1.57, 0.3, -0.2, -1.57, 0.3, 1.57],
    ),
    "kick": dict(
        frequencies=[0.8] * 8,
        amplitudes=[0.05, 0.05, 0.9, 0.7, 0.05, 0.1, 0.1, 0.15],
        phases=[0.0, 0.0, 0.0, -1.5, 0.0, 0.0, 0.0, np.pi],
        offsets=[0.0, 0.0, -1.1, 0.7, 0.0, -1.57, 0.15, 1.57],
    ),
}


def catalogue_spec(label: str, fps: float = 30.0) -> ActionSpec:
    if label not in ACTION_CATALOGUE:
        raise InputError(f"unknown action {label!r}; known: {', '.join(sorted(ACTION_CATALOGUE))}")
    return ActionSpec(label=label, fps=fps, **ACTION_CATALOGUE[label])


@dataclass
class ObservationModel:
    """Linear feature map plus isotropic Gaussian noise; ``matrix`` is F x DOF."""

    matrix: np.ndarray
    noise_sd: float = 0.0

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.noise_sd < 0:
            raise InputError("noise_sd must be nonnegative")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def random(cls, n_features: int, dof: int, noise_sd: float = 0.0, seed: int = 0) -> "ObservationModel":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / math.sqrt(dof), size=(n_features, dof)), noise_sd)


def make_observation(pose, obs: ObservationModel, seed: int = 0) -> np.ndarray:
    """Feature vector M @ angles + noise."""
    angles = np.asarray(pose, dtype=float)
    if angles.shape[-1] != obs.matrix.shape[1]:
        raise InputError(f"observation matrix expects {obs.matrix.shape[1]} DOF, pose has {angles.shape[-1]}")
    values = angles @ obs.matrix.T
    if obs.noise_sd > 0:
        values = values + np.random.default_rng(seed).normal(0.0, obs.noise_sd, size=values.shape)
    return values


def observe_sequence(seq: MotionSequence, obs: ObservationModel, seed: int = 0) -> np.ndarray:
    """Features for every frame, shape (T, F); one noise stream for the whole sequence."""
    return make_observation(seq.frames, obs, seed)


def _frames_of(seq) -> np.ndarray:
    return seq.frames if isinstance(seq, MotionSequence) else np.atleast_2d(np.asarray(seq, dtype=float))


def per_frame_joint_error(est, gt, skeleton: Skeleton) -> np.ndarray:
    """Mean joint position error of each frame (meters)."""
    a, b = _frames_of(est), _frames_of(gt)
    if a.shape != b.shape:
        raise InputError(f"sequence shapes differ: {a.shape} vs {b.shape}")
    return per_frame_position_error(sequence_positions(skeleton, a), sequence_positions(skeleton, b))


def per_frame_position_error(est_positions, gt_positions) -> np.ndarray:
    """Mean Euclidean joint distance per frame for (T, J, 3) position arrays."""
    a = np.asarray(est_positions, dtype=float)
    b = np.asarray(gt_positions, dtype=float)
    if a.shape != b.shape or a.ndim != 3:
        raise InputError(f"position arrays must share a (T, J, 3) shape: {a.shape} vs {b.shape}")
    return np.linalg.norm(a - b, axis=2).mean(axis=1)


def joint_error(est, gt, skeleton: Skeleton) -> float:
    """Mean over frames and joints of the Euclidean joint position error (meters)."""
    return float(per_frame_joint_error(est, gt, skeleton).mean())


# --- CSV I/O -----------------------------------------------------------------

_HEADER_RE = re.compile(r"^#\s*(.*)$")


def _format_row(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def _write_table(path, values: np.ndarray, header: dict[str, object]) -> None:
    head = " ".join(f"{k}={v}" for k, v in header.items())
    lines = [f"# {head}"] + [_format_row(r) for r in np.atleast_2d(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path, width_key: str) -> tuple[np.ndarray, dict[str, str]]:
    path = str(path)
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not text.strip():
        raise ParseError("empty file", path=path)
    m = _HEADER_RE.match(lines[0].strip())
    if not m:
        raise ParseError("missing '# key=value' header", line=1, path=path)
    meta: dict[str, str] = {}
    for token in m.group(1).split():
        if "=" not in token:
            raise ParseError(f"malformed header token {token!r}", line=1, path=path)
        k, v = token.split("=", 1)
        meta[k] = v
    for key in ("fps", width_key):
        if key not in meta:
            raise ParseError(f"header lacks {key}=", line=1, path=path)
    try:
        width = int(meta[width_key])
        float(meta["fps"])
    except ValueError:
        raise ParseError(f"non-numeric fps or {width_key} in header", line=1, path=path) from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", line=lineno, path=path)
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ParseError("non-numeric cell", line=lineno, path=path) from None
    if not rows:
        raise ParseError("no data rows", path=path)
    return np.array(rows), meta


def save_sequence(seq: MotionSequence, path) -> None:
    _write_table(path, seq.frames, {"fps": repr(float(seq.fps)), "action": seq.action_label,
                                    "subject": seq.subject_id, "dof": seq.dof})


def load_sequence(path) -> MotionSequence:
    values, meta = _read_table(path, "dof")
    try:
        return MotionSequence(values, fps=float(meta["fps"]), action_label=meta.get("action", "unknown"),
                              subject_id=meta.get("subject", "s0"))
    except InputError as exc:
        raise ParseError(str(exc), path=str(path)) from None


@dataclass
class FeatureSequence:
    """Per-frame feature vectors, shape (T, F)."""

    values: np.ndarray
    fps: float = 30.0
    action_label: str = "unknown"
    subject_id: str = "s0"
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def save_features(feats: FeatureSequence, path) -> None:
    _write_table(path, feats.values, {"fps": repr(float(feats.fps)), "action": feats.action_label,
                                      "subject": feats.subject_id, "dim": feats.dim})


def load_features(path) -> FeatureSequence:
    values, meta = _read_table(path, "dim")
    return FeatureSequence(values, fps=float(meta["fps"]), action_label=meta.get("action", "unknown"),
                           subject_id=meta.get("subject", "s0"))
