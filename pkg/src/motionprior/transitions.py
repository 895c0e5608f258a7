"""Transition paths between action models, and banks of action models.

Two bank layouts are supported. ``separate``: one GPDM per action and, for
every ordered pair of actions, paths that live in the destination model's
latent space. ``unified``: one GPDM over all actions whose latents are pulled
together at matched transition frames (topological penalty); its paths live in
the shared space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, OptimizationDiverged
from .latent.gpdm import GpdmModel, gpdm_fit
from .latent.gplvm import latent_to_observation
from .latent.kernels import rbf
from .latent.optimize import minimize_lbfgs

logger = logging.getLogger(__name__)

SEPARATE = "separate"
UNIFIED = "unified"


@dataclass
class TransitionPath:
    """Latent path from ``src_model`` frame ``src_exit_index`` to ``dst_model`` frame ``dst_entry_index``.

    ``exit_point`` is the exit frame's latent in the source model's space (used
    to gate particle transfer). ``waypoints`` live in the destination model's
    space; the first is the exit frame's image there and the last is the entry
    frame's latent.
    """

    src_model: int
    dst_model: int
    src_exit_index: int
    dst_entry_index: int
    waypoints: np.ndarray
    cost: float
    exit_point: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] < 2:
            raise InputError("a transition path needs at least 2 waypoints")
        if self.exit_point is None:
            self.exit_point = self.waypoints[0].copy()
        self.exit_point = np.asarray(self.exit_point, dtype=float)

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    def to_dict(self) -> dict:
        return {"src_model": self.src_model, "dst_model": self.dst_model, "src_exit_index": self.src_exit_index,
                "dst_entry_index": self.dst_entry_index, "waypoints": self.waypoints.tolist(),
                "cost": self.cost, "exit_point": self.exit_point.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionPath":
        return cls(int(d["src_model"]), int(d["dst_model"]), int(d["src_exit_index"]), int(d["dst_entry_index"]),
                   np.array(d["waypoints"], dtype=float), float(d["cost"]), np.array(d["exit_point"], dtype=float))


@dataclass
class ModelBank:
    models: list[GpdmModel]
    labels: list[str]
    paths: list[TransitionPath] = field(default_factory=list)
    mode: str = SEPARATE

    def __post_init__(self):
        if not self.models:
            raise InputError("a model bank needs at least one model")
        if self.mode not in (SEPARATE, UNIFIED):
            raise InputError(f"unknown bank mode {self.mode!r}")
        if self.mode == UNIFIED and len(self.models) != 1:
            raise InputError("a unified bank holds exactly one model")
        if self.mode == SEPARATE and len(self.labels) != len(self.models):
            raise InputError("a separate bank needs one label per model")

    def without_paths(self) -> "ModelBank":
        return ModelBank(self.models, self.labels, [], self.mode)

    def is_strongly_connected(self) -> bool:
        n = len(self.models)
        linked = {(p.src_model, p.dst_model) for p in self.paths}
        return all((a, b) in linked for a in range(n) for b in range(n) if a != b)

    def to_dict(self) -> dict:
        return {"type": "bank", "mode": self.mode, "labels": list(self.labels),
                "models": [m.to_dict() for m in self.models], "paths": [p.to_dict() for p in self.paths]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBank":
        return cls([GpdmModel.from_dict(m) for m in d["models"]], list(d["labels"]),
                   [TransitionPath.from_dict(p) for p in d["paths"]], d["mode"])


def find_transition_pairs(seq_a, seq_b, k: int = 1) -> list[tuple[int, int, float]]:
    """The ``k`` closest (index in a, index in b, distance) pairs in pose space.

    Sorted by distance, ties broken by lower a-index then lower b-index.
    """
    a = np.atleast_2d(getattr(seq_a, "frames", seq_a)).astype(float)
    b = np.atleast_2d(getattr(seq_b, "frames", seq_b)).astype(float)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("both sequences must be nonempty")
    if k < 1 or k > a.shape[0] * b.shape[0]:
        raise InputError(f"k must lie in [1, {a.shape[0] * b.shape[0]}], got {k}")
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    ii, jj = np.meshgrid(np.arange(a.shape[0]), np.arange(b.shape[0]), indexing="ij")
    order = np.lexsort((jj.ravel(), ii.ravel(), dist.ravel()))[:k]
    return [(int(ii.flat[o]), int(jj.flat[o]), float(dist.flat[o])) for o in order]


def path_cost(waypoints: np.ndarray, smooth_weight: float) -> float:
    w = np.asarray(waypoints, dtype=float)
    d1 = np.diff(w, axis=0)
    d2 = w[2:] - 2 * w[1:-1] + w[:-2]
    return float((d1 * d1).sum() + smooth_weight * (d2 * d2).sum())


def _path_cost_grad(w: np.ndarray, lam: float) -> np.ndarray:
    g = np.zeros_like(w)
    d1 = np.diff(w, axis=0)
    g[1:] += 2 * d1
    g[:-1] -= 2 * d1
    if len(w) > 2:
        d2 = w[2:] - 2 * w[1:-1] + w[:-2]
        g[2:] += 2 * lam * d2
        g[1:-1] -= 4 * lam * d2
        g[:-2] += 2 * lam * d2
    return g


def synthesize_path(start, end, model: GpdmModel | None = None, n_waypoints: int = 5, smooth_weight: float = 1.0,
                    max_iters: int = 5000, tol: float = 1e-12) -> np.ndarray:
    """Waypoints from ``start`` to ``end`` (both fixed) that are short and smooth.

    Minimizes sum |w_{i+1} - w_i|^2 + smooth_weight * sum |w_{i+1} - 2 w_i + w_{i-1}|^2
    by gradient descent from the straight-line interpolation. Returns the
    (n_waypoints, d) waypoint array; use :func:`path_cost` for its cost.
    """
    start = np.asarray(start, dtype=float).ravel()
    end = np.asarray(end, dtype=float).ravel()
    if n_waypoints < 2:
        raise InputError("n_waypoints must be at least 2")
    if smooth_weight < 0:
        raise InputError("smooth_weight must be nonnegative")
    if start.shape != end.shape:
        raise InputError("start and end must share one dimension")
    if model is not None and start.shape[0] != model.d:
        raise InputError(f"path points are {start.shape[0]}-d but the model latent space is {model.d}-d")
    t = np.linspace(0.0, 1.0, n_waypoints)[:, None]
    w = (1 - t) * start + t * end
    # step 1/L with L an upper bound on the Hessian's largest eigenvalue
    step = 1.0 / (8.0 + 32.0 * smooth_weight)
    for it in range(max_iters):
        g = _path_cost_grad(w, smooth_weight)
        g[0] = 0.0
        g[-1] = 0.0
        if not np.all(np.isfinite(g)):
            raise OptimizationDiverged("non-finite path gradient", iteration=it)
        if np.max(np.abs(g)) < tol:
            break
        w = w - step * g
    cost = path_cost(w, smooth_weight)
    if not np.isfinite(cost):
        raise OptimizationDiverged("non-finite path cost")
    return w


def back_project(model: GpdmModel, y: np.ndarray, x0: np.ndarray, max_iters: int = 200) -> np.ndarray:
    """Latent point of ``model`` whose reconstruction best matches observation ``y``.

    Minimizes |mean(x) - y|^2 + |x|^2 * 1e-6 starting from ``x0``.
    """
    post = model.base.posterior
    target = np.asarray(y, dtype=float) - model.base.data_mean
    ell2 = model.base.kernel.length_scale ** 2

    def fun(x):
        k = rbf(x[None, :], post.X, model.base.kernel)[0]
        r = k @ post.alpha - target
        # d mean / dx = sum_i alpha_i k_i (x_i - x) / l^2
        J = ((post.alpha * k[:, None]).T @ (post.X - x)) / ell2
        return float(r @ r + 1e-6 * x @ x), 2 * J.T @ r + 2e-6 * x

    return minimize_lbfgs(fun, np.asarray(x0, dtype=float), max_iters=max_iters, gtol=1e-9).x


def _stack(seqs) -> np.ndarray:
    return np.vstack([np.atleast_2d(getattr(s, "frames", getattr(s, "values", s))) for s in seqs])


def _grouped_inputs(groups: Mapping[str, Sequence], features: Mapping[str, Sequence] | None):
    labels = list(groups)
    if len(labels) < 2:
        raise InputError("a bank needs at least 2 actions")
    for lab in labels:
        for s in groups[lab]:
            if np.atleast_2d(getattr(s, "frames", s)).shape[0] < 3:
                raise InputError(f"action {lab!r} has a sequence with fewer than 3 frames")
    data = features if features is not None else groups
    if set(data) != set(labels):
        raise InputError("features must cover exactly the same actions as the pose groups")
    return labels, data


def build_separate_bank(groups: Mapping[str, Sequence], d: int = 3, k_paths: int = 3,
                        features: Mapping[str, Sequence] | None = None, n_waypoints: int = 5,
                        smooth_weight: float = 1.0, max_iters: int = 500, seed: int = 0) -> ModelBank:
    """One GPDM per action plus ``k_paths`` paths for every ordered action pair.

    ``groups`` maps action label -> pose sequences (used to choose transition
    frames). Models are trained on ``features`` (same layout) when given,
    otherwise on the poses themselves.
    """
    labels, data = _grouped_inputs(groups, features)
    models = [gpdm_fit(list(data[lab]), d=d, max_iters=max_iters, seed=seed, labels=[lab] * len(data[lab]))
              for lab in labels]
    poses = {lab: _stack(groups[lab]) for lab in labels}
    paths = []
    for a, la in enumerate(labels):
        for b, lb in enumerate(labels):
            if a == b:
                continue
            src, dst = models[a], models[b]
            for i, j, _ in find_transition_pairs(poses[la], poses[lb], k_paths):
                y_exit = src.base.data_mean + src.base.Y_centered[i]
                start = back_project(dst, y_exit, dst.X[j])
                w = synthesize_path(start, dst.X[j], dst, n_waypoints, smooth_weight)
                w[-1] = dst.X[j]
                paths.append(TransitionPath(a, b, i, j, w, path_cost(w, smooth_weight), src.X[i].copy()))
    logger.info("separate bank: %d models, %d paths", len(models), len(paths))
    return ModelBank(models, labels, paths, SEPARATE)


def unified_topo_pairs(groups: Mapping[str, Sequence], k_paths: int) -> list[tuple[int, int]]:
    """Global row pairs (a-row, b-row) matched between every unordered action pair."""
    labels = list(groups)
    offsets, start = {}, 0
    for lab in labels:
        offsets[lab] = start
        start += _stack(groups[lab]).shape[0]
    pairs = []
    for a, la in enumerate(labels):
        for lb in labels[a + 1:]:
            for i, j, _ in find_transition_pairs(_stack(groups[la]), _stack(groups[lb]), k_paths):
                pairs.append((offsets[la] + i, offsets[lb] + j))
    return pairs


def build_unified_bank(groups: Mapping[str, Sequence], d: int = 3, k_paths: int = 3, topo_weight: float = 1.0,
                       features: Mapping[str, Sequence] | None = None, n_waypoints: int = 5,
                       smooth_weight: float = 1.0, max_iters: int = 500, seed: int = 0) -> ModelBank:
    """One GPDM over every action with a topological penalty at matched frames, plus paths in both directions."""
    labels, data = _grouped_inputs(groups, features)
    seqs, seq_labels = [], []
    for lab in labels:
        seqs.extend(data[lab])
        seq_labels.extend([lab] * len(data[lab]))
    topo = unified_topo_pairs(groups, k_paths)
    model = gpdm_fit(seqs, d=d, max_iters=max_iters, seed=seed, labels=seq_labels,
                     topo_pairs=topo, topo_weight=topo_weight)
    paths = []
    for ra, rb in topo:
        for i, j in ((ra, rb), (rb, ra)):
            w = synthesize_path(model.X[i], model.X[j], model, n_waypoints, smooth_weight)
            paths.append(TransitionPath(0, 0, i, j, w, path_cost(w, smooth_weight), model.X[i].copy()))
    return ModelBank([model], labels, paths, UNIFIED)


def mean_transition_distance(bank: ModelBank) -> float:
    """Mean latent distance between matched frames (unified banks)."""
    if bank.mode != UNIFIED:
        raise InputError("only defined for unified banks")
    X = bank.models[0].X
    return float(np.mean([np.linalg.norm(X[p.src_exit_index] - X[p.dst_entry_index]) for p in bank.paths]))


def reconstruct_path(bank: ModelBank, path: TransitionPath) -> np.ndarray:
    """Observation-space reconstruction of a path's waypoints in the destination model."""
    return latent_to_observation(bank.models[path.dst_model].base, path.waypoints)[0]
