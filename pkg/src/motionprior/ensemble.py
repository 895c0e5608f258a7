"""Ensembles of per-action 2D pose estimators.

Covers action-weighted pose estimation with iterative re-classification, a
simplex-constrained per-joint merger of expert outputs, and the gate that
admits weakly labeled samples into retraining.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InputError, NumericalError, OptimizationDiverged
from .latent.optimize import minimize_lbfgs
from .mappings import FEATURE, GpMapping, apply_mapping, fit_mapping
from .skeleton import chain_skeleton, forward_kinematics

POSE2D = "pose2d"


# ---------------------------------------------------------------- classifier

@dataclass(frozen=True)
class ActionClassifier:
    """Multinomial logistic model; ``weights`` is (A, P + 1) with the bias last."""

    weights: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if w.shape[0] != len(self.labels) or w.shape[1] < 2:
            raise InputError("weights must be (n_actions, n_inputs + 1)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1] - 1

    def to_dict(self) -> dict:
        return {"type": "action_classifier", "labels": list(self.labels), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionClassifier":
        return cls(np.array(d["weights"], dtype=float), tuple(d["labels"]))


def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def classify_action(c: ActionClassifier, f) -> np.ndarray:
    """Action probabilities for one input vector, or (N, A) for a batch."""
    x = np.asarray(f, dtype=float)
    if x.shape[-1] != c.n_inputs or not np.all(np.isfinite(x)):
        raise InputError(f"classifier expects finite {c.n_inputs}-vectors, got shape {x.shape}")
    return _softmax(x @ c.weights[:, :-1].T + c.weights[:, -1])


def fit_classifier(X, y, labels: Sequence[str], l2: float = 1e-3, max_iters: int = 500) -> ActionClassifier:
    """L2-regularized maximum likelihood fit; ``y`` holds integer class indices."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    A = len(labels)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise InputError("need one label per nonempty input row")
    if y.min() < 0 or y.max() >= A:
        raise InputError("class index out of range")
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    onehot = np.eye(A)[y]
    n = X.shape[0]

    def obj(w):
        W = w.reshape(A, -1)
        S = Xb @ W.T
        S = S - S.max(1, keepdims=True)
        logz = np.log(np.exp(S).sum(1))
        nll = float((logz - (S * onehot).sum(1)).sum()) / n
        P = np.exp(S - logz[:, None])
        g = (P - onehot).T @ Xb / n
        return nll + 0.5 * l2 * float(w @ w), (g + l2 * W).ravel()

    res = minimize_lbfgs(obj, np.zeros(A * Xb.shape[1]), max_iters=max_iters)
    return ActionClassifier(res.x.reshape(A, -1), tuple(labels))


# ------------------------------------------------------------- pose features

@dataclass(frozen=True)
class PoseFeatureSpec:
    """Limbs as (start, end) joint pairs; angles are taken between limb pairs
    where the second limb starts at the first limb's end."""

    limbs: tuple[tuple[int, int], ...]

    @property
    def angle_pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple((i, k) for i, a in enumerate(self.limbs) for k, b in enumerate(self.limbs) if b[0] == a[1])

    @classmethod
    def chain(cls, n_joints: int) -> "PoseFeatureSpec":
        return cls(tuple((j, j + 1) for j in range(n_joints - 1)))

    def dim(self, n_joints: int) -> int:
        return 2 * n_joints + len(self.angle_pairs)


def extract_pose_features(pose, spec: PoseFeatureSpec | None = None) -> np.ndarray:
    """Joint offsets from the centroid (flattened) followed by signed angles
    in (-pi, pi] between adjacent limbs."""
    p = np.asarray(pose, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InputError(f"pose must be (J, 2), got {p.shape}")
    spec = spec or PoseFeatureSpec.chain(p.shape[0])
    offsets = (p - p.mean(0)).ravel()
    vec = np.array([p[b] - p[a] for a, b in spec.limbs]).reshape(-1, 2)
    angles = [np.arctan2(vec[i, 0] * vec[k, 1] - vec[i, 1] * vec[k, 0], vec[i] @ vec[k])
              for i, k in spec.angle_pairs]
    return np.concatenate([offsets, np.asarray(angles, dtype=float)])


# ------------------------------------------------------------------- bank

@dataclass(frozen=True)
class ActionPoseBank2D:
    """Per-action feature->pose estimators plus the classifier that weights them.

    Feature vectors are [global ‖ appearance]; the classifier sees
    [global ‖ pose features]. ``n_supervised[a]`` counts the leading rows of
    estimator a's training set that carry ground-truth poses.
    """

    estimators: tuple[GpMapping, ...]
    classifier: ActionClassifier
    n_global: int
    pose_spec: PoseFeatureSpec
    centroids: np.ndarray
    radii: np.ndarray
    n_supervised: tuple[int, ...] = ()

    def __post_init__(self):
        A = len(self.estimators)
        if A != len(self.classifier.labels):
            raise InputError("one estimator per action")
        c = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float).ravel())
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if c.shape != (A, self.pose_dim) or self.radii.shape != (A,):
            raise InputError("need one centroid of pose-feature dimension and one radius per action")
        if self.classifier.n_inputs != self.n_global + self.pose_dim:
            raise InputError("classifier input must be global features plus pose features")
        if not self.n_supervised:
            object.__setattr__(self, "n_supervised", tuple(e.inputs.shape[0] for e in self.estimators))

    @property
    def labels(self) -> tuple[str, ...]:
        return self.classifier.labels

    @property
    def n_joints(self) -> int:
        return self.estimators[0].q // 2

    @property
    def pose_dim(self) -> int:
        return self.pose_spec.dim(self.n_joints)

    @property
    def feature_dim(self) -> int:
        return self.estimators[0].p

    def action_index(self, label: str) -> int:
        if label not in self.labels:
            raise InputError(f"unknown action {label!r}")
        return self.labels.index(label)

    def to_dict(self) -> dict:
        return {"type": "action_bank", "estimators": [e.to_dict() for e in self.estimators],
                "classifier": self.classifier.to_dict(), "n_global": self.n_global,
                "limbs": [list(l) for l in self.pose_spec.limbs], "centroids": self.centroids.tolist(),
                "radii": self.radii.tolist(), "n_supervised": list(self.n_supervised)}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionPoseBank2D":
        return cls(tuple(GpMapping.from_dict(e) for e in d["estimators"]),
                   ActionClassifier.from_dict(d["classifier"]), int(d["n_global"]),
                   PoseFeatureSpec(tuple(tuple(l) for l in d["limbs"])),
                   np.array(d["centroids"], dtype=float), np.array(d["radii"], dtype=float),
                   tuple(d["n_supervised"]))


def _check_features(bank: ActionPoseBank2D, f) -> np.ndarray:
    f = np.asarray(f, dtype=float).ravel()
    if f.shape[0] != bank.feature_dim:
        raise InputError(f"bank expects {bank.feature_dim} features, got {f.shape[0]}")
    return f


def estimator_outputs(bank: ActionPoseBank2D, f) -> np.ndarray:
    """(A, J, 2) pose estimates, one per action."""
    f = _check_features(bank, f)
    return np.array([apply_mapping(e, f)[0].reshape(-1, 2) for e in bank.estimators])


def weighted_pose(bank: ActionPoseBank2D, f, posterior=None, pose_features=None,
                  outputs: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-weighted sum of the per-action estimates.

    Without an explicit ``posterior`` the classifier is run on
    [global ‖ pose_features] with a zero pose slot by default.
    """
    f = _check_features(bank, f)
    if posterior is None:
        pf = np.zeros(bank.pose_dim) if pose_features is None else np.asarray(pose_features, dtype=float)
        posterior = classify_action(bank.classifier, np.concatenate([f[: bank.n_global], pf]))
    posterior = np.asarray(posterior, dtype=float)
    if posterior.shape != (len(bank.estimators),):
        raise InputError("posterior must have one entry per action")
    if outputs is None:
        outputs = estimator_outputs(bank, f)
    return np.tensordot(posterior, outputs, axes=1), posterior


def iterative_refine(bank: ActionPoseBank2D, f, max_iters: int = 5) -> tuple[np.ndarray, np.ndarray, int]:
    """Alternate classification and pose estimation until the top action repeats.

    Returns (pose, final posterior, iterations used).
    """
    if max_iters < 1:
        raise InputError("max_iters must be at least 1")
    f = _check_features(bank, f)
    outputs = estimator_outputs(bank, f)
    pf = np.zeros(bank.pose_dim)
    prev = -1
    it = 0
    for it in range(1, max_iters + 1):
        pose, post = weighted_pose(bank, f, pose_features=pf, outputs=outputs)
        top = int(np.argmax(post))
        if top == prev:
            break
        prev = top
        pf = extract_pose_features(pose, bank.pose_spec)
    return pose, post, it


def _cluster_stats(feats: np.ndarray) -> tuple[np.ndarray, float]:
    c = feats.mean(0)
    dist = np.linalg.norm(feats - c, axis=1)
    return c, float(dist.mean() + 2.0 * dist.std())


def fit_action_bank(features, poses, labels, action_labels: Sequence[str], n_global: int,
                    pose_spec: PoseFeatureSpec | None = None, l2: float = 1e-3,
                    max_iters: int = 500) -> ActionPoseBank2D:
    """Train estimators, classifier and pose-feature clusters from labeled samples.

    The classifier is trained on every sample twice: once with the pose slot
    zero-filled and once with the features of the true pose.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    P = np.asarray(poses, dtype=float)
    y = np.asarray(labels, dtype=int)
    if not (F.shape[0] == P.shape[0] == y.shape[0]):
        raise InputError("features, poses and labels need the same number of rows")
    if not 0 < n_global <= F.shape[1]:
        raise InputError("n_global must be within the feature dimension")
    J = P.shape[1]
    spec = pose_spec or PoseFeatureSpec.chain(J)
    pf = np.array([extract_pose_features(p, spec) for p in P])
    ests, cents, radii = [], [], []
    for a in range(len(action_labels)):
        rows = y == a
        if rows.sum() < 2:
            raise InputError(f"action {action_labels[a]!r} needs at least 2 samples")
        ests.append(fit_mapping(F[rows], P[rows].reshape(rows.sum(), -1), (FEATURE, POSE2D), max_iters=max_iters))
        c, r = _cluster_stats(pf[rows])
        cents.append(c)
        radii.append(r)
    G = F[:, :n_global]
    Xc = np.vstack([np.hstack([G, np.zeros_like(pf)]), np.hstack([G, pf])])
    clf = fit_classifier(Xc, np.concatenate([y, y]), action_labels, l2=l2, max_iters=max_iters)
    return ActionPoseBank2D(tuple(ests), clf, n_global, spec, np.array(cents), np.array(radii))


def fit_pooled_estimator(features, poses, max_iters: int = 500) -> GpMapping:
    """Single estimator trained on all actions together (the ensemble's baseline)."""
    P = np.asarray(poses, dtype=float)
    return fit_mapping(features, P.reshape(P.shape[0], -1), (FEATURE, POSE2D), max_iters=max_iters)


def pose_rmse(est, gt) -> float:
    """Root mean squared per-joint Euclidean error over all samples and joints."""
    d = np.asarray(est, dtype=float) - np.asarray(gt, dtype=float)
    return float(np.sqrt((d * d).sum(-1).mean()))


# ------------------------------------------------------------ weak supervision

@dataclass(frozen=True)
class WeakDecision:
    accepted: bool
    action: int
    distance: float


@dataclass
class RetrainCounts:
    accepted: dict[str, int] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)
    guarded: list[str] = field(default_factory=list)


def weak_accept(bank: ActionPoseBank2D, pose, label: str) -> WeakDecision:
    """Accept ``pose`` if its pose features lie within the labeled action's radius."""
    a = bank.action_index(label)
    dist = float(np.linalg.norm(extract_pose_features(pose, bank.pose_spec) - bank.centroids[a]))
    return WeakDecision(dist <= bank.radii[a], a, dist)


def _supervised_rmse(m: GpMapping, n: int) -> float:
    pred = apply_mapping(m, m.inputs[:n])[0]
    return pose_rmse(pred.reshape(n, -1, 2), m.targets[:n].reshape(n, -1, 2))


def weak_retrain(bank: ActionPoseBank2D, features, labels: Sequence[str], gate: bool = True,
                 tolerance: float = 0.05) -> tuple[ActionPoseBank2D, RetrainCounts]:
    """Self-label weak samples, gate them, and refit the affected estimators.

    The gate tests the classifier-weighted pose against the sample's action
    label. Accepted samples are added with the labeled action's own estimate
    as target, since the label fixes the action. Refits keep the supervised
    kernel hyperparameters.

    A refit is discarded (and the action listed in ``guarded``) when the
    training RMSE on that action's supervised rows grows by more than
    ``tolerance``. Returns a new bank; the input bank is never modified.
    """
    F = np.atleast_2d(np.asarray(features, dtype=float))
    if F.shape[0] == 0 or F.shape[0] != len(labels):
        raise InputError("need a nonempty weak set with one label per sample")
    counts = RetrainCounts({l: 0 for l in bank.labels}, {l: 0 for l in bank.labels})
    extra: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for f, label in zip(F, labels):
        pose, _ = weighted_pose(bank, f)
        dec = weak_accept(bank, pose, label)
        if dec.accepted or not gate:
            counts.accepted[label] += 1
            target = apply_mapping(bank.estimators[dec.action], f)[0]
            extra.setdefault(dec.action, []).append((f, target))
        else:
            counts.rejected[label] += 1
    ests = list(bank.estimators)
    for a, rows in extra.items():
        old = ests[a]
        n = bank.n_supervised[a]
        X = np.vstack([old.inputs, [r[0] for r in rows]])
        Y = np.vstack([old.targets, [r[1] for r in rows]])
        try:
            # pseudo-labels carry no information about the noise level, so keep the supervised hyperparameters
            new = fit_mapping(X, Y, (FEATURE, POSE2D), kernel=old.kernel, optimize=False)
            before, after = _supervised_rmse(old, n), _supervised_rmse(new, n)
        except NumericalError as exc:
            raise NumericalError(f"refit of action {bank.labels[a]!r} failed: {exc}") from exc
        if not np.isfinite(after):
            raise OptimizationDiverged(f"refit of action {bank.labels[a]!r} produced non-finite predictions")
        if after > (1.0 + tolerance) * before + 1e-12:
            counts.guarded.append(bank.labels[a])
        else:
            ests[a] = new
    return replace(bank, estimators=tuple(ests)), counts


# ------------------------------------------------------------------ merger

@dataclass(frozen=True)
class MergerModel:
    """Per-joint convex weights over M experts, shape (J, M)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if np.any(w < -1e-12) or np.any(np.abs(w.sum(1) - 1.0) > 1e-9):
            raise InputError("each joint's weights must lie on the probability simplex")
        object.__setattr__(self, "weights", w)

    @property
    def n_experts(self) -> int:
        return self.weights.shape[1]

    def to_dict(self) -> dict:
        return {"type": "merger", "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MergerModel":
        return cls(np.array(d["weights"], dtype=float))


def merge_poses(m: MergerModel, expert_outputs) -> np.ndarray:
    P = np.asarray(expert_outputs, dtype=float)
    if P.ndim != 3 or P.shape[0] != m.n_experts or P.shape[1] != m.weights.shape[0]:
        raise InputError(f"expected ({m.n_experts}, {m.weights.shape[0]}, dims) expert poses, got {P.shape}")
    return np.einsum("jm,mjk->jk", m.weights, P)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, v.shape[1] + 1)
    rho = (u - css / k > 0).sum(1)
    tau = css[np.arange(v.shape[0]), rho - 1] / rho
    return np.maximum(v - tau[:, None], 0.0)


def merger_loss(m: MergerModel, expert_outputs, truth) -> float:
    P = np.asarray(expert_outputs, dtype=float)
    pred = np.einsum("jm,nmjk->njk", m.weights, P)
    return float(((pred - np.asarray(truth, dtype=float)) ** 2).sum())


def fit_merger(expert_outputs, truth, max_iters: int = 5000, tol: float = 1e-13) -> MergerModel:
    """Least-squares per-joint weights on the simplex by projected gradient descent.

    ``expert_outputs`` is (N, M, J, dims), ``truth`` is (N, J, dims). Starts
    from uniform weights; the step 1/L never increases the loss.
    """
    P = np.asarray(expert_outputs, dtype=float)
    T = np.asarray(truth, dtype=float)
    if P.ndim != 4 or P.shape[0] < 1 or P.shape[1] < 2:
        raise InputError("need at least 1 sample and 2 experts, shaped (N, M, J, dims)")
    if T.shape != (P.shape[0], *P.shape[2:]):
        raise InputError("truth must be (N, J, dims) matching the expert outputs")
    J, M = P.shape[2], P.shape[1]
    Q = np.einsum("nmjk,nljk->jml", P, P)
    b = np.einsum("nmjk,njk->jm", P, T)
    W = np.full((J, M), 1.0 / M)
    for j in range(J):
        L = 2.0 * float(np.linalg.eigvalsh(Q[j])[-1])
        if L <= 0:
            continue
        w = W[j]
        for _ in range(max_iters):
            g = 2.0 * (Q[j] @ w - b[j])
            nw = project_simplex(w - g / L)[0]
            if not np.all(np.isfinite(nw)):
                raise OptimizationDiverged(f"merger weights for joint {j} became non-finite")
            done = np.abs(nw - w).max() < tol
            w = nw
            if done:
                break
        W[j] = w / w.sum()
    return MergerModel(W)


# -------------------------------------------------------- synthetic dataset

@dataclass(frozen=True)
class PoseDataset:
    """Labeled 2D pose samples; ``features`` rows are [global ‖ appearance]."""

    features: np.ndarray
    poses: np.ndarray
    labels: np.ndarray
    n_global: int
    action_labels: tuple[str, ...]

    def subset(self, rows) -> "PoseDataset":
        return replace(self, features=self.features[rows], poses=self.poses[rows], labels=self.labels[rows])


def make_pose_dataset(n_actions: int = 3, n_per_action: int = 60, global_sep: float = 1.5,
                      pose_separable: bool = False, n_global: int = 4, n_appearance: int = 6,
                      feature_noise: float = 0.05, seed: int = 0) -> PoseDataset:
    """Synthetic multi-action 2D poses from a planar 6-link chain.

    Each action has a template angle vector and a 2D variation basis. Global
    features are class centroids scaled by ``global_sep`` plus unit noise.
    Appearance features see only the within-action variation unless
    ``pose_separable``, in which case they are a random linear image of the
    full pose (so per-action estimators fail away from their own action).
    """
    if n_actions < 2 or n_per_action < 2:
        raise InputError("need at least 2 actions with 2 samples each")
    rng = np.random.default_rng(seed)
    sk = chain_skeleton([0.5, 0.45, 0.4, 0.35, 0.3, 0.25])
    templates = rng.uniform(-1.2, 1.2, (n_actions, sk.n_dof))
    bases = rng.normal(0.0, 0.15, (n_actions, sk.n_dof, 2))
    centres = rng.normal(size=(n_actions, n_global))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    J = sk.joint_count
    H = rng.normal(size=(n_appearance, 2 * J if pose_separable else 2))
    feats, poses, labels = [], [], []
    for a in range(n_actions):
        for _ in range(n_per_action):
            z = rng.normal(size=2)
            pose = forward_kinematics(sk, templates[a] + bases[a] @ z)[:, :2]
            g = global_sep * centres[a] + rng.normal(size=n_global)
            h = H @ (pose.ravel() if pose_separable else z) + feature_noise * rng.normal(size=n_appearance)
            feats.append(np.concatenate([g, h]))
            poses.append(pose)
            labels.append(a)
    order = rng.permutation(len(labels))
    return PoseDataset(np.array(feats)[order], np.array(poses)[order], np.array(labels)[order], n_global,
                       tuple(f"action{a}" for a in range(n_actions)))


def split_dataset(ds: PoseDataset, train_fraction: float = 0.5) -> tuple[PoseDataset, PoseDataset]:
    """Deterministic split keeping each action's share."""
    train, test = [], []
    for a in range(len(ds.action_labels)):
        rows = np.flatnonzero(ds.labels == a)
        k = max(2, int(round(train_fraction * rows.size)))
        train.extend(rows[:k])
        test.extend(rows[k:])
    return ds.subset(np.array(sorted(train))), ds.subset(np.array(sorted(test)))
