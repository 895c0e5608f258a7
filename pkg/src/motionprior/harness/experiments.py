"""A/B experiments, metrics reports, plot data and artifact manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..ensemble import (fit_action_bank, fit_pooled_estimator, iterative_refine,
                        make_pose_dataset, pose_rmse, split_dataset, weighted_pose)
from ..errors import InputError
from ..latent.gplvm import LatentModel, gplvm_fit
from ..mappings import POSE_LATENT, GpMapping, apply_mapping, fit_mapping
from ..skeleton import (MotionSequence, ObservationModel, catalogue_spec, default_skeleton,
                        generate_synthetic_action, make_observation, observe_sequence, per_frame_joint_error)
from ..tracker import track
from ..transitions import SEPARATE, UNIFIED, ModelBank, build_separate_bank, build_unified_bank, find_transition_pairs
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

# Phase at which the first action of a test sequence starts.
TEST_START_FRAME = 13


def improvement(baseline: float, treatment: float) -> float:
    """Relative improvement of treatment over baseline, in percent."""
    return (baseline - treatment) / baseline * 100.0 if baseline else 0.0


@dataclass
class SeedResult:
    seed: int
    baseline: float
    treatment: float
    baseline_frames: list[float] = field(default_factory=list)
    treatment_frames: list[float] = field(default_factory=list)
    posterior: list[list[float]] = field(default_factory=list)  # treatment arm, (T, n_models)
    extra: dict[str, float] = field(default_factory=dict)

    @property
    def improvement(self) -> float:
        return improvement(self.baseline, self.treatment)


@dataclass
class MetricsReport:
    """Per-seed baseline/treatment errors plus aggregates derived from them."""

    kind: str
    metric: str
    seeds: list[SeedResult]
    settings: dict = field(default_factory=dict)

    @property
    def baseline_median(self) -> float:
        return float(np.median([s.baseline for s in self.seeds]))

    @property
    def treatment_median(self) -> float:
        return float(np.median([s.treatment for s in self.seeds]))

    @property
    def improvement(self) -> float:
        return improvement(self.baseline_median, self.treatment_median)

    def to_dict(self) -> dict:
        seeds = [{**asdict(s), "improvement": s.improvement} for s in self.seeds]
        return {"type": "metrics_report", "kind": self.kind, "metric": self.metric, "settings": self.settings,
                "seeds": seeds, "baseline_median": self.baseline_median,
                "treatment_median": self.treatment_median, "improvement": self.improvement}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        names = {f for f in SeedResult.__dataclass_fields__}
        seeds = [SeedResult(**{k: v for k, v in s.items() if k in names}) for s in d["seeds"]]
        return cls(d["kind"], d["metric"], seeds, d.get("settings", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path


# ------------------------------------------------------------ test sequences

def blend_concat(a: np.ndarray, b: np.ndarray, n_blend: int = 10) -> np.ndarray:
    """Join two frame blocks with ``n_blend`` linearly interpolated frames."""
    w = np.linspace(0.0, 1.0, n_blend + 2)[1:-1, None]
    return np.vstack([a, (1.0 - w) * a[-1] + w * b[0], b])


def build_switch_sequence(action_a: str, action_b: str, n_frames: int = 200, n_blend: int = 10,
                          noise_sd: float = 0.01, seed: int = 0) -> tuple[MotionSequence, int]:
    """Ground truth for one mid-sequence action switch, and the switch frame.

    Action A runs until the frame in the middle fifth of the sequence whose
    pose is closest to some phase of action B; B then starts at that phase
    after a linear blend.
    """
    if n_frames < 2 * n_blend + 20:
        raise InputError("sequence too short for a switch")
    sa, sb = catalogue_spec(action_a), catalogue_spec(action_b)
    lo, hi = int(0.45 * n_frames), int(0.65 * n_frames)
    cand = generate_synthetic_action(sa, hi, 0.0, 0, start_frame=TEST_START_FRAME).frames
    period_b = int(np.ceil(sb.fps / sb.frequencies.min()))
    cb = generate_synthetic_action(sb, period_b, 0.0, 0).frames
    ia, ib, _ = find_transition_pairs(cand[lo:], cb, 1)[0]
    na = lo + ia + 1
    rng = np.random.default_rng(seed)
    A = generate_synthetic_action(sa, na, noise_sd, int(rng.integers(2**31)), start_frame=TEST_START_FRAME)
    B = generate_synthetic_action(sb, n_frames - na - n_blend, noise_sd, int(rng.integers(2**31)), start_frame=ib)
    frames = blend_concat(A.frames, B.frames, n_blend)
    return MotionSequence(frames, fps=sa.fps, action_label=f"{action_a}>{action_b}", subject_id="test"), na


# ------------------------------------------------------------ transitions A/B

@dataclass
class TrackingSetup:
    """Everything the tracker needs besides observations."""

    bank: ModelBank
    pose_model: LatentModel
    mappings: list[GpMapping]

    def to_dict(self) -> dict:
        return {"type": "tracking_bundle", "bank": self.bank.to_dict(), "pose_model": self.pose_model.to_dict(),
                "mappings": [m.to_dict() for m in self.mappings]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackingSetup":
        return cls(ModelBank.from_dict(d["bank"]), LatentModel.from_dict(d["pose_model"]),
                   [GpMapping.from_dict(m) for m in d["mappings"]])


def pose_mappings(bank: ModelBank, pose_model: LatentModel, max_iters: int = 500) -> list[GpMapping]:
    """Latent->pose-latent mappings, one per bank model, trained on matching rows."""
    if bank.mode == UNIFIED:
        return [fit_mapping(bank.models[0].X, pose_model.X, ("latent:unified", POSE_LATENT), max_iters=max_iters)]
    out, off = [], 0
    for m, label in zip(bank.models, bank.labels):
        n = m.X.shape[0]
        out.append(fit_mapping(m.X, pose_model.X[off: off + n], (f"latent:{label}", POSE_LATENT),
                               max_iters=max_iters))
        off += n
    return out


def train_setup(groups: dict[str, list[MotionSequence]], features: dict[str, list[np.ndarray]] | None,
                cfg: ExperimentConfig, seed: int, topo_weight: float | None = None) -> TrackingSetup:
    ms = cfg.model
    kw = dict(d=ms.d, k_paths=ms.k_paths, features=features, n_waypoints=ms.n_waypoints,
              smooth_weight=ms.smooth_weight, max_iters=ms.max_iters, seed=seed)
    if ms.mode == SEPARATE:
        bank = build_separate_bank(groups, **kw)
    else:
        tw = ms.topo_weight if topo_weight is None else topo_weight
        bank = build_unified_bank(groups, topo_weight=tw, **kw)
    poses = np.vstack([s.frames for lab in groups for s in groups[lab]])
    pose_model = gplvm_fit(poses, ms.d, max_iters=ms.pose_max_iters, seed=seed)
    return TrackingSetup(bank, pose_model, pose_mappings(bank, pose_model, ms.max_iters))


def training_data(cfg: ExperimentConfig, seed: int):
    """Per-action training sequences, their features, and the observation model."""
    ds = cfg.dataset
    sk = default_skeleton()
    obs = ObservationModel.random(ds.obs_features, sk.n_dof, ds.obs_noise_sd, seed=1000 + seed)
    groups, feats = {}, {}
    for k, a in enumerate(ds.actions):
        s = generate_synthetic_action(catalogue_spec(a), ds.train_frames, ds.noise_sd, seed * 10 + k)
        groups[a] = [s]
        feats[a] = [observe_sequence(s, obs, seed * 10 + k + 5)]
    return groups, feats, obs


def _transitions_seed(cfg: ExperimentConfig, seed: int, self_test: bool) -> SeedResult:
    ds = cfg.dataset
    sk = default_skeleton()
    groups, feats, obs = training_data(cfg, seed)
    treat = train_setup(groups, feats, cfg, seed)
    if self_test:
        base = treat
    elif cfg.model.mode == SEPARATE:
        base = replace(treat, bank=treat.bank.without_paths())
    else:
        base = train_setup(groups, feats, cfg, seed, topo_weight=0.0)
    gt, _ = build_switch_sequence(ds.actions[0], ds.actions[1], ds.test_frames, ds.blend_frames, ds.noise_sd,
                                  seed * 10 + 7)
    y = make_observation(gt.frames, obs, seed * 10 + 9)
    tcfg = replace(cfg.tracker, seed=seed)
    runs = []
    for setup in (base, treat):
        r = track(setup.bank, y, setup.mappings, setup.pose_model, tcfg)
        runs.append((per_frame_joint_error(r.estimate.frames, gt.frames, sk), r))
    (pb, _), (pt, rt) = runs
    logger.info("seed %d: baseline %.4f treatment %.4f", seed, pb.mean(), pt.mean())
    return SeedResult(seed, float(pb.mean()), float(pt.mean()), pb.tolist(), pt.tolist(),
                      rt.model_posterior.tolist())


def run_ab_transitions(cfg: ExperimentConfig, self_test: bool = False) -> MetricsReport:
    """Track identical switch sequences with and without the transition machinery.

    Separate mode ablates the paths; unified mode retrains with topo_weight 0.
    ``self_test`` feeds the same bank to both arms (a null experiment).
    """
    if len(cfg.dataset.actions) < 2:
        raise InputError("a transitions experiment needs at least 2 actions")
    if len(cfg.dataset.seeds) < 3:
        raise InputError("a transitions experiment needs at least 3 seeds")
    seeds = [_transitions_seed(cfg, s, self_test) for s in sorted(cfg.dataset.seeds)]
    settings = {"mode": cfg.model.mode, "actions": list(cfg.dataset.actions), "self_test": self_test,
                "baseline": "same bank" if self_test else ("no paths" if cfg.model.mode == SEPARATE
                                                             else "topo_weight=0")}
    return MetricsReport(f"transitions_{cfg.model.mode}", "joint_error_m", seeds, settings)


# --------------------------------------------------------------- ensemble A/B

def _ensemble_seed(cfg: ExperimentConfig, seed: int) -> SeedResult:
    es = cfg.ensemble
    ds = make_pose_dataset(es.n_actions, es.n_per_action, es.global_sep, seed=seed)
    tr, te = split_dataset(ds, es.train_fraction)
    bank = fit_action_bank(tr.features, tr.poses, tr.labels, tr.action_labels, tr.n_global)
    pooled = fit_pooled_estimator(tr.features, tr.poses)
    ens = np.array([weighted_pose(bank, f)[0] for f in te.features])
    refined = np.array([iterative_refine(bank, f, es.max_refine_iters)[0] for f in te.features])
    pp = apply_mapping(pooled, te.features)[0].reshape(ens.shape)

    sep = make_pose_dataset(es.n_actions, es.n_per_action, es.separable_global_sep, pose_separable=True,
                            seed=seed)
    str_, ste = split_dataset(sep, es.train_fraction)
    sbank = fit_action_bank(str_.features, str_.poses, str_.labels, str_.action_labels, str_.n_global)
    init_acc, ref_acc = _refine_accuracy(sbank, ste, es.max_refine_iters)
    extra = {"refined_rmse": pose_rmse(refined, te.poses), "initial_accuracy": init_acc,
             "refined_accuracy": ref_acc}
    return SeedResult(seed, pose_rmse(pp, te.poses), pose_rmse(ens, te.poses), extra=extra)


def _refine_accuracy(bank, test, max_iters: int) -> tuple[float, float]:
    init = [int(np.argmax(weighted_pose(bank, f)[1])) for f in test.features]
    final = [int(np.argmax(iterative_refine(bank, f, max_iters)[1])) for f in test.features]
    return float(np.mean(np.array(init) == test.labels)), float(np.mean(np.array(final) == test.labels))


def run_ab_ensemble(cfg: ExperimentConfig) -> MetricsReport:
    """Action-weighted ensemble (treatment) against one pooled estimator (baseline)."""
    seeds = [_ensemble_seed(cfg, s) for s in sorted(cfg.ensemble.seeds)]
    return MetricsReport("ensemble", "pose_rmse", seeds, {"n_actions": cfg.ensemble.n_actions,
                                                           "global_sep": cfg.ensemble.global_sep})


# ------------------------------------------------------------ files

def emit_plot_data(report: MetricsReport, out_dir) -> list[Path]:
    """Write per-frame error and posterior CSVs (or a per-seed CSV when no frames)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    frames = [s for s in report.seeds if s.treatment_frames]
    if frames:
        T = len(frames[0].treatment_frames)
        cols = [f"seed{s.seed}_{arm}" for s in frames for arm in ("baseline", "treatment")]
        path = out / "error_vs_frame.csv"
        with path.open("w", newline="") as fh:
            fh.write(f"# per-frame {report.metric}; columns: frame, then baseline and treatment arm per seed\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", *cols])
            for t in range(T):
                w.writerow([t, *(repr(float(v)) for s in frames for v in (s.baseline_frames[t], s.treatment_frames[t]))])
        written.append(path)
        path = out / "posterior_vs_frame.csv"
        n_models = len(frames[0].posterior[0]) if frames[0].posterior else 0
        with path.open("w", newline="") as fh:
            fh.write("# treatment-arm posterior mass per model; columns: frame, then seed<k>_model<m>\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", *(f"seed{s.seed}_model{m}" for s in frames for m in range(n_models))])
            for t in range(T):
                w.writerow([t, *(repr(float(v)) for s in frames for v in s.posterior[t])])
        written.append(path)
    else:
        path = out / "per_seed.csv"
        keys = sorted({k for s in report.seeds for k in s.extra})
        with path.open("w", newline="") as fh:
            fh.write(f"# {report.metric} per seed; columns: seed, baseline, treatment, improvement_pct, extras\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "baseline", "treatment", "improvement_pct", *keys])
            for s in report.seeds:
                w.writerow([s.seed, repr(float(s.baseline)), repr(float(s.treatment)), repr(float(s.improvement)),
                            *(repr(float(s.extra.get(k, float("nan")))) for k in keys)])
        written.append(path)
    return written


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files) -> Path:
    """List generated artifacts (relative paths) with their SHA-256 hashes."""
    out = Path(out_dir)
    entries = {str(Path(f).resolve().relative_to(out.resolve())): sha256_file(f) for f in files}
    path = out / "manifest.json"
    path.write_text(json.dumps({"artifacts": dict(sorted(entries.items()))}, indent=1) + "\n")
    return path
