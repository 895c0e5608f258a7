"""Command-line entry point.

Exit codes: 0 success, 1 input error (bad flags, files or values),
2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..ensemble import fit_action_bank, make_pose_dataset, split_dataset
from ..errors import InputError, NumericalError
from ..latent.gpdm import gpdm_fit
from ..latent.gplvm import gplvm_fit
from ..latent.pca import pca_fit
from ..serialization import from_json, register, save_model
from ..skeleton import (FeatureSequence, ObservationModel, catalogue_spec, default_skeleton,
                        generate_synthetic_action, joint_error, load_features, load_sequence, observe_sequence,
                        per_frame_joint_error, save_features, save_sequence)
from ..tracker import track
from .config import ExperimentConfig, load_config
from .experiments import (MetricsReport, TrackingSetup, build_switch_sequence, emit_plot_data, run_ab_ensemble,
                          run_ab_transitions, train_setup, write_manifest)

register("tracking_bundle", TrackingSetup.from_dict)
register("metrics_report", MetricsReport.from_dict)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def _out(args, cfg: ExperimentConfig | None = None) -> Path:
    out = Path(args.out or (cfg.out_dir if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj: dict) -> Path:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")
    return path


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    actions = _csv_list(args.actions)
    if not actions:
        raise InputError("--actions needs at least one action")
    out = _out(args)
    rng = np.random.default_rng(args.seed)
    files = []
    seqs = {}
    for a in actions:
        s = generate_synthetic_action(catalogue_spec(a), args.frames, args.noise, int(rng.integers(2**31)),
                                      subject_id=f"seed{args.seed}")
        seqs[a] = s
        save_sequence(s, out / f"{a}.csv")
        files.append(out / f"{a}.csv")
    if args.switch:
        if len(actions) < 2:
            raise InputError("--switch needs at least 2 actions")
        gt, _ = build_switch_sequence(actions[0], actions[1], args.frames, 10, args.noise, int(rng.integers(2**31)))
        save_sequence(gt, out / "switch.csv")
        files.append(out / "switch.csv")
        seqs["switch"] = gt
    if args.features > 0:
        obs = ObservationModel.random(args.features, default_skeleton().n_dof, args.obs_noise,
                                      int(rng.integers(2**31)))
        for name, s in seqs.items():
            f = FeatureSequence(observe_sequence(s, obs, int(rng.integers(2**31))), s.fps, s.action_label,
                                s.subject_id)
            save_features(f, out / f"{name}.features.csv")
            files.append(out / f"{name}.features.csv")
        files.append(_write_json(out / "observation.json",
                                 {"matrix": obs.matrix.tolist(), "noise_sd": obs.noise_sd}))
    write_manifest(out, files)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    ms = cfg.model
    d = args.d if args.d is not None else ms.d
    max_iters = args.max_iters if args.max_iters is not None else ms.max_iters
    files = []
    if args.kind == "ensemble":
        es = cfg.ensemble
        ds = make_pose_dataset(es.n_actions, es.n_per_action, es.global_sep, seed=args.seed)
        tr, _ = split_dataset(ds, es.train_fraction)
        bank = fit_action_bank(tr.features, tr.poses, tr.labels, tr.action_labels, tr.n_global,
                               max_iters=max_iters)
        files.append(save_model(bank, out / "ensemble.json"))
        write_manifest(out, files)
        return EXIT_OK
    if not args.data:
        raise InputError(f"train {args.kind} needs --data")
    seqs = [load_sequence(p) for p in _csv_list(args.data)]
    if args.kind in ("pca", "gplvm"):
        Y = np.vstack([s.frames for s in seqs])
        model = pca_fit(Y, d) if args.kind == "pca" else gplvm_fit(Y, d, max_iters=max_iters, seed=args.seed)
        files.append(save_model(model, out / f"{args.kind}.json"))
    elif args.kind == "gpdm":
        model = gpdm_fit(seqs, d, max_iters=max_iters, seed=args.seed)
        files.append(save_model(model, out / "gpdm.json"))
    else:
        groups: dict[str, list] = {}
        for s in seqs:
            groups.setdefault(s.action_label, []).append(s)
        feats = None
        if args.features:
            fseqs = [load_features(p) for p in _csv_list(args.features)]
            if len(fseqs) != len(seqs):
                raise InputError("--features needs one file per --data file")
            feats = {}
            for s, f in zip(seqs, fseqs):
                if len(f.values) != len(s):
                    raise InputError(f"feature file for {s.action_label!r} has a different frame count")
                feats.setdefault(s.action_label, []).append(f.values)
        mode = args.mode or ms.mode
        cfg = replace(cfg, model=replace(ms, mode=mode, d=d, max_iters=max_iters,
                                         k_paths=args.k_paths if args.k_paths is not None else ms.k_paths,
                                         topo_weight=args.topo_weight if args.topo_weight is not None
                                         else ms.topo_weight))
        setup = train_setup(groups, feats, cfg, args.seed)
        files.append(save_model(setup, out / "bundle.json"))
    write_manifest(out, files)
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _config(args)
    out = _out(args)
    setup = from_json(Path(args.bundle).read_text())
    if not isinstance(setup, TrackingSetup):
        raise InputError(f"{args.bundle} is not a tracking bundle")
    obs = load_features(args.obs)
    tcfg = cfg.tracker
    if args.particles is not None:
        tcfg = replace(tcfg, n_particles=args.particles)
    tcfg = replace(tcfg, seed=args.seed)
    r = track(setup.bank, obs.values, setup.mappings, setup.pose_model, tcfg, fps=obs.fps, label=obs.action_label)
    save_sequence(r.estimate, out / "estimate.csv")
    meta = out / "estimate.meta.csv"
    rows = r.metadata_rows()
    with meta.open("w", newline="") as fh:
        fh.write("# per-frame tracker state: winning model, ESS before resampling, degenerate flag, "
                 "posterior mass per model\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    write_manifest(out, [out / "estimate.csv", meta])
    return EXIT_OK


def cmd_eval(args) -> int:
    est, gt = load_sequence(args.est), load_sequence(args.gt)
    sk = default_skeleton()
    pf = per_frame_joint_error(est.frames, gt.frames, sk)
    report = {"type": "eval_report", "metric": "joint_error_m", "joint_error": joint_error(est, gt, sk),
              "frames": len(pf), "per_frame": pf.tolist()}
    if args.out:
        out = _out(args)
        _write_json(out / "eval.json", report)
        write_manifest(out, [out / "eval.json"])
    print(json.dumps({"joint_error": report["joint_error"], "frames": report["frames"]}))
    return EXIT_OK


def _finish_report(report: MetricsReport, out: Path, cfg: ExperimentConfig) -> int:
    files = [report.save(out / "report.json"), *emit_plot_data(report, out), cfg.save(out / "config.used.cfg")]
    write_manifest(out, files)
    print(json.dumps({"kind": report.kind, "baseline_median": report.baseline_median,
                      "treatment_median": report.treatment_median, "improvement_pct": report.improvement}))
    return EXIT_OK


def cmd_ab_transitions(args) -> int:
    cfg = _config(args)
    if args.mode:
        cfg = cfg.with_mode(args.mode)
    out = _out(args, cfg)
    return _finish_report(run_ab_transitions(cfg, self_test=args.self_test), out, cfg)


def cmd_ab_ensemble(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    return _finish_report(run_ab_ensemble(cfg), out, cfg)


def cmd_init_config(args) -> int:
    path = Path(args.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ExperimentConfig().save(path)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motionprior", description="Motion-prior tracking and ensemble pose experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate synthetic action sequences")
    g.add_argument("--actions", required=True, help="comma-separated action labels")
    g.add_argument("--frames", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.01, help="angle noise sd (rad)")
    g.add_argument("--features", type=int, default=0, help="also write F-dim observation features")
    g.add_argument("--obs-noise", type=float, default=0.02)
    g.add_argument("--switch", action="store_true", help="also write a first->second action switch sequence")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("kind", choices=["pca", "gplvm", "gpdm", "bank", "ensemble"])
    t.add_argument("--data", help="comma-separated sequence CSVs")
    t.add_argument("--features", help="comma-separated feature CSVs matching --data (bank only)")
    t.add_argument("--config")
    t.add_argument("--mode", choices=["separate", "unified"])
    t.add_argument("--d", type=int)
    t.add_argument("--k-paths", type=int)
    t.add_argument("--topo-weight", type=float)
    t.add_argument("--max-iters", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="track an observation sequence with a trained bundle")
    k.add_argument("--bundle", required=True)
    k.add_argument("--obs", required=True, help="feature CSV")
    k.add_argument("--config")
    k.add_argument("--particles", type=int)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="joint error between two sequence CSVs")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ab-transitions", help="with/without transition machinery A/B")
    a.add_argument("--config")
    a.add_argument("--mode", choices=["separate", "unified"])
    a.add_argument("--self-test", action="store_true", help="feed the same bank to both arms")
    a.add_argument("--out")
    a.set_defaults(func=cmd_ab_transitions)

    b = sub.add_parser("ab-ensemble", help="ensemble vs pooled estimator A/B")
    b.add_argument("--config")
    b.add_argument("--out")
    b.set_defaults(func=cmd_ab_ensemble)

    c = sub.add_parser("init-config", help="write the default experiment config")
    c.add_argument("path")
    c.set_defaults(func=cmd_init_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
