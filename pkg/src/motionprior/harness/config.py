"""Experiment configuration stored as an INI file."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..errors import InputError
from ..skeleton import ACTION_CATALOGUE
from ..tracker import TrackerConfig
from ..transitions import SEPARATE, UNIFIED


@dataclass
class DatasetSpec:
    actions: tuple[str, ...] = ("walk", "kick")
    train_frames: int = 60
    test_frames: int = 200
    blend_frames: int = 10
    noise_sd: float = 0.01
    obs_features: int = 12
    obs_noise_sd: float = 0.02
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6)


@dataclass
class ModelSpec:
    mode: str = SEPARATE
    d: int = 3
    topo_weight: float = 10.0
    k_paths: int = 10
    n_waypoints: int = 5
    smooth_weight: float = 1.0
    max_iters: int = 500
    pose_max_iters: int = 300


@dataclass
class EnsembleSpec:
    n_actions: int = 3
    n_per_action: int = 80
    train_fraction: float = 0.5
    global_sep: float = 2.5
    separable_global_sep: float = 1.5
    max_refine_iters: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


def _default_tracker() -> TrackerConfig:
    return TrackerConfig(n_particles=200)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    tracker: TrackerConfig = field(default_factory=_default_tracker)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    out_dir: str = "results"

    def __post_init__(self):
        unknown = [a for a in self.dataset.actions if a not in ACTION_CATALOGUE]
        if unknown:
            raise InputError(f"unknown actions in config: {', '.join(unknown)}")
        if not self.dataset.seeds or not self.ensemble.seeds:
            raise InputError("seed lists must be nonempty")
        if self.model.mode not in (SEPARATE, UNIFIED):
            raise InputError(f"model mode must be {SEPARATE!r} or {UNIFIED!r}")
        if self.dataset.test_frames < 2 * self.dataset.blend_frames + 20:
            raise InputError("test sequences are too short for a switch")

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return replace(self, model=replace(self.model, mode=mode))

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in ("dataset", "model", "tracker", "ensemble"):
            cp[name] = {k: _fmt(v) for k, v in asdict(getattr(self, name)).items()}
        cp["output"] = {"out_dir": self.out_dir}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        if default is None:
            return None if raw.lower() == "none" else float(raw)
        return type(default)(raw)
    except ValueError as exc:
        raise InputError(f"config key {key!r}: cannot parse {raw!r}") from exc


def _section(cp: configparser.ConfigParser, name: str, cls, base):
    if not cp.has_section(name):
        return base
    known = {f.name for f in fields(cls)}
    values = asdict(base)
    for key, raw in cp[name].items():
        if key not in known:
            raise InputError(f"unknown key {key!r} in section [{name}]")
        values[key] = _parse_value(raw, values[key], f"{name}.{key}")
    try:
        return cls(**values)
    except ValueError as exc:
        raise InputError(f"section [{name}]: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InputError(f"malformed config: {exc}") from exc
    extra = set(cp.sections()) - {"dataset", "model", "tracker", "ensemble", "output"}
    if extra:
        raise InputError(f"unknown config sections: {', '.join(sorted(extra))}")
    defaults = ExperimentConfig()
    out_dir = cp.get("output", "out_dir", fallback=defaults.out_dir)
    return ExperimentConfig(
        dataset=_section(cp, "dataset", DatasetSpec, defaults.dataset),
        model=_section(cp, "model", ModelSpec, defaults.model),
        tracker=_section(cp, "tracker", TrackerConfig, defaults.tracker),
        ensemble=_section(cp, "ensemble", EnsembleSpec, defaults.ensemble),
        out_dir=out_dir,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    return parse_config(path.read_text())
