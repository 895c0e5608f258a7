"""JSON persistence for every model type, dispatched on the ``type`` field.

Floats are written with ``repr`` precision (17 significant digits), so a
save/load round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable

from .ensemble import ActionClassifier, ActionPoseBank2D, MergerModel
from .errors import InputError
from .latent.gpdm import GpdmModel
from .latent.gplvm import LatentModel
from .latent.pca import PcaModel
from .mappings import GpMapping
from .transitions import ModelBank

_LOADERS: dict[str, Callable[[dict], Any]] = {
    "pca": PcaModel.from_dict,
    "gplvm": LatentModel.from_dict,
    "gpdm": GpdmModel.from_dict,
    "gp_mapping": GpMapping.from_dict,
    "bank": ModelBank.from_dict,
    "action_classifier": ActionClassifier.from_dict,
    "action_bank": ActionPoseBank2D.from_dict,
    "merger": MergerModel.from_dict,
}


def register(type_name: str, loader: Callable[[dict], Any]) -> None:
    _LOADERS[type_name] = loader


def to_json(obj) -> str:
    d = obj if isinstance(obj, dict) else obj.to_dict()
    return json.dumps(d, sort_keys=True, allow_nan=False)


def from_dict(d: dict):
    kind = d.get("type") if isinstance(d, dict) else None
    if kind not in _LOADERS:
        raise InputError(f"unknown model type {kind!r}")
    try:
        return _LOADERS[kind](d)
    except (KeyError, TypeError, IndexError) as exc:
        raise InputError(f"malformed {kind} document: {exc}") from exc


def from_json(text: str):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return from_dict(d)


def save_model(obj, path) -> Path:
    path = Path(path)
    path.write_text(to_json(obj) + "\n")
    return path


def load_model(path):
    return from_json(Path(path).read_text())
