"""Linear eigenspace manifolds via PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (d, D), orthonormal rows
    eigenvalues: np.ndarray  # (d,), descending

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def D(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {"type": "pca", "d": self.d, "mean": self.mean.tolist(),
                "components": self.components.tolist(), "eigenvalues": self.eigenvalues.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(np.array(d["mean"], dtype=float), np.array(d["components"], dtype=float).reshape(int(d["d"]), -1),
                   np.array(d["eigenvalues"], dtype=float))


def pca_fit(Y, d: int) -> PcaModel:
    """Top-``d`` eigenvectors of the sample covariance (N - 1 normalization)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N, D = Y.shape
    if N < 2:
        raise InputError("PCA needs at least 2 samples")
    if not np.all(np.isfinite(Y)):
        raise InputError("PCA input contains non-finite values")
    if not 1 <= d <= min(N - 1, D):
        raise InputError(f"d must lie in [1, {min(N - 1, D)}], got {d}")
    mean = Y.mean(0)
    Yc = Y - mean
    cov = Yc.T @ Yc / (N - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    comps = evecs[:, order].T
    # deterministic sign: largest-magnitude entry of each component positive
    idx = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(d), idx])[:, None]
    return PcaModel(mean, comps, np.clip(evals[order], 0.0, None))


def pca_project(model: PcaModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.D:
        raise InputError(f"expected {model.D}-dimensional input, got {y.shape[-1]}")
    return (y - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise InputError(f"expected {model.d}-dimensional latent, got {x.shape[-1]}")
    return x @ model.components + model.mean
