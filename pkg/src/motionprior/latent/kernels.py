"""RBF (+ optional linear) kernel with white noise, parameterized in log space."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError


@dataclass(frozen=True)
class KernelParams:
    """Positive kernel hyperparameters.

    The optimizers work on ``to_log()``; ``linear_weight`` is a fixed
    (non-optimized) coefficient on a linear term x.x' and may be 0.
    """

    signal_variance: float = 1.0
    length_scale: float = 1.0
    noise_variance: float = 1e-2
    linear_weight: float = 0.0

    def __post_init__(self):
        for name in ("signal_variance", "length_scale", "noise_variance"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise InputError(f"{name} must be positive and finite, got {v}")
        if not (self.linear_weight >= 0 and math.isfinite(self.linear_weight)):
            raise InputError(f"linear_weight must be >= 0, got {self.linear_weight}")

    def to_log(self) -> np.ndarray:
        return np.log([self.signal_variance, self.length_scale, self.noise_variance])

    @classmethod
    def from_log(cls, theta, linear_weight: float = 0.0) -> "KernelParams":
        s, l, n = np.exp(np.asarray(theta, dtype=float))
        return cls(float(s), float(l), float(n), linear_weight)

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance, "length_scale": self.length_scale,
                "noise_variance": self.noise_variance, "linear_weight": self.linear_weight}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(float(d["signal_variance"]), float(d["length_scale"]), float(d["noise_variance"]),
                   float(d.get("linear_weight", 0.0)))


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    # explicit differences: the expanded |a|^2 + |b|^2 - 2ab form loses digits to cancellation
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf(A: np.ndarray, B: np.ndarray, kernel: KernelParams) -> np.ndarray:
    """sigma^2 exp(-|a-b|^2 / (2 l^2)) plus the linear term, no noise."""
    K = kernel.signal_variance * np.exp(-0.5 * sq_dists(A, B) / kernel.length_scale ** 2)
    if kernel.linear_weight:
        K = K + kernel.linear_weight * np.atleast_2d(A) @ np.atleast_2d(B).T
    return K


def kdiag(A: np.ndarray, kernel: KernelParams) -> np.ndarray:
    A = np.atleast_2d(A)
    out = np.full(A.shape[0], kernel.signal_variance)
    if kernel.linear_weight:
        out = out + kernel.linear_weight * (A * A).sum(1)
    return out


def gram(X: np.ndarray, kernel: KernelParams) -> np.ndarray:
    """Training covariance K(X, X) + noise * I."""
    K = rbf(X, X, kernel)
    K[np.diag_indices_from(K)] += kernel.noise_variance
    return K
