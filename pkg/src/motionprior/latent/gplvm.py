"""MAP GPLVM: latent coordinates and kernel hyperparameters fit jointly."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..errors import InputError
from .gp import GPPosterior, gp_neg_log_likelihood
from .kernels import KernelParams
from .optimize import minimize_lbfgs
from .pca import pca_fit, pca_project


@dataclass
class LatentModel:
    """GP mapping from latent X (N, d) to centered data Y_centered (N, D)."""

    X: np.ndarray
    Y_centered: np.ndarray
    data_mean: np.ndarray
    kernel: KernelParams
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y_centered = np.atleast_2d(np.asarray(self.Y_centered, dtype=float))
        self.data_mean = np.asarray(self.data_mean, dtype=float).ravel()
        if self.X.shape[0] != self.Y_centered.shape[0] or self.X.shape[0] < 2:
            raise InputError("X and Y_centered need the same number (>= 2) of rows")
        if self.data_mean.shape[0] != self.Y_centered.shape[1]:
            raise InputError("data_mean length must equal the data dimension")

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def D(self) -> int:
        return self.Y_centered.shape[1]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @cached_property
    def posterior(self) -> GPPosterior:
        return GPPosterior(self.X, self.Y_centered, self.kernel)

    def to_dict(self) -> dict:
        return {"type": "gplvm", "d": self.d, "mean": self.data_mean.tolist(), "X": self.X.tolist(),
                "Y_centered": self.Y_centered.tolist(), "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LatentModel":
        return cls(np.array(d["X"], dtype=float).reshape(-1, int(d["d"])), np.array(d["Y_centered"], dtype=float),
                   np.array(d["mean"], dtype=float), KernelParams.from_dict(d["kernel"]))


def latent_to_observation(model: LatentModel, x):
    """Reconstruction mean (data_mean added back) and scalar variance; batches allowed."""
    mean, var = model.posterior(x)
    return mean + model.data_mean, var


def initial_kernel(Yc: np.ndarray) -> KernelParams:
    v = float(Yc.var(0).mean()) if Yc.size else 0.0
    v = v if v > 1e-12 else 1.0
    return KernelParams(signal_variance=v, length_scale=1.0, noise_variance=0.05 * v)


def pca_init(Yc: np.ndarray, d: int, seed: int = 0) -> np.ndarray:
    """PCA scores rescaled so the leading latent dimension has unit variance."""
    N, D = Yc.shape
    k = min(d, N - 1, D)
    X = np.zeros((N, d))
    if k >= 1:
        pca = pca_fit(Yc, k)
        X[:, :k] = pca_project(pca, Yc)
        scale = float(np.sqrt(pca.eigenvalues[0]))
        if scale > 1e-12:
            X /= scale
    return X


def gplvm_neg_log_posterior(params: np.ndarray, Y: np.ndarray, d: int):
    """Negative log of p(Y | X, theta) p(X) p(theta); value and flat gradient.

    ``params`` = [X.ravel(), log signal variance, log length scale, log noise].
    Priors are unit spherical on rows of X and unit Gaussian on log-params.
    """
    N = Y.shape[0]
    X = params[: N * d].reshape(N, d)
    theta = params[N * d:]
    v, dX, dtheta, _ = gp_neg_log_likelihood(X, Y, theta)
    v += 0.5 * float((X * X).sum()) + 0.5 * float(theta @ theta)
    return v, np.concatenate([(dX + X).ravel(), dtheta + theta])


def gplvm_fit(Y, d: int = 3, max_iters: int = 500, seed: int = 0, init: str = "pca",
              kernel: KernelParams | None = None, gtol: float = 1e-5) -> LatentModel:
    """Fit a MAP GPLVM. ``history`` on the result holds the log posterior per accepted step."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    N, D = Y.shape
    if N < 2:
        raise InputError("GPLVM needs at least 2 samples")
    if not np.all(np.isfinite(Y)):
        raise InputError("GPLVM input contains non-finite values")
    if not 1 <= d < D:
        raise InputError(f"latent dimension must satisfy 1 <= d < D={D}, got {d}")
    mean = Y.mean(0)
    Yc = Y - mean
    if init == "pca":
        X0 = pca_init(Yc, d)
    elif init == "random":
        X0 = np.random.default_rng(seed).normal(0.0, 1.0, size=(N, d))
    else:
        raise InputError(f"unknown init {init!r}")
    kernel = kernel or initial_kernel(Yc)
    x0 = np.concatenate([X0.ravel(), kernel.to_log()])
    res = minimize_lbfgs(lambda p: gplvm_neg_log_posterior(p, Yc, d), x0, max_iters=max_iters, gtol=gtol)
    X = res.x[: N * d].reshape(N, d)
    return LatentModel(X, Yc, mean, KernelParams.from_log(res.x[N * d:]), history=[-h for h in res.history])
