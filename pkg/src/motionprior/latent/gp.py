"""Exact GP regression: jittered Cholesky, predictive posterior, and the
negative log marginal likelihood with analytic gradients w.r.t. inputs and
log-hyperparameters."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from ..errors import InputError, NumericalError
from .kernels import KernelParams, gram, kdiag, rbf, sq_dists

JITTER_START = 1e-10
JITTER_MAX = 1e-4
MAX_LOG_HYPER = 300.0


def jitter_cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, adding diagonal jitter 1e-10, 1e-9, ..., 1e-4 if needed.

    Returns the factor and the jitter actually added (0.0 when none was needed).
    """
    jitter = 0.0
    while True:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(K.shape[0])
            return cholesky(Kj, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            if not np.all(np.isfinite(K)):
                raise NumericalError("Gram matrix has non-finite entries") from None
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise NumericalError(f"Cholesky failed with jitter up to {JITTER_MAX:g}") from None


class GPPosterior:
    """Cached Cholesky of one training set; evaluates predictive mean/variance.

    The predictive variance is a single scalar per query shared by every output
    dimension and includes the noise variance.
    """

    def __init__(self, X, Y, kernel: KernelParams):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        self.Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0]:
            raise InputError(f"{self.X.shape[0]} inputs but {self.Y.shape[0]} targets")
        self.kernel = kernel
        self.L, self.jitter = jitter_cholesky(gram(self.X, kernel))
        self.alpha = cho_solve((self.L, True), self.Y)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def predict(self, xq) -> tuple[np.ndarray, np.ndarray]:
        """Batch prediction: ``xq`` (Q, d) -> mean (Q, D), variance (Q,)."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        if xq.shape[1] != self.input_dim:
            raise InputError(f"query has dimension {xq.shape[1]}, expected {self.input_dim}")
        Ks = rbf(xq, self.X, self.kernel)
        mean = Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var = kdiag(xq, self.kernel) + self.kernel.noise_variance - (v * v).sum(0)
        # floor guards round-off only; the exact value is >= noise_variance
        return mean, np.maximum(var, 1e-300)

    def __call__(self, x) -> tuple[np.ndarray, float]:
        x = np.asarray(x, dtype=float)
        if x.ndim > 1:
            return self.predict(x)
        mean, var = self.predict(x[None, :])
        return mean[0], float(var[0])


def gp_posterior(X, Y, kernel: KernelParams, x_query) -> tuple[np.ndarray, float]:
    """Predictive mean (D-vector) and variance at one query (or a batch)."""
    return GPPosterior(X, Y, kernel)(x_query)


def gp_neg_log_likelihood(X: np.ndarray, Y: np.ndarray, theta: np.ndarray, linear_weight: float = 0.0):
    """-log p(Y | X, theta) for a D-output GP sharing one kernel.

    ``theta`` = log(signal_variance, length_scale, noise_variance).

    Raises NumericalError where the Gram matrix is not numerically positive
    definite without jitter, so optimizers treat such points as infeasible.

    Returns:
        value, dX (N, d) through the kernel only, dtheta (3,), alpha (N, D).
    """
    N, D = Y.shape
    theta = np.asarray(theta, dtype=float)
    # beyond this the squared length scale or its reciprocal leaves double range
    if not np.all(np.abs(theta) < MAX_LOG_HYPER):
        raise NumericalError("hyperparameters out of floating-point range")
    kernel = KernelParams.from_log(theta, linear_weight)
    s2, ell, beta = kernel.signal_variance, kernel.length_scale, kernel.noise_variance
    r2 = sq_dists(X, X)
    Kf = s2 * np.exp(-0.5 * r2 / ell ** 2)
    K = Kf + beta * np.eye(N)
    if linear_weight:
        K = K + linear_weight * X @ X.T
    L, jitter = jitter_cholesky(K)
    if jitter:
        # the jittered value would not match the analytic gradient
        raise NumericalError(f"Gram matrix needed jitter {jitter:g}; objective undefined here")
    Kinv = cho_solve((L, True), np.eye(N))
    alpha = Kinv @ Y
    logdet = 2.0 * np.log(np.diag(L)).sum()
    value = 0.5 * D * logdet + 0.5 * float((Y * alpha).sum()) + 0.5 * N * D * math.log(2 * math.pi)

    G = 0.5 * (D * Kinv - alpha @ alpha.T)
    M = G * Kf
    dtheta = np.array([M.sum(), (M * r2).sum() / ell ** 2, beta * np.trace(G)])
    dX = -(2.0 / ell ** 2) * (M.sum(1)[:, None] * X - M @ X)
    if linear_weight:
        dX = dX + 2.0 * linear_weight * G @ X
    return value, dX, dtheta, alpha
