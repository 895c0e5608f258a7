"""Gaussian process dynamical model (MAP).

The latent dynamics GP maps x_{t-1} to the increment x_t - x_{t-1}, so the
prior mean of the next latent is the current one ("identity + RBF").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import InputError
from .gp import GPPosterior, gp_neg_log_likelihood
from .gplvm import LatentModel, initial_kernel, latent_to_observation, pca_init
from .kernels import KernelParams
from .optimize import minimize_lbfgs


@dataclass
class GpdmModel:
    base: LatentModel
    dyn_kernel: KernelParams
    dyn_pairs: np.ndarray  # (P, 2) row indices (t-1, t)
    seq_lengths: list[int] = field(default_factory=list)
    seq_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.dyn_pairs = np.asarray(self.dyn_pairs, dtype=int).reshape(-1, 2)
        if not self.seq_lengths:
            self.seq_lengths = [self.base.N]
        if sum(self.seq_lengths) != self.base.N:
            raise InputError("sequence lengths must sum to the number of latent points")
        if not self.seq_labels:
            self.seq_labels = [""] * len(self.seq_lengths)

    @property
    def X(self) -> np.ndarray:
        return self.base.X

    @property
    def d(self) -> int:
        return self.base.d

    @property
    def D(self) -> int:
        return self.base.D

    def seq_rows(self, k: int) -> np.ndarray:
        start = sum(self.seq_lengths[:k])
        return np.arange(start, start + self.seq_lengths[k])

    def rows_for_label(self, label: str) -> np.ndarray:
        parts = [self.seq_rows(k) for k, lab in enumerate(self.seq_labels) if lab == label]
        return np.concatenate(parts) if parts else np.array([], dtype=int)

    @cached_property
    def dyn_posterior(self) -> GPPosterior:
        Xin = self.X[self.dyn_pairs[:, 0]]
        return GPPosterior(Xin, self.X[self.dyn_pairs[:, 1]] - Xin, self.dyn_kernel)

    def to_dict(self) -> dict:
        out = self.base.to_dict()
        out.update({"type": "gpdm", "dyn_kernel": self.dyn_kernel.to_dict(),
                    "dyn_pairs": self.dyn_pairs.tolist(), "seq_lengths": list(self.seq_lengths),
                    "seq_labels": list(self.seq_labels)})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GpdmModel":
        return cls(LatentModel.from_dict(d), KernelParams.from_dict(d["dyn_kernel"]),
                   np.array(d["dyn_pairs"], dtype=int), list(d["seq_lengths"]), list(d["seq_labels"]))


def sequence_pairs(lengths: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive-frame pairs within each sequence, and the first row of each."""
    pairs, firsts, start = [], [], 0
    for n in lengths:
        firsts.append(start)
        pairs.extend((start + t - 1, start + t) for t in range(1, n))
        start += n
    return np.array(pairs, dtype=int).reshape(-1, 2), np.array(firsts, dtype=int)


def gpdm_terms(params: np.ndarray, Y: np.ndarray, d: int, pairs: np.ndarray, firsts: np.ndarray,
               dyn_weight: float = 1.0, topo_pairs: np.ndarray | None = None, topo_weight: float = 0.0,
               linear_weight: float = 0.0):
    """Negative log posterior broken into terms, plus its flat gradient.

    ``params`` = [X.ravel(), 3 observation log-params, 3 dynamics log-params].
    Terms: ``obs`` (observation GP), ``dyn`` (dynamics GP, already scaled by
    ``dyn_weight``), ``prior_x`` (unit Gaussian on each sequence's first
    latent), ``hyper`` (unit Gaussian on all log-params), ``topo``
    (topo_weight * sum of squared latent distances over ``topo_pairs``).
    """
    N = Y.shape[0]
    X = params[: N * d].reshape(N, d)
    th_obs = params[N * d: N * d + 3]
    th_dyn = params[N * d + 3: N * d + 6]

    obs, dX, dth_obs, _ = gp_neg_log_likelihood(X, Y, th_obs)
    dX = dX.copy()

    dyn = 0.0
    dth_dyn = np.zeros(3)
    if dyn_weight and len(pairs):
        Xin = X[pairs[:, 0]]
        delta = X[pairs[:, 1]] - Xin
        v, dXin, dth, A = gp_neg_log_likelihood(Xin, delta, th_dyn, linear_weight)
        dyn = dyn_weight * v
        dth_dyn = dyn_weight * dth
        np.add.at(dX, pairs[:, 0], dyn_weight * (dXin - A))
        np.add.at(dX, pairs[:, 1], dyn_weight * A)

    Xf = X[firsts]
    prior_x = 0.5 * float((Xf * Xf).sum())
    np.add.at(dX, firsts, Xf)

    hyper = 0.5 * float(th_obs @ th_obs + th_dyn @ th_dyn)

    topo = 0.0
    if topo_weight and topo_pairs is not None and len(topo_pairs):
        tp = np.asarray(topo_pairs, dtype=int).reshape(-1, 2)
        diff = X[tp[:, 0]] - X[tp[:, 1]]
        topo = topo_weight * float((diff * diff).sum())
        np.add.at(dX, tp[:, 0], 2 * topo_weight * diff)
        np.add.at(dX, tp[:, 1], -2 * topo_weight * diff)

    terms = {"obs": obs, "dyn": dyn, "prior_x": prior_x, "hyper": hyper, "topo": topo}
    grad = np.concatenate([dX.ravel(), dth_obs + th_obs, dth_dyn + th_dyn])
    return terms, grad


def gpdm_objective(params, Y, d, pairs, firsts, **kw):
    terms, grad = gpdm_terms(params, Y, d, pairs, firsts, **kw)
    return sum(terms.values()), grad


def _as_block(s) -> np.ndarray:
    for attr in ("frames", "values"):
        if hasattr(s, attr):
            return np.atleast_2d(getattr(s, attr))
    return np.atleast_2d(np.asarray(s, dtype=float))


def gpdm_fit(sequences, d: int = 3, max_iters: int = 500, seed: int = 0, labels: Sequence[str] | None = None,
             dyn_weight: float = 1.0, topo_pairs=None, topo_weight: float = 0.0, linear_weight: float = 0.0,
             gtol: float = 1e-5) -> GpdmModel:
    """Fit a MAP GPDM over one or more sequences (arrays or sequence objects).

    ``topo_pairs`` are (row, row) indices into the stacked frames whose
    latents are pulled together with weight ``topo_weight``.
    """
    blocks = [_as_block(s) for s in sequences]
    if not blocks:
        raise InputError("need at least one sequence")
    if any(b.shape[0] < 3 for b in blocks):
        raise InputError("every sequence needs at least 3 frames")
    if len({b.shape[1] for b in blocks}) != 1:
        raise InputError("all sequences must share one data dimension")
    if labels is None:
        labels = [getattr(s, "action_label", "") for s in sequences]
    if len(labels) != len(blocks):
        raise InputError("one label per sequence")
    Y = np.vstack(blocks)
    if not np.all(np.isfinite(Y)):
        raise InputError("GPDM input contains non-finite values")
    N, D = Y.shape
    if not 1 <= d < D:
        raise InputError(f"latent dimension must satisfy 1 <= d < D={D}, got {d}")
    lengths = [b.shape[0] for b in blocks]
    pairs, firsts = sequence_pairs(lengths)
    mean = Y.mean(0)
    Yc = Y - mean
    X0 = pca_init(Yc, d, seed)
    k_obs = initial_kernel(Yc)
    d0 = X0[pairs[:, 1]] - X0[pairs[:, 0]]
    dv = float(d0.var(0).mean()) if d0.size else 0.0
    dv = dv if dv > 1e-6 else 1e-2
    k_dyn = KernelParams(signal_variance=dv, length_scale=1.0, noise_variance=0.1 * dv, linear_weight=linear_weight)
    tp = None if topo_pairs is None else np.asarray(topo_pairs, dtype=int).reshape(-1, 2)
    kw = dict(dyn_weight=dyn_weight, topo_pairs=tp, topo_weight=topo_weight, linear_weight=linear_weight)
    x0 = np.concatenate([X0.ravel(), k_obs.to_log(), k_dyn.to_log()])
    res = minimize_lbfgs(lambda p: gpdm_objective(p, Yc, d, pairs, firsts, **kw), x0, max_iters=max_iters, gtol=gtol)
    X = res.x[: N * d].reshape(N, d)
    base = LatentModel(X, Yc, mean, KernelParams.from_log(res.x[N * d: N * d + 3]),
                       history=[-h for h in res.history])
    dyn = KernelParams.from_log(res.x[N * d + 3:], linear_weight)
    return GpdmModel(base, dyn, pairs, lengths, list(labels))


def dynamics_step(model: GpdmModel, x):
    """Predicted next latent (x + mean increment) and scalar variance; batches allowed."""
    x = np.asarray(x, dtype=float)
    mean, var = model.dyn_posterior(x)
    return x + mean, var


def gpdm_latent_to_observation(model: GpdmModel, x):
    return latent_to_observation(model.base, x)
