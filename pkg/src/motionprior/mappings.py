"""GP regression mappings between tagged spaces (features, latents, poses)."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InputError, WiringError
from .latent.gp import GPPosterior, gp_neg_log_likelihood
from .latent.kernels import KernelParams
from .latent.optimize import minimize_lbfgs

FEATURE = "feature"
POSE = "pose"
POSE_LATENT = "pose_latent"


@dataclass
class GpMapping:
    """GP posterior from ``input_space_tag`` (p-dim) to ``output_space_tag`` (q-dim).

    ``target_mean`` is subtracted from targets before fitting and added back on
    prediction; it is zero unless the mapping was fit with ``center=True``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    kernel: KernelParams
    input_space_tag: str
    output_space_tag: str
    target_mean: np.ndarray | None = None
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        t = np.asarray(self.targets, dtype=float)
        self.targets = t.reshape(-1, 1) if t.ndim == 1 else t
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise InputError("inputs and targets need the same number of rows")
        if not self.input_space_tag or not self.output_space_tag:
            raise InputError("space tags must be nonempty")
        if self.target_mean is None:
            self.target_mean = np.zeros(self.targets.shape[1])
        self.target_mean = np.asarray(self.target_mean, dtype=float)

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def q(self) -> int:
        return self.targets.shape[1]

    @cached_property
    def posterior(self) -> GPPosterior:
        return GPPosterior(self.inputs, self.targets - self.target_mean, self.kernel)

    def lipschitz_bound(self) -> float:
        """Upper bound on the Lipschitz constant of each output of the mean."""
        a = np.abs(self.posterior.alpha).sum(0).max()
        return float(a * self.kernel.signal_variance / (self.kernel.length_scale * np.sqrt(np.e)))

    def to_dict(self) -> dict:
        return {"type": "gp_mapping", "tags": [self.input_space_tag, self.output_space_tag],
                "inputs": self.inputs.tolist(), "targets": self.targets.tolist(),
                "target_mean": self.target_mean.tolist(), "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GpMapping":
        return cls(np.array(d["inputs"], dtype=float), np.array(d["targets"], dtype=float),
                   KernelParams.from_dict(d["kernel"]), d["tags"][0], d["tags"][1],
                   np.array(d["target_mean"], dtype=float))


def _hyper_objective(theta, X, Y):
    v, _, dtheta, _ = gp_neg_log_likelihood(X, Y, theta)
    return v + 0.5 * float(theta @ theta), dtheta + theta


def mapping_neg_log_posterior(theta, X, Y):
    """Hyperparameter objective of :func:`fit_mapping` (value, gradient)."""
    return _hyper_objective(np.asarray(theta, dtype=float), X, Y)


def fit_mapping(X_src, X_dst, tags: tuple[str, str] = ("input", "output"), kernel: KernelParams | None = None,
                optimize: bool = True, center: bool = False, max_iters: int = 500) -> GpMapping:
    """Fit a GP mapping; hyperparameters maximize the marginal likelihood under unit log-normal priors."""
    X = np.atleast_2d(np.asarray(X_src, dtype=float))
    Y = np.asarray(X_dst, dtype=float)
    Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
    if X.shape[0] < 2:
        raise InputError("a mapping needs at least 2 training pairs")
    if X.shape[0] != Y.shape[0]:
        raise InputError(f"{X.shape[0]} source rows but {Y.shape[0]} destination rows")
    mean = Y.mean(0) if center else np.zeros(Y.shape[1])
    Yc = Y - mean
    if kernel is None:
        v = float(Yc.var(0).mean() + (Yc.mean(0) ** 2).mean())
        v = v if v > 1e-12 else 1.0
        spread = float(np.sqrt(np.median(np.var(X, 0)))) or 1.0
        kernel = KernelParams(signal_variance=v, length_scale=spread, noise_variance=1e-3 * v)
    history: list[float] = []
    if optimize:
        res = minimize_lbfgs(lambda th: _hyper_objective(th, X, Yc), kernel.to_log(), max_iters=max_iters)
        kernel = KernelParams.from_log(res.x)
        history = [-h for h in res.history]
    return GpMapping(X, Y, kernel, tags[0], tags[1], mean, history=history)


def apply_mapping(m: GpMapping, x):
    """GP posterior mean (q-vector, or (Q, q) for a batch) and variance."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.p or not np.all(np.isfinite(x)):
        raise InputError(f"mapping expects finite {m.p}-vectors, got shape {x.shape}")
    mean, var = m.posterior(x)
    return mean + m.target_mean, var


def check_tags(m: GpMapping, input_tag: str, output_tag: str) -> None:
    if (m.input_space_tag, m.output_space_tag) != (input_tag, output_tag):
        raise WiringError(f"mapping goes {m.input_space_tag}->{m.output_space_tag}, "
                          f"needed {input_tag}->{output_tag}")


def compose(mappings: Sequence[GpMapping], x) -> np.ndarray:
    """Push ``x`` through a chain of mappings (means only), enforcing tag continuity."""
    for a, b in zip(mappings, mappings[1:]):
        if a.output_space_tag != b.input_space_tag:
            raise WiringError(f"cannot feed {a.output_space_tag} output into {b.input_space_tag} input")
    for m in mappings:
        x = apply_mapping(m, x)[0]
    return x


def feature_to_pose(m: GpMapping, f) -> np.ndarray:
    """Pose angles predicted from a feature vector by a feature->pose mapping."""
    check_tags(m, FEATURE, POSE)
    return apply_mapping(m, f)[0]
