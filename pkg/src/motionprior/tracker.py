"""Latent-space particle filter over one or more GPDM action models.

Particles are stored column-wise (one array per field) so every step is a
vectorized operation per model. A particle that is traversing a transition
path keeps its source ``model_id`` until it reaches the final waypoint, but
its latent point already lives in the destination model's space; the
"space model" of a particle is therefore the path's destination while it is
on a path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateWeightsError, InputError, WiringError
from .latent.gpdm import dynamics_step
from .latent.gplvm import LatentModel, latent_to_observation
from .mappings import POSE_LATENT, GpMapping, apply_mapping
from .skeleton import MotionSequence
from .transitions import UNIFIED, ModelBank

logger = logging.getLogger(__name__)

# exp(-708) is the smallest double likelihood before underflow to 0
LOG_UNDERFLOW = -708.0


@dataclass
class TrackerConfig:
    n_particles: int = 500
    process_noise_sd: float = 0.05
    obs_noise_sd: float = 0.3
    resample_threshold: float = 0.5
    transfer_radius: float | None = None  # None: default_transfer_radius(bank)
    transfer_prob: float = 0.5
    init_top_k: int = 10
    transfer_cooldown: int = 2  # frames after arriving via a path before a particle may transfer again
    predictive_variance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise InputError("n_particles must be >= 1")
        if not (self.process_noise_sd > 0 and self.obs_noise_sd > 0):
            raise InputError("noise levels must be positive")
        if not 0 < self.resample_threshold <= 1:
            raise InputError("resample_threshold must lie in (0, 1]")
        if self.transfer_radius is not None and self.transfer_radius < 0:
            raise InputError("transfer_radius must be nonnegative")
        if not 0 <= self.transfer_prob <= 1:
            raise InputError("transfer_prob must lie in [0, 1]")


@dataclass(frozen=True)
class Particle:
    model_id: int
    x: np.ndarray
    weight: float
    path_state: tuple[int, int] | None = None


@dataclass
class ParticleSet:
    model_id: np.ndarray  # (N,) int
    x: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,)
    path_id: np.ndarray  # (N,) int, -1 when free
    path_pos: np.ndarray  # (N,) int waypoint index, -1 when free
    rng: np.random.Generator = field(repr=False)
    cooldown: np.ndarray | None = None  # (N,) frames left before transfer is allowed again

    def __post_init__(self):
        if self.cooldown is None:
            self.cooldown = np.zeros(len(self.weights), dtype=int)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def __getitem__(self, i: int) -> Particle:
        ps = None if self.path_id[i] < 0 else (int(self.path_id[i]), int(self.path_pos[i]))
        return Particle(int(self.model_id[i]), self.x[i].copy(), float(self.weights[i]), ps)

    def copy(self) -> "ParticleSet":
        return replace(self, model_id=self.model_id.copy(), x=self.x.copy(), weights=self.weights.copy(),
                       path_id=self.path_id.copy(), path_pos=self.path_pos.copy(), cooldown=self.cooldown.copy())

    @property
    def free(self) -> np.ndarray:
        return self.path_id < 0

    def space_model(self, bank: ModelBank) -> np.ndarray:
        """Model whose latent space each particle's ``x`` lives in."""
        out = self.model_id.copy()
        for i in np.flatnonzero(~self.free):
            out[i] = bank.paths[self.path_id[i]].dst_model
        return out

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    @classmethod
    def from_particles(cls, particles: Sequence[Particle], seed: int = 0) -> "ParticleSet":
        n = len(particles)
        if n == 0:
            raise InputError("a particle set must be nonempty")
        return cls(
            model_id=np.array([p.model_id for p in particles], dtype=int),
            x=np.array([p.x for p in particles], dtype=float),
            weights=np.array([p.weight for p in particles], dtype=float),
            path_id=np.array([-1 if p.path_state is None else p.path_state[0] for p in particles], dtype=int),
            path_pos=np.array([-1 if p.path_state is None else p.path_state[1] for p in particles], dtype=int),
            rng=np.random.default_rng(seed),
        )


@dataclass
class Estimate:
    model_id: int
    latent_mean: np.ndarray
    model_mass: np.ndarray  # posterior mass per model


def _check_bank(bank: ModelBank) -> int:
    dims = {m.d for m in bank.models}
    if len(dims) != 1:
        raise InputError("all bank models must share one latent dimension")
    return dims.pop()


def default_transfer_radius(bank: ModelBank) -> float:
    """Half the median distance between temporally adjacent training latents.

    Spatial nearest neighbours are not used: repeated cycles of a periodic
    motion overlap in latent space and would shrink the radius to ~0.
    """
    steps = [np.linalg.norm(m.X[m.dyn_pairs[:, 1]] - m.X[m.dyn_pairs[:, 0]], axis=1) for m in bank.models]
    return 0.5 * float(np.median(np.concatenate(steps)))


def _model_log_likelihood(model, x: np.ndarray, obs: np.ndarray, cfg: TrackerConfig) -> np.ndarray:
    mean, var = latent_to_observation(model.base, x)
    r = mean - obs
    if not cfg.predictive_variance:
        return -(r * r).sum(1) / (2.0 * cfg.obs_noise_sd ** 2)
    s2 = cfg.obs_noise_sd ** 2 + var
    return -(r * r).sum(1) / (2.0 * s2) - 0.5 * model.D * np.log(s2 / cfg.obs_noise_sd ** 2)


def _log_likelihood(x: np.ndarray, model_ids: np.ndarray, bank: ModelBank, obs: np.ndarray,
                    cfg: TrackerConfig) -> np.ndarray:
    ll = np.empty(x.shape[0])
    for m in np.unique(model_ids):
        sel = model_ids == m
        ll[sel] = _model_log_likelihood(bank.models[m], x[sel], obs, cfg)
    return ll


def _allocate(probs: np.ndarray, n: int) -> np.ndarray:
    """Integer counts summing to n, proportional to probs (largest remainder)."""
    raw = probs * n
    counts = np.floor(raw).astype(int)
    rem = raw - counts
    order = np.lexsort((np.arange(len(probs)), -rem))
    counts[order[: n - counts.sum()]] += 1
    return counts


def init_particles(bank: ModelBank, first_obs, cfg: TrackerConfig) -> ParticleSet:
    """Spread particles over models in proportion to each model's best match to ``first_obs``."""
    d = _check_bank(bank)
    obs = np.asarray(first_obs, dtype=float).ravel()
    rng = np.random.default_rng(cfg.seed)
    per_model = []
    for m, model in enumerate(bank.models):
        if obs.shape[0] != model.D:
            raise InputError(f"observation has {obs.shape[0]} features, model {m} expects {model.D}")
        per_model.append(_model_log_likelihood(model, model.X, obs, cfg))
    best = np.array([ll.max() for ll in per_model])
    probs = np.exp(best - best.max())
    probs /= probs.sum()
    counts = _allocate(probs, cfg.n_particles)
    ids, xs = [], []
    for m, (c, ll) in enumerate(zip(counts, per_model)):
        if c == 0:
            continue
        k = min(cfg.init_top_k, ll.shape[0])
        top = np.lexsort((np.arange(ll.shape[0]), -ll))[:k]
        starts = bank.models[m].X[top[np.arange(c) % k]]
        xs.append(starts + rng.normal(0.0, cfg.process_noise_sd, size=starts.shape))
        ids.append(np.full(c, m))
    n = cfg.n_particles
    return ParticleSet(np.concatenate(ids), np.vstack(xs).reshape(n, d), np.full(n, 1.0 / n),
                       np.full(n, -1), np.full(n, -1), rng)


def predict(ps: ParticleSet, bank: ModelBank, cfg: TrackerConfig) -> ParticleSet:
    """Free particles follow the GPDM dynamics plus noise; path particles advance one waypoint."""
    out = ps.copy()
    out.cooldown = np.maximum(out.cooldown - 1, 0)
    free = out.free
    for m in np.unique(out.model_id[free]):
        sel = free & (out.model_id == m)
        mean, _ = dynamics_step(bank.models[m], out.x[sel])
        out.x[sel] = mean + out.rng.normal(0.0, cfg.process_noise_sd, size=mean.shape)
    for i in np.flatnonzero(~free):
        path = bank.paths[out.path_id[i]]
        out.path_pos[i] += 1
        out.x[i] = path.waypoints[out.path_pos[i]]
        if out.path_pos[i] >= len(path) - 1:
            out.model_id[i] = path.dst_model
            out.path_id[i] = -1
            out.path_pos[i] = -1
            out.cooldown[i] = cfg.transfer_cooldown
    return out


def weight(ps: ParticleSet, bank: ModelBank, obs, cfg: TrackerConfig) -> ParticleSet:
    """Multiply weights by the Gaussian observation likelihood and renormalize.

    Raises DegenerateWeightsError when every particle's likelihood underflows.
    """
    obs = np.asarray(obs, dtype=float).ravel()
    D = bank.models[0].D
    if obs.shape[0] != D:
        raise InputError(f"observation has {obs.shape[0]} features, models expect {D}")
    ll = _log_likelihood(ps.x, ps.space_model(bank), bank, obs, cfg)
    if not np.any(np.isfinite(ll)) or ll.max() < LOG_UNDERFLOW:
        raise DegenerateWeightsError("all particle likelihoods underflow")
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + ll
    logw -= logw.max()
    w = np.exp(logw)
    out = ps.copy()
    out.weights = w / w.sum()
    return out


def reset_weights(ps: ParticleSet) -> ParticleSet:
    out = ps.copy()
    out.weights = np.full(len(ps), 1.0 / len(ps))
    return out


def estimate(ps: ParticleSet, bank: ModelBank) -> Estimate:
    """Winning model by summed weight; weighted latent mean over that model's particles only."""
    space = ps.space_model(bank)
    mass = np.bincount(space, weights=ps.weights, minlength=len(bank.models))
    winner = int(np.argmax(mass))
    sel = space == winner
    w = ps.weights[sel]
    mean = (w[:, None] * ps.x[sel]).sum(0) / w.sum()
    return Estimate(winner, mean, mass)


def resample(ps: ParticleSet, cfg: TrackerConfig) -> ParticleSet:
    """Systematic resampling, triggered only when ESS < resample_threshold * N."""
    n = len(ps)
    if ps.ess() >= cfg.resample_threshold * n:
        return ps
    positions = (ps.rng.random() + np.arange(n)) / n
    cdf = np.cumsum(ps.weights)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, positions, side="right")
    return ParticleSet(ps.model_id[idx], ps.x[idx], np.full(n, 1.0 / n), ps.path_id[idx], ps.path_pos[idx], ps.rng,
                       ps.cooldown[idx])


def maybe_transfer(ps: ParticleSet, bank: ModelBank, cfg: TrackerConfig) -> ParticleSet:
    """Free particles near a path's exit point enter that path with probability ``transfer_prob``."""
    if bank.mode == UNIFIED or not bank.paths:
        return ps
    radius = cfg.transfer_radius if cfg.transfer_radius is not None else default_transfer_radius(bank)
    out = ps.copy()
    exits = np.array([p.exit_point for p in bank.paths])
    srcs = np.array([p.src_model for p in bank.paths])
    for i in np.flatnonzero(out.free & (out.cooldown == 0)):
        dist = np.linalg.norm(exits - out.x[i], axis=1)
        dist[srcs != out.model_id[i]] = np.inf
        j = int(np.argmin(dist))
        if dist[j] > radius:
            continue
        if out.rng.random() < cfg.transfer_prob:
            out.path_id[i] = j
            out.path_pos[i] = 0
            out.x[i] = bank.paths[j].waypoints[0]
    return out


@dataclass
class TrackResult:
    estimate: MotionSequence
    model_posterior: np.ndarray  # (T, n_models)
    winners: np.ndarray  # (T,)
    latents: np.ndarray  # (T, d) winning-model latent means
    ess: np.ndarray  # (T,) before resampling
    degenerate: np.ndarray  # (T,) bool

    def metadata_rows(self) -> list[dict]:
        return [{"frame": t, "winner": int(self.winners[t]), "ess": float(self.ess[t]),
                 "degenerate": bool(self.degenerate[t]),
                 **{f"mass_{m}": float(v) for m, v in enumerate(self.model_posterior[t])}}
                for t in range(len(self.winners))]


def _pose_mappings(bank: ModelBank, pose_mapping) -> list[GpMapping]:
    maps = list(pose_mapping) if isinstance(pose_mapping, (list, tuple)) else [pose_mapping] * len(bank.models)
    if len(maps) != len(bank.models):
        raise InputError("need one pose mapping per bank model")
    for m in maps:
        if m.output_space_tag != POSE_LATENT:
            raise WiringError(f"pose mapping must output {POSE_LATENT!r}, got {m.output_space_tag!r}")
    return maps


def track(bank: ModelBank, observations, pose_mapping, pose_model: LatentModel, cfg: TrackerConfig,
          fps: float = 30.0, label: str = "tracked") -> TrackResult:
    """Track a (T, F) observation sequence and return per-frame poses and model posteriors.

    ``pose_mapping`` is one latent->pose-latent GpMapping shared by all models,
    or a list with one per bank model (separate latent spaces need their own).
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    maps = _pose_mappings(bank, pose_mapping)
    d = _check_bank(bank)
    if any(m.p != d for m in maps) or any(m.q != pose_model.d for m in maps):
        raise InputError("pose mapping dimensions do not match the bank and pose model")
    T = obs.shape[0]
    post = np.zeros((T, len(bank.models)))
    winners = np.zeros(T, dtype=int)
    latents = np.zeros((T, d))
    ess = np.zeros(T)
    degenerate = np.zeros(T, dtype=bool)
    pose_latents = np.zeros((T, pose_model.d))
    ps = init_particles(bank, obs[0], cfg)
    for t in range(T):
        if t > 0:
            ps = predict(ps, bank, cfg)
        try:
            ps = weight(ps, bank, obs[t], cfg)
        except DegenerateWeightsError:
            logger.debug("frame %d: degenerate weights, reset to uniform", t)
            ps = reset_weights(ps)
            degenerate[t] = True
        est = estimate(ps, bank)
        post[t], winners[t], latents[t] = est.model_mass, est.model_id, est.latent_mean
        ess[t] = ps.ess()
        pose_latents[t] = apply_mapping(maps[est.model_id], est.latent_mean)[0]
        ps = maybe_transfer(ps, bank, cfg)
        ps = resample(ps, cfg)
    poses = latent_to_observation(pose_model, pose_latents)[0]
    return TrackResult(MotionSequence(poses, fps=fps, action_label=label, subject_id="estimate"),
                       post, winners, latents, ess, degenerate)
