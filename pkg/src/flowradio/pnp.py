"""Plug-and-play reconstruction driven by the flow-matching denoiser.

Each outer step ``k`` sits at time ``t_k = k / K`` on the generative path and
runs ``U_k`` inner refinements of

    data-consistency gradient step -> path projection onto (Z0, t_k) -> denoise

All arithmetic happens in model space; observations are mapped in once and
the final estimate is mapped back to dB.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .core import GridShape, ObservationSet, RadioMap
from .flowmodel.field import denoise
from .validation import check_same_shape

__all__ = [
    "PnPConfig",
    "ReconstructionRun",
    "PnPReconstructor",
    "refinement_schedule",
    "data_consistency_step",
    "data_fidelity",
    "path_projection",
    "reconstruct",
    "initial_noise",
]

FIDELITY_CONVENTIONS = ("half", "full")
PROJECTION_NOISE = ("initial", "fresh")


@dataclass(frozen=True)
class PnPConfig:
    """Outer steps, step size and the two-level refinement schedule.

    ``refine_threshold`` is the first outer step using ``refine_high``
    inner iterations; ``None`` means ``round(0.92 * n_steps)`` (46 for 50).
    ``fidelity`` selects ``F = 1/2 ||Hz - y||^2`` ("half") or
    ``F = ||Hz - y||^2`` ("full"). ``projection_noise`` is "initial" to
    project onto the run's own ``Z0`` every time, or "fresh" to draw a new
    source sample for each projection (a variant, not the default).
    """

    n_steps: int = 50
    step_size: float = 2.0
    refine_low: int = 1
    refine_high: int = 10
    refine_threshold: int | None = None
    fidelity: str = "half"
    projection_noise: str = "initial"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.step_size >= 0:
            raise ValueError("step_size must be non-negative")
        if self.refine_low < 1 or self.refine_high < 1:
            raise ValueError("refinement counts must be at least 1")
        if self.refine_threshold is not None and not 1 <= self.refine_threshold <= self.n_steps:
            raise ValueError(f"refine_threshold must lie in [1, {self.n_steps}]")
        if self.fidelity not in FIDELITY_CONVENTIONS:
            raise ValueError(f"fidelity must be one of {FIDELITY_CONVENTIONS}")
        if self.projection_noise not in PROJECTION_NOISE:
            raise ValueError(f"projection_noise must be one of {PROJECTION_NOISE}")

    @property
    def threshold(self) -> int:
        if self.refine_threshold is not None:
            return self.refine_threshold
        return int(min(max(round(0.92 * self.n_steps), 1), self.n_steps))

    def to_dict(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "step_size": self.step_size,
            "refine_low": self.refine_low,
            "refine_high": self.refine_high,
            "refine_threshold": self.threshold,
            "fidelity": self.fidelity,
            "projection_noise": self.projection_noise,
        }


@dataclass
class ReconstructionRun:
    seeds: list[int]
    z0: np.ndarray
    fidelity: list[float] = field(default_factory=list)
    change: list[float] = field(default_factory=list)


def refinement_schedule(k: int, config: PnPConfig) -> int:
    if not 1 <= k <= config.n_steps:
        raise ValueError(f"outer index {k} outside [1, {config.n_steps}]")
    return config.refine_low if k < config.threshold else config.refine_high


def _residual(z, obs: ObservationSet) -> np.ndarray:
    return z[..., obs.cells[:, 0], obs.cells[:, 1]] - obs.values


def data_fidelity(z, obs: ObservationSet, fidelity: str = "half") -> float | np.ndarray:
    r = _residual(np.asarray(z, dtype=np.float64), obs)
    f = np.sum(r * r, axis=-1)
    return 0.5 * f if fidelity == "half" else f


def data_consistency_step(z, obs: ObservationSet, step_size: float, fidelity: str = "half") -> np.ndarray:
    """Gradient step on the data-fidelity term; unobserved cells are untouched.

    ``z`` may be a single map or a stack ``(..., rows, cols)``; ``obs`` holds
    values in the same space as ``z``.
    """
    z = np.array(z.values if isinstance(z, RadioMap) else z, dtype=np.float64)
    if z.shape[-2:] != obs.shape.as_tuple():
        raise ValueError(f"shape mismatch: map {z.shape[-2:]} vs observations {obs.shape.as_tuple()}")
    if len(obs) == 0:
        return z
    r = _residual(z, obs)
    scale = step_size if fidelity == "half" else 2.0 * step_size
    z[..., obs.cells[:, 0], obs.cells[:, 1]] -= scale * r
    return z


def path_projection(z_hat, z0, t: float) -> np.ndarray:
    """Pull an estimate back onto the straight path from ``z0`` at time ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return t * np.asarray(z_hat, dtype=np.float64) + (1.0 - t) * np.asarray(z0, dtype=np.float64)


def initial_noise(shape: GridShape, seed: int) -> np.ndarray:
    """Source sample for one reconstruction: unit Gaussian per cell."""
    return np.random.default_rng(int(seed)).standard_normal(shape.as_tuple())


def _run(field, obs_model: ObservationSet, z0: np.ndarray, config: PnPConfig, run: ReconstructionRun | None,
         seeds=()):
    z = z0.copy()
    K = config.n_steps
    # one stream per member keeps batched and single runs identical
    streams = [np.random.default_rng([s, 1]) for s in seeds] if config.projection_noise == "fresh" else None
    for k in range(1, K + 1):
        t = k / K
        prev = z
        for _ in range(refinement_schedule(k, config)):
            z_hat = data_consistency_step(z, obs_model, config.step_size, config.fidelity)
            anchor = z0 if streams is None else np.stack([g.standard_normal(z0.shape[1:]) for g in streams])
            z = denoise(field, path_projection(z_hat, anchor, t), t)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite reconstruction at outer step {k}")
        if run is not None:
            run.fidelity.append(np.atleast_1d(data_fidelity(z, obs_model, config.fidelity)).tolist())
            run.change.append(np.sqrt(np.sum((z - prev) ** 2, axis=(-2, -1))).tolist())
    return z


def reconstruct(field, obs: ObservationSet, config: PnPConfig | None = None, seed: int = 0,
                run: ReconstructionRun | None = None) -> RadioMap:
    """One PnP reconstruction from the source sample drawn with ``seed``."""
    return RadioMap(obs.shape, reconstruct_batch(field, obs, config, [seed], run)[0])


def reconstruct_batch(field, obs: ObservationSet, config: PnPConfig | None, seeds,
                      run: ReconstructionRun | None = None) -> np.ndarray:
    """Independent reconstructions for each seed, evaluated as one batch.

    Returns dB maps of shape ``(len(seeds), rows, cols)``. Member ``m`` is
    bitwise identical to ``reconstruct(field, obs, config, seeds[m])``.
    """
    config = config or PnPConfig()
    check_same_shape(field.shape_, obs.shape, "observation")
    seeds = [int(s) for s in seeds]
    z0 = np.stack([initial_noise(obs.shape, s) for s in seeds])
    if run is not None:
        run.seeds, run.z0 = seeds, z0
    obs_model = obs.mapped(field.transform_)
    z = _run(field, obs_model, z0, config, run, seeds)
    return field.transform_.invert(z)


class PnPReconstructor(BaseEstimator):
    """Estimator wrapper: ``predict(obs)`` returns a dB :class:`RadioMap`.

    The velocity field plays the role of an already-fitted prior, so
    :meth:`fit` only checks it.
    """

    def __init__(self, field=None, n_steps=50, step_size=2.0, refine_low=1, refine_high=10,
                 refine_threshold=None, fidelity="half", projection_noise="initial", random_state=0):
        self.field = field
        self.n_steps = n_steps
        self.step_size = step_size
        self.refine_low = refine_low
        self.refine_high = refine_high
        self.refine_threshold = refine_threshold
        self.fidelity = fidelity
        self.projection_noise = projection_noise
        self.random_state = random_state

    @property
    def config(self) -> PnPConfig:
        return PnPConfig(self.n_steps, self.step_size, self.refine_low, self.refine_high,
                         self.refine_threshold, self.fidelity, self.projection_noise)

    def fit(self, X=None, y=None):
        if self.field is None or not hasattr(self.field, "theta_"):
            raise ValueError("PnPReconstructor needs a fitted VelocityField")
        self.config_ = self.config
        return self

    def predict(self, obs: ObservationSet) -> RadioMap:
        if not hasattr(self, "config_"):
            self.fit()
        return reconstruct(self.field, obs, self.config_, self.random_state)
