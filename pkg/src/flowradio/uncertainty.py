"""Generative ensembles and their per-cell variance."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import GridShape, ObservationSet, RadioMap
from .pnp import PnPConfig, reconstruct_batch

__all__ = ["Ensemble", "UncertaintyMap", "generate_ensemble", "variance_map", "obs_fingerprint"]


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: np.ndarray  # (M, rows, cols), dB
    seeds: tuple[int, ...]
    fingerprint: str = ""

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim != 3:
            raise ValueError(f"ensemble members must be (M, rows, cols), got {members.shape}")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def __len__(self) -> int:
        return len(self.members)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.members.shape[1:])

    def mean(self) -> RadioMap:
        return RadioMap(self.shape, self.members.mean(axis=0))

    def maps(self) -> list[RadioMap]:
        return [RadioMap(self.shape, m) for m in self.members]


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(self.shape.as_tuple())
        if not np.all(np.isfinite(values)) or (values < 0).any():
            raise ValueError("uncertainty values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, arr) -> "UncertaintyMap":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(GridShape(*arr.shape), arr)


def obs_fingerprint(obs: ObservationSet) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(obs.cells, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(obs.values, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def generate_ensemble(field, obs: ObservationSet, pnp_config: PnPConfig | None = None,
                      M: int = 5, base_seed: int = 0) -> Ensemble:
    """``M`` reconstructions seeded ``base_seed, ..., base_seed + M - 1``."""
    if M < 2:
        raise ValueError("an ensemble needs at least two members")
    seeds = [int(base_seed) + m for m in range(M)]
    try:
        members = reconstruct_batch(field, obs, pnp_config, seeds)
    except FloatingPointError as exc:
        raise FloatingPointError(f"ensemble with member seeds {seeds}: {exc}") from exc
    return Ensemble(members, tuple(seeds), obs_fingerprint(obs))


def variance_map(e: Ensemble) -> UncertaintyMap:
    """Population variance across members, per cell."""
    if len(e) < 2:
        raise ValueError("variance needs at least two members")
    # shifting by the first member keeps identical members at exactly zero
    shifted = e.members - e.members[0]
    dev = shifted - shifted.mean(axis=0)
    return UncertaintyMap(e.shape, np.mean(dev * dev, axis=0))
