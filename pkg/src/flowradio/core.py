"""Grid geometry, radio-map values, the sampling operator and metrics.

Radio maps are stored in dB. Linear power only appears inside :func:`nmse`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "GridShape",
    "Cell",
    "RadioMap",
    "ObservationSet",
    "AffineTransform",
    "db_to_linear",
    "linear_to_db",
    "nmse",
    "apply_degradation",
    "degradation_adjoint",
    "manhattan",
    "normalize",
    "denormalize",
]


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    def __post_init__(self):
        for name in ("rows", "cols"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise TypeError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.rows < 2 or self.cols < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def as_tuple(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def contains(self, cell: Sequence[int]) -> bool:
        i, j = cell
        return 0 <= i < self.rows and 0 <= j < self.cols

    def check_cell(self, cell: Sequence[int]) -> "Cell":
        if not self.contains(cell):
            raise ValueError(f"cell {tuple(cell)} outside {self.rows}x{self.cols} grid")
        return Cell(int(cell[0]), int(cell[1]))

    def flat_index(self, cell: Sequence[int]) -> int:
        return int(cell[0]) * self.cols + int(cell[1])

    def cell_at(self, flat: int) -> "Cell":
        return Cell(*divmod(int(flat), self.cols))


class Cell(NamedTuple):
    i: int
    j: int


def _shape_of(shape) -> GridShape:
    if isinstance(shape, GridShape):
        return shape
    return GridShape(*shape)


@dataclass(frozen=True, eq=False)
class RadioMap:
    """Dense ``rows x cols`` grid of RSS values in dB."""

    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        shape = _shape_of(self.shape)
        values = np.array(self.values, dtype=np.float64)
        if values.size != shape.size:
            raise ValueError(
                f"expected {shape.size} values for a {shape.rows}x{shape.cols} grid, "
                f"got {values.size}"
            )
        values = values.reshape(shape.rows, shape.cols)
        if not np.all(np.isfinite(values)):
            raise ValueError("radio map values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, arr) -> "RadioMap":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(GridShape(*arr.shape), arr)

    def __getitem__(self, cell) -> float:
        return float(self.values[cell[0], cell[1]])

    def __add__(self, c: float) -> "RadioMap":
        return RadioMap(self.shape, self.values + c)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Measured cells in chronological order, with their dB values.

    ``entries`` order defines the measurement vector ``y``; the degradation
    operator and its adjoint both follow it.
    """

    shape: GridShape
    cells: np.ndarray = field(default=None)
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = _shape_of(self.shape)
        cells = np.zeros((0, 2), dtype=np.int64) if self.cells is None else self.cells
        cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
        values = np.zeros(0) if self.values is None else self.values
        values = np.array(values, dtype=np.float64).reshape(-1)
        if len(cells) != len(values):
            raise ValueError(f"{len(cells)} cells but {len(values)} values")
        if len(cells):
            if (cells < 0).any() or (cells[:, 0] >= shape.rows).any() or (cells[:, 1] >= shape.cols).any():
                raise ValueError("observation cell outside the grid")
            flat = cells[:, 0] * shape.cols + cells[:, 1]
            if len(np.unique(flat)) != len(flat):
                raise ValueError("duplicate observation cells")
        if not np.all(np.isfinite(values)):
            raise ValueError("observed values must be finite")
        cells.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_entries(cls, shape, entries: Iterable[tuple[Sequence[int], float]]) -> "ObservationSet":
        entries = list(entries)
        cells = [tuple(c) for c, _ in entries]
        values = [v for _, v in entries]
        return cls(shape, np.array(cells, dtype=np.int64).reshape(-1, 2), values)

    @classmethod
    def from_truth(cls, truth: RadioMap, cells) -> "ObservationSet":
        cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
        return cls(truth.shape, cells, truth.values[cells[:, 0], cells[:, 1]])

    def __len__(self) -> int:
        return len(self.values)

    @property
    def entries(self) -> list[tuple[Cell, float]]:
        return [(Cell(int(i), int(j)), float(v)) for (i, j), v in zip(self.cells, self.values)]

    @property
    def flat_indices(self) -> np.ndarray:
        return self.cells[:, 0] * self.shape.cols + self.cells[:, 1]

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.shape.as_tuple(), dtype=bool)
        m[self.cells[:, 0], self.cells[:, 1]] = True
        return m

    def extend(self, cells, values) -> "ObservationSet":
        cells = np.array(cells, dtype=np.int64).reshape(-1, 2)
        return ObservationSet(
            self.shape,
            np.concatenate([self.cells, cells]),
            np.concatenate([self.values, np.asarray(values, dtype=np.float64).reshape(-1)]),
        )

    def head(self, n: int) -> "ObservationSet":
        """The first ``n`` measurements (chronological prefix)."""
        return ObservationSet(self.shape, self.cells[:n], self.values[:n])

    def mapped(self, transform: "AffineTransform") -> "ObservationSet":
        return ObservationSet(self.shape, self.cells, transform.apply(self.values))


@dataclass(frozen=True)
class AffineTransform:
    """``x -> scale * x + offset`` with exact inverse."""

    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or not np.isfinite(self.offset):
            raise ValueError("transform parameters must be finite")
        if self.scale == 0:
            raise ValueError("transform scale must be non-zero")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_range(cls, lo: float, hi: float) -> "AffineTransform":
        """Map ``[lo, hi]`` onto ``[-1, 1]``."""
        if not hi > lo:
            raise ValueError(f"degenerate value range [{lo}, {hi}]")
        scale = 2.0 / (hi - lo)
        return cls(scale, -1.0 - lo * scale)

    def apply(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def invert(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": self.offset}


def db_to_linear(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("dB values must be finite")
    out = np.power(10.0, x / 10.0)
    return float(out) if out.ndim == 0 else out


def linear_to_db(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("linear power must be positive and finite")
    out = 10.0 * np.log10(p)
    return float(out) if out.ndim == 0 else out


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, RadioMap) else np.asarray(m, dtype=np.float64)


def nmse(truth, estimate) -> float:
    """Normalized squared error of two dB maps, measured in linear power."""
    m, z = _values(truth), _values(estimate)
    if m.shape != z.shape:
        raise ValueError(f"shape mismatch: {m.shape} vs {z.shape}")
    pm, pz = db_to_linear(m), db_to_linear(z)
    den = float(np.sum(pm * pm))
    if den <= 0.0:
        raise ValueError("truth map has zero linear-power norm")
    return float(np.sum((pm - pz) ** 2)) / den


def apply_degradation(z, obs: ObservationSet) -> np.ndarray:
    """Values of ``z`` at the observed cells, in measurement order.

    ``z`` may be a RadioMap, a 2-D array, or a stack ``(..., rows, cols)``.
    """
    arr = _values(z)
    if arr.shape[-2:] != obs.shape.as_tuple():
        raise ValueError(f"shape mismatch: map {arr.shape[-2:]} vs observations {obs.shape.as_tuple()}")
    return arr[..., obs.cells[:, 0], obs.cells[:, 1]]


def degradation_adjoint(y, obs: ObservationSet) -> np.ndarray:
    """Scatter a measurement-space vector back onto the grid (zeros elsewhere)."""
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros(y.shape[:-1] + obs.shape.as_tuple())
    out[..., obs.cells[:, 0], obs.cells[:, 1]] = y
    return out


def manhattan(a: Sequence[int], b: Sequence[int]) -> int:
    return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1]))


def normalize(z: RadioMap, t: AffineTransform) -> RadioMap:
    return RadioMap(z.shape, t.apply(z.values))


def denormalize(z: RadioMap, t: AffineTransform) -> RadioMap:
    return RadioMap(z.shape, t.invert(z.values))
