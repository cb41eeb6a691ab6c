"""Synthetic urban radio maps: log-distance path loss, wall losses, shadowing.

Stands in for ray-traced ground truth. Everything is a deterministic function
of ``(GeneratorConfig, seed)``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from .core import AffineTransform, GridShape, RadioMap

__all__ = [
    "Transmitter",
    "Building",
    "Scenario",
    "GeneratorConfig",
    "DatasetManifest",
    "generate_scenario",
    "render_map",
    "build_dataset",
    "load_dataset",
    "scenario_seed",
    "FORMAT_VERSION",
]

FORMAT_VERSION = 1
SPLIT_OFFSETS = {"train": 0, "test": 1 << 19}


@dataclass(frozen=True)
class Transmitter:
    """Point source at continuous ``(row, col)`` grid coordinates."""

    row: float
    col: float
    power: float
    pathloss_exponent: float = 2.0

    def __post_init__(self):
        if not 1.5 <= self.pathloss_exponent <= 4.5:
            raise ValueError(f"path-loss exponent {self.pathloss_exponent} outside [1.5, 4.5]")


@dataclass(frozen=True)
class Building:
    """Axis-aligned footprint ``[row0, row1) x [col0, col1)`` in grid units."""

    row0: int
    col0: int
    row1: int
    col1: int
    wall_loss: float = 6.0


@dataclass(frozen=True)
class GeneratorConfig:
    n_transmitters: int = 7
    power_range: tuple[float, float] = (0.0, 10.0)
    exponent_range: tuple[float, float] = (2.0, 3.0)
    n_buildings: int = 6
    building_size: tuple[int, int] = (3, 7)
    wall_loss: float = 5.0
    shadowing_sigma: float = 2.0
    shadowing_radius: int = 2
    reference_distance: float = 1.0
    floor: float = -150.0

    def __post_init__(self):
        object.__setattr__(self, "power_range", tuple(float(v) for v in self.power_range))
        object.__setattr__(self, "exponent_range", tuple(float(v) for v in self.exponent_range))
        object.__setattr__(self, "building_size", tuple(int(v) for v in self.building_size))
        if self.n_transmitters < 1:
            raise ValueError("need at least one transmitter")
        if self.n_buildings < 0:
            raise ValueError("building count must be non-negative")
        lo, hi = self.exponent_range
        if not (1.5 <= lo <= hi <= 4.5):
            raise ValueError(f"exponent range {self.exponent_range} must lie in [1.5, 4.5]")
        if self.power_range[0] > self.power_range[1]:
            raise ValueError("empty power range")
        if not (1 <= self.building_size[0] <= self.building_size[1]):
            raise ValueError(f"invalid building size range {self.building_size}")
        if self.shadowing_sigma < 0 or self.shadowing_radius < 0:
            raise ValueError("shadowing parameters must be non-negative")
        if self.reference_distance <= 0:
            raise ValueError("reference distance must be positive")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    shape: GridShape
    transmitters: tuple[Transmitter, ...]
    buildings: tuple[Building, ...] = ()
    shadowing_sigma: float = 0.0
    seed: int = 0
    shadowing_radius: int = 0
    reference_distance: float = 1.0
    floor: float = -150.0

    def __post_init__(self):
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        object.__setattr__(self, "buildings", tuple(self.buildings))
        if not self.transmitters:
            raise ValueError("scenario needs at least one transmitter")
        if self.shadowing_sigma < 0:
            raise ValueError("shadowing sigma must be non-negative")
        r, c = self.shape.rows, self.shape.cols
        for b in self.buildings:
            if not (0 <= b.row0 < b.row1 <= r and 0 <= b.col0 < b.col1 <= c):
                raise ValueError(f"building {b} outside the {r}x{c} grid")
        for t in self.transmitters:
            if not (0 <= t.row <= r and 0 <= t.col <= c):
                raise ValueError(f"transmitter {t} outside the {r}x{c} grid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape.as_tuple())
        return d


def generate_scenario(shape: GridShape, params: GeneratorConfig | None = None, seed: int = 0) -> Scenario:
    """Draw buildings and transmitters for one scene.

    Buildings never cover more than half the grid; transmitters are placed
    outside them. Raises ``ValueError`` when the building sizes cannot satisfy
    that.
    """
    params = params or GeneratorConfig()
    shape = shape if isinstance(shape, GridShape) else GridShape(*shape)
    rng = np.random.default_rng(seed)
    lo, hi = params.building_size
    if params.n_buildings and min(lo, shape.rows) * min(lo, shape.cols) > shape.size // 2:
        raise ValueError(
            f"building sizes {params.building_size} cannot fit on a "
            f"{shape.rows}x{shape.cols} grid while leaving room for transmitters"
        )
    buildings = []
    occ = np.zeros(shape.as_tuple(), dtype=bool)
    for _ in range(params.n_buildings):
        # redraw footprints that would leave less than half the grid open;
        # give up on this building after a few tries
        for _attempt in range(20):
            h = int(rng.integers(min(lo, shape.rows), min(hi, shape.rows) + 1))
            w = int(rng.integers(min(lo, shape.cols), min(hi, shape.cols) + 1))
            r0 = int(rng.integers(0, shape.rows - h + 1))
            c0 = int(rng.integers(0, shape.cols - w + 1))
            trial = occ.copy()
            trial[r0:r0 + h, c0:c0 + w] = True
            if trial.sum() <= shape.size // 2:
                occ = trial
                buildings.append(Building(r0, c0, r0 + h, c0 + w, params.wall_loss))
                break
    free = np.flatnonzero(~occ.ravel())
    txs = []
    for _ in range(params.n_transmitters):
        flat = int(free[rng.integers(free.size)])
        i, j = divmod(flat, shape.cols)
        txs.append(Transmitter(
            row=i + float(rng.uniform(0.0, 1.0)),
            col=j + float(rng.uniform(0.0, 1.0)),
            power=float(rng.uniform(*params.power_range)),
            pathloss_exponent=float(rng.uniform(*params.exponent_range)),
        ))
    return Scenario(
        shape=shape,
        transmitters=tuple(txs),
        buildings=tuple(buildings),
        shadowing_sigma=float(params.shadowing_sigma),
        seed=int(seed),
        shadowing_radius=int(params.shadowing_radius),
        reference_distance=float(params.reference_distance),
        floor=float(params.floor),
    )


def _wall_crossings(p0, p1r, p1c, b: Building) -> np.ndarray:
    """Boundary crossings of the segments ``p0 -> (p1r, p1c)`` with one building.

    Slab clipping against the rectangle: a segment that overlaps the interior
    crosses once on entry if it starts outside and once on exit if it ends
    outside.
    """
    r0, c0 = p0
    dr, dc = p1r - r0, p1c - c0
    t_lo = np.zeros_like(p1r)
    t_hi = np.ones_like(p1r)
    for start, d, lo, hi in ((r0, dr, b.row0, b.row1), (c0, dc, b.col0, b.col1)):
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - start) / d
            tb = (hi - start) / d
        par = d == 0
        inside_slab = (lo < start) & (start < hi)
        ta = np.where(par, np.where(inside_slab, -np.inf, np.inf), ta)
        tb = np.where(par, np.where(inside_slab, np.inf, -np.inf), tb)
        t_lo = np.maximum(t_lo, np.minimum(ta, tb))
        t_hi = np.minimum(t_hi, np.maximum(ta, tb))
    hits = t_lo < t_hi

    def inside(r, c):
        return (b.row0 < r) & (r < b.row1) & (b.col0 < c) & (c < b.col1)

    start_out = not inside(r0, c0)
    end_out = ~inside(p1r, p1c)
    return hits * (int(start_out) + end_out.astype(np.int64))


def _shadowing(shape: GridShape, sigma: float, radius: int, rng) -> np.ndarray:
    noise = rng.standard_normal(shape.as_tuple())
    if radius > 0:
        w = 2 * radius + 1
        noise = uniform_filter1d(noise, w, axis=0, mode="reflect")
        noise = uniform_filter1d(noise, w, axis=1, mode="reflect")
        noise *= w  # box average of w*w unit normals has std 1/w
    return sigma * noise


def render_map(s: Scenario) -> RadioMap:
    """Total received power per cell, in dB, clamped to the scenario floor."""
    rows, cols = s.shape.as_tuple()
    cr, cc = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    rng = np.random.default_rng([s.seed, 0x5AD0])
    d0 = s.reference_distance
    total = np.zeros((rows, cols))
    for tx in s.transmitters:
        d = np.hypot(cr - tx.row, cc - tx.col)
        db = tx.power - 10.0 * tx.pathloss_exponent * np.log10(np.maximum(d, d0) / d0)
        for b in s.buildings:
            db = db - b.wall_loss * _wall_crossings((tx.row, tx.col), cr, cc, b)
        if s.shadowing_sigma > 0:
            db = db + _shadowing(s.shape, s.shadowing_sigma, s.shadowing_radius, rng)
        total += np.power(10.0, db / 10.0)
    ceiling = max(t.power for t in s.transmitters) + 3.0 * len(s.transmitters)
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(total)
    return RadioMap(s.shape, np.clip(out, s.floor, ceiling))


def scenario_seed(seed: int, index: int, split: str = "train") -> int:
    """Per-map scenario seed; train and test splits never share one."""
    if not 0 <= index < (1 << 19):
        raise ValueError(f"map index {index} out of range")
    return int(seed) * (1 << 20) + SPLIT_OFFSETS[split] + int(index)


@dataclass
class DatasetManifest:
    count: int
    shape: tuple[int, int]
    generator: dict
    seed: int
    split: str
    db_min: float
    db_max: float
    scenario_seeds: list[int] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("dataset count must be at least 1")

    @property
    def transform(self) -> AffineTransform:
        return AffineTransform.from_range(self.db_min, self.db_max)

    def to_json(self) -> str:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        d = dict(d)
        d["shape"] = tuple(d["shape"])
        return cls(**d)


def build_dataset(count: int, shape, params: GeneratorConfig | None, seed: int, out_path,
                  split: str = "train") -> DatasetManifest:
    """Render ``count`` maps into ``out_path/maps.f32`` plus ``manifest.json``."""
    if count < 1:
        raise ValueError("dataset count must be at least 1")
    if split not in SPLIT_OFFSETS:
        raise ValueError(f"unknown split {split!r}")
    params = params or GeneratorConfig()
    shape = shape if isinstance(shape, GridShape) else GridShape(*shape)
    out = Path(out_path)
    seeds = [scenario_seed(seed, i, split) for i in range(count)]
    maps = np.empty((count, shape.rows, shape.cols), dtype="<f4")
    for k, s in enumerate(seeds):
        maps[k] = render_map(generate_scenario(shape, params, s)).values
    manifest = DatasetManifest(
        count=count,
        shape=shape.as_tuple(),
        generator=params.to_dict(),
        seed=int(seed),
        split=split,
        db_min=float(maps.min()),
        db_max=float(maps.max()),
        scenario_seeds=seeds,
    )
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "maps.f32").write_bytes(maps.tobytes())
        (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


def load_dataset(path) -> tuple[np.ndarray, DatasetManifest]:
    """Read ``(maps, manifest)``; maps come back as float64 ``(count, rows, cols)``."""
    path = Path(path)
    try:
        manifest = DatasetManifest.from_dict(json.loads((path / "manifest.json").read_text(encoding="utf-8")))
        raw = np.fromfile(path / "maps.f32", dtype="<f4")
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise OSError(f"cannot read dataset at {path}: {exc}") from exc
    rows, cols = manifest.shape
    if raw.size != manifest.count * rows * cols:
        raise OSError(f"{path / 'maps.f32'}: expected {manifest.count * rows * cols} values, found {raw.size}")
    return raw.reshape(manifest.count, rows, cols).astype(np.float64), manifest


def default_data_root() -> Path:
    return Path(os.environ.get("FLOWRADIO_DATA", "data"))
