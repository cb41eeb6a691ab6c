"""Active-learning missions: reconstruct, quantify uncertainty, plan, fly, measure.

Three strategies share the same initial observations, reconstruction
pipeline and budget accounting:

* ``proposed``: weighted candidates, exact visiting order, UAPS segments.
* ``greedy``: fly to the single most uncertain unsampled cell each slot.
* ``random``: the whole budget drawn uniformly at once, no flight.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Cell, ObservationSet, RadioMap, nmse
from .planner import PlannerConfig, Trajectory, plan_slot, uaps_search
from .pnp import PnPConfig
from .uncertainty import generate_ensemble, variance_map
from .validation import check_same_shape, check_unit_interval

__all__ = [
    "LoopConfig",
    "RunLog",
    "init_observations",
    "acquire_along",
    "run_active",
    "run_random_baseline",
    "run_greedy_baseline",
    "run_strategy",
    "STRATEGIES",
]

logger = logging.getLogger(__name__)

STRATEGIES = ("proposed", "random", "greedy")
RUNLOG_VERSION = 1


@dataclass(frozen=True)
class LoopConfig:
    """Mission settings.

    ``slot_step_cap`` defaults to four grid sides. ``eval_every`` is the
    number of new samples between evaluations of the random baseline; the
    flying strategies evaluate once per slot. ``start`` is the UAV's
    take-off cell.
    """

    init_fraction: float = 0.02
    budget: int = 2000
    slot_step_cap: int | None = None
    max_slots: int = 10_000
    ensemble_size: int = 5
    eval_every: int = 50
    estimate: str = "mean"
    start: tuple[int, int] = (0, 0)
    seed: int = 0

    def __post_init__(self):
        check_unit_interval(self.init_fraction, "init_fraction", open_low=True, open_high=True)
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.slot_step_cap is not None and self.slot_step_cap < 1:
            raise ValueError("slot_step_cap must be at least 1")
        if self.max_slots < 1 or self.eval_every < 1:
            raise ValueError("max_slots and eval_every must be at least 1")
        if self.ensemble_size < 2:
            raise ValueError("ensemble_size must be at least 2")
        if self.estimate not in ("mean", "first"):
            raise ValueError("estimate must be 'mean' or 'first'")
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))

    def step_cap(self, shape) -> int:
        return self.slot_step_cap or 4 * max(shape.rows, shape.cols)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = list(self.start)
        return d

    # derived seeds; every strategy shares the initial-observation stream
    def init_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0])

    def planner_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 1])

    def ensemble_seed(self, evaluation: int) -> int:
        return (self.seed << 24) + evaluation * self.ensemble_size


@dataclass
class RunLog:
    strategy: str
    header: dict
    records: list[dict] = field(default_factory=list)
    # in-memory artifacts, not serialized
    trajectories: list[Trajectory] = field(default_factory=list, repr=False)
    observations: ObservationSet | None = field(default=None, repr=False)
    final_estimate: RadioMap | None = field(default=None, repr=False)
    final_uncertainty: np.ndarray | None = field(default=None, repr=False)
    stop_reason: str = "budget"

    def add(self, slot: int, steps: int, samples: int, value: float) -> None:
        self.records.append({"slot": int(slot), "steps": int(steps), "samples": int(samples),
                             "nmse": float(value), "strategy": self.strategy})

    def to_jsonl(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunLog":
        """Parse a runlog file; raises ``ValueError`` naming the file on bad content."""
        path = Path(path)
        try:
            lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
            header = json.loads(lines[0])["header"]
            records = [json.loads(ln) for ln in lines[1:]]
            for r in records:
                for key in ("slot", "steps", "samples", "nmse", "strategy"):
                    if key not in r:
                        raise KeyError(key)
            strategy = header["strategy"]
        except (OSError, IndexError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed runlog ({exc!r})") from exc
        if not records:
            raise ValueError(f"{path}: runlog has no records")
        return cls(strategy, header, records)

    @property
    def final_nmse(self) -> float:
        return self.records[-1]["nmse"]

    def steps_per_sample(self) -> float:
        first, last = self.records[0], self.records[-1]
        gained = last["samples"] - first["samples"]
        return last["steps"] / gained if gained else float("inf")


def init_observations(truth: RadioMap, fraction: float, rng: np.random.Generator) -> ObservationSet:
    """``floor(fraction * cells)`` distinct uniform cells, read noiselessly."""
    count = int(np.floor(fraction * truth.shape.size))
    if count < 1:
        raise ValueError(f"fraction {fraction} yields no initial observations")
    flat = rng.choice(truth.shape.size, size=count, replace=False)
    cells = np.stack(np.divmod(flat, truth.shape.cols), axis=1)
    return ObservationSet.from_truth(truth, cells)


def acquire_along(trajectory: Trajectory, truth: RadioMap, obs: ObservationSet,
                  remaining_budget: int) -> tuple[ObservationSet, int, int]:
    """Walk ``trajectory`` measuring every unobserved cell it visits.

    Returns ``(observations, steps_flown, new_samples)``. The walk stops at
    the cell that exhausts ``remaining_budget``.
    """
    mask = obs.mask
    new_cells = []
    steps = trajectory.steps
    if remaining_budget <= 0:
        return obs, 0, 0
    for idx, (i, j) in enumerate(trajectory.cells):
        if not mask[i, j]:
            mask[i, j] = True
            new_cells.append((i, j))
            if len(new_cells) >= remaining_budget:
                steps = idx
                break
    if not new_cells:
        return obs, steps, 0
    cells = np.array(new_cells, dtype=np.int64)
    return obs.extend(cells, truth.values[cells[:, 0], cells[:, 1]]), steps, len(new_cells)


def _header(strategy, truth, field, loop, pnp, planner, extra=None) -> dict:
    h = {
        "format_version": RUNLOG_VERSION,
        "strategy": strategy,
        "shape": list(truth.shape.as_tuple()),
        "loop": loop.to_dict(),
        "pnp": pnp.to_dict(),
        "planner": planner.to_dict() if planner is not None else None,
        "seeds": {"loop": loop.seed, "model": getattr(field, "random_state", None)},
    }
    h.update(extra or {})
    return h


def _evaluate(field, obs, truth, pnp, loop, evaluation):
    ens = generate_ensemble(field, obs, pnp, loop.ensemble_size, loop.ensemble_seed(evaluation))
    estimate = ens.mean() if loop.estimate == "mean" else ens.maps()[0]
    return variance_map(ens), estimate, nmse(truth, estimate)


def _fly(truth, field, loop, pnp, planner, strategy, choose, extra_header=None) -> RunLog:
    check_same_shape(field.shape_, truth.shape, "truth")
    obs = init_observations(truth, loop.init_fraction, loop.init_rng())
    rng = loop.planner_rng()
    log = RunLog(strategy, _header(strategy, truth, field, loop, pnp, planner, extra_header))
    log.header["initial_samples"] = len(obs)
    pos = truth.shape.check_cell(loop.start)
    cap = loop.step_cap(truth.shape)
    steps = new = slot = 0
    while True:
        U, estimate, err = _evaluate(field, obs, truth, pnp, loop, slot)
        log.add(slot, steps, len(obs), err)
        logger.info("%s slot %d steps %d samples %d nmse %.4g", strategy, slot, steps, len(obs), err)
        log.final_estimate, log.final_uncertainty = estimate, U.values
        if new >= loop.budget:
            break
        if slot >= loop.max_slots:
            log.stop_reason = "max_slots"
            break
        sampled = obs.mask
        if sampled.all():
            log.stop_reason = "grid_exhausted"
            break
        traj = choose(U, pos, sampled, rng).truncated(cap)
        obs, flown, added = acquire_along(traj, truth, obs, loop.budget - new)
        log.trajectories.append(Trajectory(traj.cells[:flown + 1], 0.0))
        steps += flown
        new += added
        pos = traj.cells[flown]
        slot += 1
    log.observations = obs
    return log


def run_active(truth: RadioMap, field, loop: LoopConfig | None = None, pnp: PnPConfig | None = None,
               planner: PlannerConfig | None = None) -> RunLog:
    """Proposed strategy: multi-candidate slots planned on the ensemble variance."""
    loop, pnp, planner = loop or LoopConfig(), pnp or PnPConfig(), planner or PlannerConfig()

    def choose(U, pos, sampled, rng):
        return plan_slot(U, pos, sampled, planner, rng)[0]

    return _fly(truth, field, loop, pnp, planner, "proposed", choose)


def greedy_target(U, sampled: np.ndarray) -> Cell:
    """Most uncertain unsampled cell; row-major order breaks ties."""
    u = np.where(sampled, -np.inf, np.asarray(getattr(U, "values", U)))
    return Cell(*np.unravel_index(int(np.argmax(u)), u.shape))


def run_greedy_baseline(truth: RadioMap, field, loop: LoopConfig | None = None,
                        pnp: PnPConfig | None = None, planner: PlannerConfig | None = None) -> RunLog:
    """One target per slot: the argmax of the uncertainty over unsampled cells."""
    loop, pnp, planner = loop or LoopConfig(), pnp or PnPConfig(), planner or PlannerConfig()

    def choose(U, pos, sampled, rng):
        return uaps_search(U, pos, greedy_target(U, sampled), planner.beta)

    return _fly(truth, field, loop, pnp, planner, "greedy", choose)


def random_locations(truth: RadioMap, obs: ObservationSet, budget: int, seed: int) -> np.ndarray:
    free = np.flatnonzero(~obs.mask.ravel())
    rng = np.random.default_rng([seed, 2])
    flat = rng.choice(free, size=min(budget, free.size), replace=False)
    return np.stack(np.divmod(flat, truth.shape.cols), axis=1)


def run_random_baseline(truth: RadioMap, field, loop: LoopConfig | None = None,
                        pnp: PnPConfig | None = None, planner: PlannerConfig | None = None) -> RunLog:
    """Budget drawn uniformly without replacement up front; no flight.

    The curve is indexed by samples; the ``steps`` column repeats the
    number of samples added so far.
    """
    loop, pnp = loop or LoopConfig(), pnp or PnPConfig()
    check_same_shape(field.shape_, truth.shape, "truth")
    obs0 = init_observations(truth, loop.init_fraction, loop.init_rng())
    cells = random_locations(truth, obs0, loop.budget, loop.seed)
    full = obs0.extend(cells, truth.values[cells[:, 0], cells[:, 1]])
    log = RunLog("random", _header("random", truth, field, loop, pnp, None))
    log.header["initial_samples"] = len(obs0)
    marks = list(range(0, len(cells), loop.eval_every)) + [len(cells)]
    marks = sorted(set(marks))
    for k, added in enumerate(marks):
        obs = full.head(len(obs0) + added)
        U, estimate, err = _evaluate(field, obs, truth, pnp, loop, k)
        log.add(k, added, len(obs), err)
        logger.info("random eval %d samples %d nmse %.4g", k, len(obs), err)
        log.final_estimate, log.final_uncertainty = estimate, U.values
    if len(cells) < loop.budget:
        log.stop_reason = "grid_exhausted"
    log.observations = full
    return log


def run_strategy(strategy: str, truth: RadioMap, field, loop=None, pnp=None, planner=None) -> RunLog:
    runners = {"proposed": run_active, "random": run_random_baseline, "greedy": run_greedy_baseline}
    if strategy not in runners:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return runners[strategy](truth, field, loop, pnp, planner)
