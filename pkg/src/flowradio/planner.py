"""Uncertainty-aware candidate selection, visiting order and grid path search."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import Cell, manhattan

__all__ = [
    "PlannerConfig",
    "CandidateSet",
    "Trajectory",
    "SearchNode",
    "normalized_uncertainty",
    "step_cost",
    "step_cost_grid",
    "candidate_weights",
    "sample_candidates",
    "uaps_search",
    "pairwise_costs",
    "visiting_order",
    "order_cost",
    "plan_slot",
    "MAX_EXACT_CANDIDATES",
]

MAX_EXACT_CANDIDATES = 15
NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class PlannerConfig:
    kappa: float = 0.001
    beta: float = 0.9
    n_candidates: int = 10
    connectivity: int = 4

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.n_candidates < 1:
            raise ValueError("need at least one candidate")
        if self.connectivity != 4:
            raise ValueError("only 4-connected grids are supported")

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "beta": self.beta, "n_candidates": self.n_candidates,
                "connectivity": self.connectivity}


@dataclass(frozen=True)
class CandidateSet:
    cells: tuple[Cell, ...]
    weights: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class Trajectory:
    cells: tuple[Cell, ...]
    cost: float

    def __post_init__(self):
        cells = tuple(Cell(int(c[0]), int(c[1])) for c in self.cells)
        for a, b in zip(cells, cells[1:]):
            if manhattan(a, b) != 1:
                raise ValueError(f"cells {a} and {b} are not 4-adjacent")
        object.__setattr__(self, "cells", cells)

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def steps(self) -> int:
        return max(len(self.cells) - 1, 0)

    def truncated(self, max_steps: int, costs: np.ndarray | None = None) -> "Trajectory":
        if self.steps <= max_steps:
            return self
        cells = self.cells[:max_steps + 1]
        cost = 0.0 if costs is None else float(sum(costs[c] for c in cells[1:]))
        return Trajectory(cells, cost)


@dataclass(order=True)
class SearchNode:
    phi: float
    h: float
    cell: Cell = field(compare=True)
    r: float = field(default=0.0, compare=False)
    parent: "SearchNode | None" = field(default=None, compare=False, repr=False)


def _uvals(U) -> np.ndarray:
    return np.asarray(getattr(U, "values", U), dtype=np.float64)


def _normalized_grid(U) -> np.ndarray:
    u = _uvals(U)
    lo, hi = float(u.min()), float(u.max())
    if hi == lo:
        return np.zeros_like(u)
    return (u - lo) / (hi - lo)


def normalized_uncertainty(U, cell) -> float:
    """Min-max scaled uncertainty of one cell; 0 on a flat map."""
    return float(_normalized_grid(U)[cell[0], cell[1]])


def step_cost(U, next_cell, beta: float) -> float:
    """Cost of moving into ``next_cell``: ``1 - beta * normalized U``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return 1.0 - beta * normalized_uncertainty(U, next_cell)


def step_cost_grid(U, beta: float) -> np.ndarray:
    """:func:`step_cost` of every cell at once."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return 1.0 - beta * _normalized_grid(U)


def candidate_weights(U, cells, uav_pos, kappa: float) -> np.ndarray:
    """Uncertainty discounted by Manhattan distance from the UAV."""
    u = _uvals(U)
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    d = np.abs(cells[:, 0] - uav_pos[0]) + np.abs(cells[:, 1] - uav_pos[1])
    return u[cells[:, 0], cells[:, 1]] / (1.0 + kappa * d)


def sample_candidates(cells, weights, n: int, rng: np.random.Generator) -> CandidateSet:
    """Weighted draws without replacement, renormalizing after each pick.

    Zero-weight cells are drawn uniformly only once every positive-weight
    cell has been taken. Returns every cell when fewer than ``n`` exist.
    """
    cells = [Cell(int(c[0]), int(c[1])) for c in np.asarray(cells).reshape(-1, 2)]
    w = np.array(weights, dtype=np.float64)
    if len(w) != len(cells):
        raise ValueError("one weight per cell required")
    if (w < 0).any() or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    n = min(int(n), len(cells))
    remaining = np.ones(len(cells), dtype=bool)
    picked = []
    for _ in range(n):
        avail = w * remaining
        total = avail.sum()
        if total > 0:
            p = avail / total
            idx = int(rng.choice(len(cells), p=p))
        else:
            idx = int(rng.choice(np.flatnonzero(remaining)))
        remaining[idx] = False
        picked.append(idx)
    return CandidateSet(tuple(cells[i] for i in picked), tuple(float(w[i]) for i in picked))


def uaps_search(U, start, goal, beta: float, costs: np.ndarray | None = None) -> Trajectory:
    """Best-first search over 4-neighbors ordered by ``phi = r + h``.

    ``r`` accumulates :func:`step_cost`; ``h = (1 - beta) * manhattan``
    never overestimates since every step costs at least ``1 - beta``, and
    changes by at most one step's minimum cost per move, so the first time
    ``goal`` is popped its cost is optimal. ``costs`` may carry a
    precomputed :func:`step_cost_grid`.
    """
    costs = step_cost_grid(U, beta) if costs is None else costs
    rows, cols = costs.shape
    start, goal = Cell(int(start[0]), int(start[1])), Cell(int(goal[0]), int(goal[1]))
    for c in (start, goal):
        if not (0 <= c.i < rows and 0 <= c.j < cols):
            raise ValueError(f"cell {tuple(c)} outside the {rows}x{cols} grid")
    hw = 1.0 - beta
    best = np.full((rows, cols), np.inf)
    closed = np.zeros((rows, cols), dtype=bool)
    h0 = hw * manhattan(start, goal)
    root = SearchNode(h0, h0, start, 0.0, None)
    best[start] = 0.0
    heap = [root]
    while heap:
        node = heapq.heappop(heap)
        if closed[node.cell]:
            continue
        closed[node.cell] = True
        if node.cell == goal:
            path = []
            n = node
            while n is not None:
                path.append(n.cell)
                n = n.parent
            return Trajectory(tuple(reversed(path)), node.r)
        i, j = node.cell
        for di, dj in NEIGHBORS:
            a, b = i + di, j + dj
            if not (0 <= a < rows and 0 <= b < cols) or closed[a, b]:
                continue
            r = node.r + costs[a, b]
            if r < best[a, b]:
                best[a, b] = r
                h = hw * (abs(a - goal.i) + abs(b - goal.j))
                heapq.heappush(heap, SearchNode(r + h, h, Cell(a, b), r, node))
    raise RuntimeError("goal unreachable")  # impossible on an obstacle-free grid


def pairwise_costs(U, uav_pos, candidates, beta: float):
    """Directed optimal costs and paths between the UAV and every candidate.

    Node 0 is the UAV, nodes ``1..N`` the candidates. Only the ``(N+1)N/2``
    unordered pairs are searched: reversing an optimal ``a -> b`` path gives
    an optimal ``b -> a`` path whose cost differs by ``cost(a) - cost(b)``,
    since a path pays for every cell except its first.
    """
    costs = step_cost_grid(U, beta)
    nodes = [Cell(int(uav_pos[0]), int(uav_pos[1]))] + [Cell(*c) for c in candidates]
    n = len(nodes)
    C = np.zeros((n, n))
    paths: dict[tuple[int, int], tuple[Cell, ...]] = {}
    for a in range(n):
        paths[(a, a)] = (nodes[a],)
        for b in range(a + 1, n):
            traj = uaps_search(U, nodes[a], nodes[b], beta, costs)
            C[a, b] = traj.cost
            C[b, a] = traj.cost - costs[nodes[b]] + costs[nodes[a]]
            paths[(a, b)] = traj.cells
            paths[(b, a)] = tuple(reversed(traj.cells))
    return C, paths


def order_cost(C: np.ndarray, order) -> float:
    """Total open-path cost from node 0 through candidate nodes ``order`` (1-based)."""
    total, prev = 0.0, 0
    for k in order:
        total += C[prev, k]
        prev = k
    return total


def visiting_order(C: np.ndarray) -> tuple[int, ...]:
    """Cheapest open path from node 0 through all nodes ``1..N``.

    Held-Karp over subsets, solved backwards (cheapest completion from each
    ``(visited, last)`` state) and then read forwards, taking the smallest
    candidate index among equally cheap continuations so ties resolve to
    the lexicographically first order. Returns 1-based candidate indices.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0] - 1
    if n < 1:
        return ()
    if n > MAX_EXACT_CANDIDATES:
        raise ValueError(f"exact ordering supports at most {MAX_EXACT_CANDIDATES} candidates, got {n}")
    full = (1 << n) - 1
    inner = C[1:, 1:]
    bits = 1 << np.arange(n)
    # rest[mask, last]: cheapest cost to visit the nodes outside mask, starting at last
    rest = np.full((1 << n, n), np.inf)
    rest[full, :] = 0.0
    for mask in range(full - 1, 0, -1):
        inside = (mask & bits) != 0
        free = np.flatnonzero(~inside)
        vals = inner[np.ix_(inside, free)] + rest[mask | bits[free], free]
        rest[mask, inside] = vals.min(axis=1)
    order = []
    mask, prev = 0, 0
    for _ in range(n):
        options = [(C[prev, k + 1] + rest[mask | 1 << k, k], k) for k in range(n) if not mask >> k & 1]
        best = min(c for c, _ in options)
        k = min(k for c, k in options if c == best)
        order.append(k + 1)
        mask |= 1 << k
        prev = k + 1
    return tuple(order)


def _concatenate(segments, costs: np.ndarray) -> Trajectory:
    cells: list[Cell] = []
    for seg in segments:
        cells.extend(seg if not cells else seg[1:])
    return Trajectory(tuple(cells), float(sum(costs[c] for c in cells[1:])))


def plan_slot(U, uav_pos, sampled_mask: np.ndarray, config: PlannerConfig,
              rng: np.random.Generator) -> tuple[Trajectory, CandidateSet]:
    """Pick candidates, order them, and stitch the searched segments together."""
    u = _uvals(U)
    unsampled = np.argwhere(~np.asarray(sampled_mask, dtype=bool))
    if len(unsampled) == 0:
        raise ValueError("no unsampled cells left to plan for")
    weights = candidate_weights(u, unsampled, uav_pos, config.kappa)
    cand = sample_candidates(unsampled, weights, config.n_candidates, rng)
    C, paths = pairwise_costs(u, uav_pos, cand.cells, config.beta)
    order = visiting_order(C)
    segments, prev = [], 0
    for k in order:
        segments.append(paths[(prev, k)])
        prev = k
    traj = _concatenate(segments, step_cost_grid(u, config.beta))
    return traj, cand
