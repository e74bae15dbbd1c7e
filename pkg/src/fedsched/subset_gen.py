"""Partition a client pool into per-round training subsets.

Subsets are drawn one at a time by solving a multidimensional knapsack over
the never-selected clients: one knapsack per class label, equal capacities, so
the chosen group's combined label histogram stays close to uniform. Two
repair passes keep quality and size up as the pool thins out: skewed subsets
pull in "compensation" clients (already scheduled, still under their
per-period cap) whose data fills under-filled classes, and undersized subsets
are completed through a complementary knapsack whose capacities equal the
space the mandatory members leave behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import mkp
from .scoring import pooled_noniid_degree


@dataclass
class SubsetGenConfig:
    """Knobs for one scheduling period's subset generation."""

    n: int = 10
    delta: int = 3
    x_star: int = 3
    nid_threshold: float = 0.2
    fill_threshold: float = 0.8
    capacity_override: int | None = None

    def __post_init__(self) -> None:
        if self.n - self.delta < 1:
            raise ValueError("minimum subset size n - delta must be at least 1")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.x_star < 1:
            raise ValueError("per-period selection cap must be at least 1")
        if not 0.0 <= self.nid_threshold <= 1.0:
            raise ValueError("nid_threshold must lie in [0, 1]")
        if not 0.0 < self.fill_threshold <= 1.0:
            raise ValueError("fill_threshold must lie in (0, 1]")
        if self.capacity_override is not None and self.capacity_override < 1:
            raise ValueError("capacity_override must be positive")

    @property
    def min_size(self) -> int:
        return self.n - self.delta

    @property
    def max_size(self) -> int:
        return self.n + self.delta


@dataclass
class SubsetSchedule:
    """Ordered subsets for one scheduling period."""

    subsets: list[list]
    selection_counts: dict
    per_subset_nid: list[float]
    undersized_subsets: int = 0

    def to_json_dict(self) -> dict:
        return {
            "subsets": [list(s) for s in self.subsets],
            "selection_counts": {str(k): v for k, v in self.selection_counts.items()},
            "per_subset_nid": list(self.per_subset_nid),
            "undersized_subsets": self.undersized_subsets,
        }

    def stacked_rows(self, histograms: dict) -> list[tuple]:
        """Rows (subset_index, class, client_id, count) for stacked-bar plots."""
        rows = []
        for t, subset in enumerate(self.subsets):
            for cid in subset:
                h = np.asarray(histograms[cid])
                for cls in np.flatnonzero(h > 0):
                    rows.append((t, int(cls), cid, int(h[cls])))
        return rows


@dataclass
class ScheduleState:
    """Mutable bookkeeping shared by the generation passes."""

    histograms: dict
    selection_counts: dict
    capacity: int
    order: list = field(default_factory=list)

    @property
    def remaining(self) -> list:
        return [cid for cid in self.order if self.selection_counts[cid] == 0]

    def eligible_again(self, x_star: int, exclude=()) -> list:
        """Previously scheduled clients still below the per-period cap."""
        skip = set(exclude)
        return [
            cid
            for cid in self.order
            if cid not in skip and 1 <= self.selection_counts[cid] < x_star
        ]


def knapsack_capacity(histograms, n: int, override: int | None = None) -> int:
    """Per-class capacity sized so the most abundant class spreads over T subsets.

    Floored at the largest single-client class count so every client fits in
    a knapsack on its own, keeping the relaxed one-client instances solvable.
    """
    if override is not None:
        return int(override)
    hists = [np.asarray(h) for h in histograms]
    if not hists:
        raise ValueError("cannot size knapsacks for an empty pool")
    totals = np.sum(hists, axis=0)
    if totals.sum() <= 0:
        raise ValueError("pool holds no data")
    n_subsets = math.ceil(len(hists) / n)
    spread = math.ceil(int(totals.max()) / n_subsets)
    largest_single = max(int(h.max()) for h in hists)
    return max(1, spread, largest_single)


def _subset_nid(state: ScheduleState, subset) -> float:
    return pooled_noniid_degree([state.histograms[cid] for cid in subset])


def _solve_over(state: ScheduleState, pool_ids, size_min: int, size_max: int,
                **solver_kwargs) -> mkp.MkpSolution:
    instance = mkp.build_instance(
        [(cid, state.histograms[cid]) for cid in pool_ids],
        capacity=state.capacity,
        size_min=size_min,
        size_max=size_max,
    )
    return mkp.solve(instance, **solver_kwargs)


def improve_nid(subset, state: ScheduleState, config: SubsetGenConfig,
                **solver_kwargs) -> list:
    """One compensation pass over a freshly solved, too-skewed subset.

    Classes filled below ``fill_threshold`` of capacity define the deficit;
    already-scheduled clients under the per-period cap whose modal class is
    deficient join the pool for a re-solve. The re-solved subset replaces the
    original only when its non-iid degree strictly improves and it still
    consumes at least one never-selected client (so the period always makes
    progress).
    """
    subset = list(subset)
    loads = np.sum([state.histograms[cid] for cid in subset], axis=0)
    deficient = set(np.flatnonzero(loads < config.fill_threshold * state.capacity).tolist())
    if not deficient:
        return subset

    in_subset = set(subset)
    compensation = [
        cid
        for cid in state.order
        if cid not in in_subset
        and 1 <= state.selection_counts[cid] < config.x_star
        and int(np.argmax(state.histograms[cid])) in deficient
    ]
    if not compensation:
        return subset

    remaining = state.remaining
    pool = remaining + [cid for cid in compensation if cid not in remaining]
    solution = _solve_over(state, pool, 1, config.max_size, **solver_kwargs)
    if not solution.feasible or not solution.selected_ids:
        return subset
    candidate = list(solution.selected_ids)
    takes_remaining = any(state.selection_counts[cid] == 0 for cid in candidate)
    if takes_remaining and _subset_nid(state, candidate) < _subset_nid(state, subset):
        return candidate
    return subset


def enforce_min_size(subset, state: ScheduleState, config: SubsetGenConfig,
                     **solver_kwargs) -> list:
    """Grow an undersized subset to the minimum size via complementary knapsacks.

    The current members become mandatory; re-selectable clients (scheduled
    before, still under the cap) compete for the residual capacities. If
    capacity is too tight for the solver to reach the minimum size, the
    lightest eligible clients are appended anyway: the size guarantee
    outranks even filling.
    """
    mandatory = list(subset)
    eligible = state.eligible_again(config.x_star, exclude=mandatory)
    if not eligible:
        return mandatory

    target = min(config.min_size, len(mandatory) + len(eligible))
    need = max(target - len(mandatory), 0)
    union = list(mandatory)
    if need > 0:
        # Top up to the minimum size exactly: re-using more clients than the
        # size guarantee requires would eat into their per-period budget.
        full = mkp.build_instance(
            [(cid, state.histograms[cid]) for cid in mandatory + eligible],
            capacity=state.capacity,
            size_min=target,
            size_max=target,
        )
        residual = mkp.build_complementary(full, mandatory)
        solution = mkp.solve(residual, **solver_kwargs)
        if solution.feasible:
            union += list(solution.selected_ids)

    if len(union) < target:
        position = {cid: i for i, cid in enumerate(state.order)}
        chosen = set(union)
        by_weight = sorted(
            (cid for cid in eligible if cid not in chosen),
            key=lambda cid: (int(np.asarray(state.histograms[cid]).sum()), position[cid]),
        )
        union += by_weight[: target - len(union)]
    return union


def generate_subsets(pool, config: SubsetGenConfig, seed: int = 0,
                     **solver_kwargs) -> SubsetSchedule:
    """Schedule every client of the pool into round subsets.

    Loops until each client has been drawn at least once: solve a knapsack
    over the never-selected clients (minimum size relaxed to one so a
    solution always exists), repair skew and size, record the subset, and
    repeat. When fewer than the minimum size remain they all become
    mandatory and the subset is completed from re-selectable clients.

    The seed shuffles the client order handed to the solver, giving
    independent draws for repeated runs on the same pool; the procedure is
    deterministic for a fixed pool, config and seed.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("cannot schedule an empty pool")
    ids = [cid for cid, _ in pool]
    if len(set(ids)) != len(ids):
        raise ValueError("client ids must be unique")
    histograms = {cid: np.asarray(h, dtype=np.int64) for cid, h in pool}
    # Schedule solves favor throughput: exact search only on small leftovers,
    # greedy plus local search elsewhere. Callers can override.
    solver_kwargs.setdefault("exact_threshold", 16)
    solver_kwargs.setdefault("node_budget", 50_000)

    capacity = knapsack_capacity(
        list(histograms.values()), config.n, override=config.capacity_override
    )
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    state = ScheduleState(
        histograms=histograms,
        selection_counts={cid: 0 for cid in ids},
        capacity=capacity,
        order=order,
    )

    subsets: list[list] = []
    nids: list[float] = []
    undersized = 0
    while True:
        remaining = state.remaining
        if not remaining:
            break
        if len(remaining) >= config.min_size:
            solution = _solve_over(state, remaining, 1, config.max_size,
                                   **solver_kwargs)
            if not solution.feasible or not solution.selected_ids:
                raise RuntimeError(
                    "knapsack infeasible even with relaxed minimum size; "
                    "capacity too small for a single client"
                )
            subset = list(solution.selected_ids)
            if _subset_nid(state, subset) > config.nid_threshold:
                subset = improve_nid(subset, state, config, **solver_kwargs)
            if len(subset) < config.min_size:
                subset = enforce_min_size(subset, state, config, **solver_kwargs)
        else:
            subset = enforce_min_size(list(remaining), state, config, **solver_kwargs)

        if not any(state.selection_counts[cid] == 0 for cid in subset):
            raise RuntimeError("subset generation made no progress")
        subsets.append(subset)
        nids.append(_subset_nid(state, subset))
        if len(subset) < config.min_size:
            undersized += 1
        for cid in subset:
            state.selection_counts[cid] += 1

    return SubsetSchedule(
        subsets=subsets,
        selection_counts=dict(state.selection_counts),
        per_subset_nid=nids,
        undersized_subsets=undersized,
    )


def random_subsets_like(sizes, pool, seed: int = 0) -> tuple[list[list], list[float]]:
    """Uniform size-matched subsets from the same pool, for baselines."""
    pool = list(pool)
    ids = [cid for cid, _ in pool]
    histograms = {cid: np.asarray(h) for cid, h in pool}
    rng = np.random.default_rng(seed)
    subsets = []
    nids = []
    for size in sizes:
        size = min(size, len(ids))
        pick = [ids[i] for i in rng.choice(len(ids), size=size, replace=False)]
        subsets.append(pick)
        nids.append(pooled_noniid_degree([histograms[cid] for cid in pick]))
    return subsets, nids
