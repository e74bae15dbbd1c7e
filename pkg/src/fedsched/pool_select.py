"""Initial client pool selection under a cost budget.

Candidates that pass the per-criterion thresholds compete for the budget as a
0-1 knapsack: score is profit, cost is weight. Three strategies are provided:
an exact dynamic program, a score/cost-ratio greedy, and a random baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scoring import N_CRITERIA


@dataclass(eq=False)
class Candidate:
    """One client competing for a slot in the initial pool."""

    id: object
    score: float
    cost: int
    score_vector: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.cost < 1 or int(self.cost) != self.cost:
            raise ValueError(f"candidate {self.id!r}: cost must be a positive integer")
        self.cost = int(self.cost)
        if self.score <= 0:
            raise ValueError(f"candidate {self.id!r}: score must be positive")
        if self.score_vector is not None:
            v = np.asarray(self.score_vector, dtype=float)
            if v.shape != (N_CRITERIA,):
                raise ValueError(
                    f"candidate {self.id!r}: score vector must have {N_CRITERIA} entries"
                )
            self.score_vector = v


@dataclass
class PoolSelectionResult:
    """Outcome of one selection strategy on one instance."""

    method: str
    selected_ids: list = field(default_factory=list)
    total_score: float = 0.0
    total_cost: int = 0
    approx_ratio: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "selected_ids": list(self.selected_ids),
            "total_score": self.total_score,
            "total_cost": self.total_cost,
            "approx_ratio": self.approx_ratio,
        }


def filter_candidates(candidates, thresholds=None) -> list[Candidate]:
    """Keep candidates whose every criterion score meets its threshold.

    The comparison is component-wise and inclusive; order is preserved.
    With no thresholds (or all zero) every candidate passes.
    """
    if thresholds is None:
        return list(candidates)
    th = np.asarray(thresholds, dtype=float)
    if th.shape != (N_CRITERIA,):
        raise ValueError(f"thresholds must have exactly {N_CRITERIA} entries")
    if not np.any(th > 0):
        return list(candidates)
    kept = []
    for cand in candidates:
        if cand.score_vector is None:
            raise ValueError(
                f"candidate {cand.id!r} has no score vector but thresholds are set"
            )
        if np.all(cand.score_vector >= th):
            kept.append(cand)
    return kept


def min_budget(filtered, n_star: int) -> int:
    """Smallest budget guaranteed to afford any n_star of the candidates.

    Computed as the sum of the n_star largest costs, so a budget at or above
    this value can never make the minimum-pool-size constraint infeasible.
    """
    candidates = list(filtered)
    if n_star < 1:
        raise ValueError("minimum pool size must be at least 1")
    if len(candidates) < n_star:
        raise ValueError(
            f"only {len(candidates)} candidates pass the thresholds, "
            f"but at least {n_star} are required"
        )
    costs = sorted((c.cost for c in candidates), reverse=True)
    return int(sum(costs[:n_star]))


def _check_budget(budget) -> int:
    if budget < 0 or int(budget) != budget:
        raise ValueError("budget must be a non-negative integer")
    return int(budget)


def select_dp(filtered, budget: int) -> PoolSelectionResult:
    """Exact 0-1 knapsack by dynamic programming over the budget.

    Scores are treated as 2-decimal fixed-point values (integer hundredths)
    so totals are reproducible bit-for-bit. When taking an item ties with
    skipping it, the item is taken; this makes the reconstruction
    deterministic across runs.
    """
    candidates = list(filtered)
    budget = _check_budget(budget)
    n = len(candidates)
    if n == 0 or budget == 0:
        return PoolSelectionResult(method="dp", approx_ratio=0.0)

    costs = [c.cost for c in candidates]
    profits = np.array([round(c.score * 100) for c in candidates], dtype=np.int64)
    dp = np.zeros(budget + 1, dtype=np.int64)
    take = np.zeros((n, budget + 1), dtype=bool)
    for i in range(n):
        c = costs[i]
        if c > budget:
            continue
        cand = dp[: budget + 1 - c] + profits[i]
        take[i, c:] = cand >= dp[c:]
        np.maximum(dp[c:], cand, out=dp[c:])

    remaining = budget
    chosen: list[int] = []
    for i in range(n - 1, -1, -1):
        if costs[i] <= remaining and take[i, remaining]:
            chosen.append(i)
            remaining -= costs[i]

    selected = [candidates[i] for i in chosen]
    return PoolSelectionResult(
        method="dp",
        selected_ids=[c.id for c in selected],
        total_score=float(sum(c.score for c in selected)),
        total_cost=int(sum(c.cost for c in selected)),
        approx_ratio=0.0,
    )


def _accumulate(ordered, budget: int, stop_on_overflow: bool) -> list[Candidate]:
    """Walk candidates in order, adding any that fit the remaining budget."""
    remaining = budget
    picked = []
    for cand in ordered:
        if cand.cost > remaining:
            if stop_on_overflow:
                break
            continue
        picked.append(cand)
        remaining -= cand.cost
    return picked


def _result(method: str, picked: list[Candidate]) -> PoolSelectionResult:
    return PoolSelectionResult(
        method=method,
        selected_ids=[c.id for c in picked],
        total_score=float(sum(c.score for c in picked)),
        total_cost=int(sum(c.cost for c in picked)),
    )


def select_greedy(filtered, budget: int, continue_on_overflow: bool = False) -> PoolSelectionResult:
    """Greedy selection in non-increasing score/cost order.

    By default the scan stops at the first candidate that no longer fits
    the remaining budget. Passing continue_on_overflow=True skips over
    unaffordable candidates instead, which can only improve the total.
    Ratio ties break by higher score, then lower id.
    """
    candidates = list(filtered)
    budget = _check_budget(budget)
    order = sorted(
        candidates, key=lambda c: (-(c.score / c.cost), -c.score, c.id)
    )
    picked = _accumulate(order, budget, stop_on_overflow=not continue_on_overflow)
    return _result("greedy", picked)


def select_random(filtered, budget: int, seed: int = 0) -> PoolSelectionResult:
    """Shuffle candidates under the seed, then accumulate until one overflows."""
    candidates = list(filtered)
    budget = _check_budget(budget)
    rng = np.random.default_rng(seed)
    order = [candidates[i] for i in rng.permutation(len(candidates))]
    picked = _accumulate(order, budget, stop_on_overflow=True)
    return _result("random", picked)


def select_in_order(filtered, budget: int, order_ids) -> PoolSelectionResult:
    """Replay a fixed candidate order (e.g. a recorded random draw)."""
    budget = _check_budget(budget)
    by_id = {c.id: c for c in filtered}
    try:
        ordered = [by_id[i] for i in order_ids]
    except KeyError as exc:
        raise ValueError(f"unknown candidate id in replay order: {exc}") from exc
    picked = _accumulate(ordered, budget, stop_on_overflow=True)
    return _result("random", picked)


def approximation_ratio(optimal: float, achieved: float) -> float:
    """Relative shortfall of a heuristic total against the optimal total."""
    if optimal <= 0:
        raise ValueError("optimal total must be positive")
    return (optimal - achieved) / optimal


def select_all(filtered, budget: int, seed: int = 0) -> dict[str, PoolSelectionResult]:
    """Run all three strategies and fill in approximation ratios vs. DP."""
    results = {
        "dp": select_dp(filtered, budget),
        "greedy": select_greedy(filtered, budget),
        "random": select_random(filtered, budget, seed=seed),
    }
    best = results["dp"].total_score
    if best > 0:
        for res in results.values():
            res.approx_ratio = approximation_ratio(best, res.total_score)
    return results
