"""0-1 multidimensional knapsack instances and solvers.

A client is an item: its per-class label histogram is the weight vector, one
knapsack per class, and its total sample count is the profit. Two extra rows
encode subset-size limits: a row of ones capped at the maximum size and a row
of minus ones capped at minus the minimum size (so a single inequality
direction covers both).

``solve`` runs an exact depth-first branch-and-bound (take-branch first,
per-row fractional bounds) on small instances and falls back to greedy
construction plus add/swap local search on large ones, reporting the
LP-relaxation gap. ``brute_force`` is the independent enumeration oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


@dataclass
class MkpInstance:
    """Constraint matrix, capacities and profits for one 0-1 MKP."""

    item_ids: list
    matrix: np.ndarray
    capacities: np.ndarray
    profits: np.ndarray
    n_classes: int

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def size_max(self) -> int:
        return int(self.capacities[self.n_classes])

    @property
    def size_min(self) -> int:
        return int(-self.capacities[self.n_classes + 1])

    def validate(self) -> None:
        if self.matrix.shape != (len(self.capacities), self.n_items):
            raise ValueError("matrix shape does not match capacities/items")
        if len(self.profits) != self.n_items:
            raise ValueError("one profit per item required")

    def to_json_dict(self) -> dict:
        return {
            "item_ids": list(self.item_ids),
            "matrix": self.matrix.tolist(),
            "capacities": self.capacities.tolist(),
            "profits": self.profits.tolist(),
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "MkpInstance":
        inst = cls(
            item_ids=list(data["item_ids"]),
            matrix=np.asarray(data["matrix"], dtype=np.int64),
            capacities=np.asarray(data["capacities"], dtype=np.int64),
            profits=np.asarray(data["profits"], dtype=np.int64),
            n_classes=int(data["n_classes"]),
        )
        inst.validate()
        return inst


@dataclass
class MkpSolution:
    """A 0-1 selection vector with its objective and optimality status."""

    selected: np.ndarray
    selected_ids: list
    objective: int
    feasible: bool
    proven_optimal: bool
    gap: float = 0.0


def build_instance(clients, capacity: int, size_min: int, size_max: int) -> MkpInstance:
    """Assemble an instance from (id, histogram) pairs.

    One row per class capped at ``capacity``, then a row of ones capped at
    ``size_max`` and a row of minus ones capped at ``-size_min``.
    """
    clients = list(clients)
    if not clients:
        raise ValueError("cannot build an instance from an empty client list")
    if capacity < 1:
        raise ValueError("knapsack capacity must be at least 1")
    if size_min < 1 or size_min > size_max:
        raise ValueError("need 1 <= size_min <= size_max")

    ids = [cid for cid, _ in clients]
    hists = [np.asarray(h, dtype=np.int64) for _, h in clients]
    c = hists[0].shape[0]
    for cid, h in zip(ids, hists):
        if h.shape != (c,):
            raise ValueError(f"client {cid!r}: histogram length differs from the others")
        if np.any(h < 0):
            raise ValueError(f"client {cid!r}: histogram counts must be non-negative")

    n = len(ids)
    matrix = np.zeros((c + 2, n), dtype=np.int64)
    matrix[:c, :] = np.stack(hists, axis=1)
    matrix[c, :] = 1
    matrix[c + 1, :] = -1
    capacities = np.concatenate(
        [np.full(c, capacity, dtype=np.int64), [size_max, -size_min]]
    )
    profits = matrix[:c, :].sum(axis=0)
    return MkpInstance(ids, matrix, capacities, profits, n_classes=c)


def build_complementary(instance: MkpInstance, mandatory) -> MkpInstance:
    """Residual instance after a mandatory item set is already packed.

    Mandatory items leave the pool; every class capacity shrinks by their
    summed weights (clamped at zero), and both size limits shrink by the
    mandatory head count (again clamped at zero).
    """
    mandatory = set(mandatory)
    index = {cid: j for j, cid in enumerate(instance.item_ids)}
    missing = mandatory - set(index)
    if missing:
        raise ValueError(f"mandatory items not in the instance: {sorted(map(repr, missing))}")

    c = instance.n_classes
    mand_cols = [index[cid] for cid in sorted(mandatory, key=lambda m: index[m])]
    keep_cols = [j for j in range(instance.n_items) if instance.item_ids[j] not in mandatory]
    used = (
        instance.matrix[:c, mand_cols].sum(axis=1)
        if mand_cols
        else np.zeros(c, dtype=np.int64)
    )

    m = len(mand_cols)
    capacities = np.concatenate(
        [
            np.maximum(instance.capacities[:c] - used, 0),
            [max(instance.size_max - m, 0), -max(instance.size_min - m, 0)],
        ]
    )
    return MkpInstance(
        item_ids=[instance.item_ids[j] for j in keep_cols],
        matrix=instance.matrix[:, keep_cols].copy(),
        capacities=capacities,
        profits=instance.profits[keep_cols].copy(),
        n_classes=c,
    )


def check_solution(instance: MkpInstance, selected) -> tuple[bool, np.ndarray]:
    """Independent feasibility check: row loads of a 0/1 vector vs capacities."""
    x = np.asarray(selected, dtype=np.int64)
    if x.shape != (instance.n_items,):
        raise ValueError("selection vector length does not match the instance")
    loads = instance.matrix @ x
    return bool(np.all(loads <= instance.capacities)), loads


def relaxation_bound(instance: MkpInstance) -> float | None:
    """LP-relaxation upper bound on the objective; None if LP-infeasible."""
    n = instance.n_items
    if n == 0:
        return 0.0
    res = linprog(
        c=-instance.profits.astype(float),
        A_ub=instance.matrix.astype(float),
        b_ub=instance.capacities.astype(float),
        bounds=[(0.0, 1.0)] * n,
        method="highs",
    )
    if res.status == 2:
        return None
    if not res.success:
        return float(instance.profits.sum())
    return float(-res.fun)


def _empty_solution(instance: MkpInstance, feasible: bool, proven: bool) -> MkpSolution:
    return MkpSolution(
        selected=np.zeros(instance.n_items, dtype=np.int64),
        selected_ids=[],
        objective=0,
        feasible=feasible,
        proven_optimal=proven,
        gap=0.0,
    )


def _density_order(instance: MkpInstance) -> np.ndarray:
    """Branching/greedy order: high profit per unit of scarce capacity first."""
    A = instance.matrix
    caps = instance.capacities
    nonneg = np.all(A >= 0, axis=1)
    denom = np.ones(instance.n_items)
    for r in np.flatnonzero(nonneg):
        denom += A[r].astype(float) / max(int(caps[r]), 1)
    density = instance.profits / denom
    return np.lexsort((np.arange(instance.n_items), -density))


def _greedy_construct(instance: MkpInstance, order: np.ndarray) -> np.ndarray:
    """Maximal packing in density order, then repair coverage rows."""
    A = instance.matrix
    caps = instance.capacities
    nonneg = np.all(A >= 0, axis=1)
    nonpos = np.all(A <= 0, axis=1) & ~nonneg
    x = np.zeros(instance.n_items, dtype=bool)
    loads = np.zeros(instance.n_rows, dtype=np.int64)

    for j in order:
        col = A[:, j]
        if np.all(loads[nonneg] + col[nonneg] <= caps[nonneg]):
            x[j] = True
            loads += col

    # Coverage rows (all-nonpositive weights) may still be violated when too
    # few items fit; add the lightest remaining items that help, if any do.
    for r in np.flatnonzero(nonpos):
        while loads[r] > caps[r]:
            helpers = np.flatnonzero(~x & (A[r] < 0))
            added = False
            for j in sorted(helpers, key=lambda j: (int(A[:, j][nonneg].sum()), j)):
                col = A[:, j]
                if np.all(loads[nonneg] + col[nonneg] <= caps[nonneg]):
                    x[j] = True
                    loads += col
                    added = True
                    break
            if not added:
                break
    return x


def _local_search(instance: MkpInstance, x: np.ndarray, max_moves: int) -> np.ndarray:
    """Improve a feasible packing with single adds and profit-raising swaps."""
    A = instance.matrix
    caps = instance.capacities
    p = instance.profits
    x = x.copy()
    loads = A @ x.astype(np.int64)
    if np.any(loads > caps):
        return x

    for _ in range(max_moves):
        unsel = np.flatnonzero(~x)
        if unsel.size:
            fits = np.all(A[:, unsel] <= (caps - loads)[:, None], axis=0)
            if np.any(fits):
                cand = unsel[fits]
                j = cand[np.argmax(p[cand])]
                x[j] = True
                loads += A[:, j]
                continue

        best_gain, best_pair = 0, None
        for s in sorted(np.flatnonzero(x), key=lambda s: (int(p[s]), s)):
            if not unsel.size:
                break
            residual = caps - loads + A[:, s]
            ok = np.all(A[:, unsel] <= residual[:, None], axis=0) & (p[unsel] > p[s])
            if np.any(ok):
                cand = unsel[ok]
                u = cand[np.argmax(p[cand])]
                gain = int(p[u] - p[s])
                if gain > best_gain:
                    best_gain, best_pair = gain, (s, u)
        if best_pair is None:
            break
        s, u = best_pair
        x[s], x[u] = False, True
        loads += A[:, u] - A[:, s]
    return x


def _balance_polish(instance: MkpInstance, x: np.ndarray, max_moves: int) -> np.ndarray:
    """Profit-neutral swaps that spread class loads more evenly.

    Among selections of equal objective the schedule prefers the one filling
    the class knapsacks most uniformly; minimizing the sum of squared class
    loads at fixed total achieves that and never touches the objective.
    """
    c = instance.n_classes
    A = instance.matrix
    caps = instance.capacities
    p = instance.profits
    x = x.copy()
    loads = A @ x.astype(np.int64)

    for _ in range(max_moves):
        selected = np.flatnonzero(x)
        unsel = np.flatnonzero(~x.astype(bool))
        if not selected.size or not unsel.size:
            break
        current = int(np.sum(loads[:c] ** 2))
        best = (0, None)
        for s in selected:
            residual = caps - loads + A[:, s]
            ok = np.all(A[:, unsel] <= residual[:, None], axis=0) & (p[unsel] == p[s])
            if not np.any(ok):
                continue
            cand = unsel[ok]
            trial = (loads[:c] - A[:c, s])[:, None] + A[:c, cand]
            scores = np.sum(trial ** 2, axis=0)
            i = int(np.argmin(scores))
            gain = current - int(scores[i])
            if gain > best[0]:
                best = (gain, (int(s), int(cand[i])))
        if best[1] is None:
            break
        s, u = best[1]
        x[s], x[u] = False, True
        loads += A[:, u] - A[:, s]
    return x


class _NodeBudgetExceeded(Exception):
    pass


class _BranchAndBound:
    """Exact DFS search over density-ordered items with per-row bounds."""

    def __init__(self, instance: MkpInstance, order: np.ndarray, node_budget: int):
        self.A = instance.matrix[:, order]
        self.caps = instance.capacities
        self.p = instance.profits[order].astype(np.int64)
        self.n = instance.n_items
        self.order = order
        self.node_budget = node_budget
        self.nodes = 0

        # Minimum achievable residual load per row for positions >= k: only
        # negative weights can lower a load, so suffix-sum them.
        neg = np.minimum(self.A, 0)
        self.neg_suffix = np.zeros((self.A.shape[0], self.n + 1), dtype=np.int64)
        self.neg_suffix[:, :-1] = neg[:, ::-1].cumsum(axis=1)[:, ::-1]

        self.profit_suffix = np.zeros(self.n + 1, dtype=np.int64)
        self.profit_suffix[:-1] = self.p[::-1].cumsum()[::-1]

        self.nonneg_rows = np.flatnonzero(np.all(self.A >= 0, axis=1))
        self.zero_profit_suffix = {}
        self.row_ratio_order = {}
        for r in self.nonneg_rows:
            w = self.A[r]
            zp = np.zeros(self.n + 1, dtype=np.int64)
            zp[:-1] = (np.where(w == 0, self.p, 0))[::-1].cumsum()[::-1]
            self.zero_profit_suffix[r] = zp
            pos = np.flatnonzero(w > 0)
            self.row_ratio_order[r] = pos[np.argsort(-(self.p[pos] / w[pos]), kind="stable")]

        self.best_obj = -1
        self.best_x: np.ndarray | None = None

    def seed(self, x_orig: np.ndarray, objective: int) -> None:
        self.best_obj = objective
        self.best_x = x_orig.copy()

    def _row_bound(self, r: int, k: int, load: int, profit: int) -> float:
        acc = float(profit + self.zero_profit_suffix[r][k])
        residual = int(self.caps[r] - load)
        for j in self.row_ratio_order[r]:
            if j < k:
                continue
            w = int(self.A[r, j])
            if w <= residual:
                residual -= w
                acc += float(self.p[j])
            else:
                if residual > 0:
                    acc += float(self.p[j]) * residual / w
                break
        return acc

    def _dfs(self, k: int, loads: np.ndarray, profit: int) -> None:
        self.nodes += 1
        if self.nodes > self.node_budget:
            raise _NodeBudgetExceeded
        if np.any(loads + self.neg_suffix[:, k] > self.caps):
            return
        if k == self.n:
            if profit > self.best_obj:
                self.best_obj = profit
                x = np.zeros(self.n, dtype=bool)
                x[self._path_taken] = True
                self.best_x = np.zeros(self.n, dtype=bool)
                self.best_x[self.order[x]] = True
            return
        ub = profit + int(self.profit_suffix[k])
        if ub <= self.best_obj:
            return
        for r in self.nonneg_rows:
            ub = min(ub, self._row_bound(r, k, int(loads[r]), profit))
            if ub <= self.best_obj:
                return

        self._path_taken.append(k)
        self._dfs(k + 1, loads + self.A[:, k], profit + int(self.p[k]))
        self._path_taken.pop()
        self._dfs(k + 1, loads, profit)

    def run(self) -> tuple[int, np.ndarray | None]:
        self._path_taken: list[int] = []
        self._dfs(0, np.zeros(self.A.shape[0], dtype=np.int64), 0)
        return self.best_obj, self.best_x


def solve(
    instance: MkpInstance,
    *,
    exact_threshold: int = 40,
    node_budget: int = 50_000,
    max_ls_moves: int | None = None,
) -> MkpSolution:
    """Best feasible selection for the instance.

    Instances up to ``exact_threshold`` items are solved exactly (within the
    branch-and-bound ``node_budget``); larger ones get the greedy plus
    local-search heuristic. Non-proven results report the LP-relaxation gap.
    Deterministic for a fixed instance and effort.
    """
    instance.validate()
    n = instance.n_items
    caps = instance.capacities
    A = instance.matrix

    if n == 0:
        return _empty_solution(instance, feasible=bool(np.all(caps >= 0)), proven=True)

    # A coverage row that even the full item set cannot satisfy (for example a
    # minimum size larger than the pool) makes the instance infeasible.
    full_loads = A.sum(axis=1)
    nonpos = np.all(A <= 0, axis=1)
    if np.any(nonpos & (full_loads > caps)):
        return _empty_solution(instance, feasible=False, proven=True)

    order = _density_order(instance)
    x = _greedy_construct(instance, order)
    if max_ls_moves is None:
        max_ls_moves = 4 * n
    feasible_start, _ = check_solution(instance, x.astype(np.int64))
    if feasible_start:
        x = _local_search(instance, x, max_ls_moves)
    objective = int(instance.profits[x].sum())

    proven = False
    if n <= exact_threshold:
        # Small searches always get enough nodes to enumerate the whole tree,
        # so results on oracle-sized instances are exact regardless of effort.
        budget = max(node_budget, 1 << (n + 2)) if n <= 16 else node_budget
        search = _BranchAndBound(instance, order, budget)
        if feasible_start:
            search.seed(x, objective)
        try:
            best_obj, best_x = search.run()
            proven = True
        except _NodeBudgetExceeded:
            best_obj, best_x = search.best_obj, search.best_x
        if best_x is not None and (not feasible_start or best_obj >= objective):
            x, objective = best_x, int(best_obj)
            feasible_start = True
        elif proven and best_x is None:
            return _empty_solution(instance, feasible=False, proven=True)

    if not feasible_start:
        bound = relaxation_bound(instance)
        if bound is None:
            return _empty_solution(instance, feasible=False, proven=True)
        sol = _empty_solution(instance, feasible=False, proven=False)
        sol.selected = x.astype(np.int64)
        sol.selected_ids = [instance.item_ids[j] for j in np.flatnonzero(x)]
        sol.objective = objective
        sol.gap = max(0.0, float(int(bound + 1e-9) - objective))
        return sol

    x = _balance_polish(instance, np.asarray(x, dtype=bool), max_ls_moves)
    objective = int(instance.profits[x].sum())

    gap = 0.0
    if not proven:
        bound = relaxation_bound(instance)
        if bound is not None:
            gap = max(0.0, float(int(bound + 1e-9) - objective))

    return MkpSolution(
        selected=x.astype(np.int64),
        selected_ids=[instance.item_ids[j] for j in np.flatnonzero(x)],
        objective=objective,
        feasible=True,
        proven_optimal=proven,
        gap=gap,
    )


def brute_force(instance: MkpInstance, limit: int = 20) -> MkpSolution:
    """Exhaustive enumeration of every subset; the testing oracle."""
    instance.validate()
    n = instance.n_items
    if n > limit:
        raise ValueError(f"brute force is limited to {limit} items, got {n}")
    caps = instance.capacities

    if n == 0:
        return _empty_solution(instance, feasible=bool(np.all(caps >= 0)), proven=True)

    best_obj = -1
    best_mask = 0
    shifts = np.arange(n)
    for start in range(0, 1 << n, 1 << 16):
        stop = min(start + (1 << 16), 1 << n)
        masks = np.arange(start, stop, dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(np.int64)
        loads = bits @ instance.matrix.T
        feasible = np.all(loads <= caps, axis=1)
        if not np.any(feasible):
            continue
        objs = np.where(feasible, bits @ instance.profits, -1)
        i = int(np.argmax(objs))
        if int(objs[i]) > best_obj:
            best_obj = int(objs[i])
            best_mask = int(masks[i])

    if best_obj < 0:
        return _empty_solution(instance, feasible=False, proven=True)
    x = np.array([(best_mask >> j) & 1 for j in range(n)], dtype=np.int64)
    return MkpSolution(
        selected=x,
        selected_ids=[instance.item_ids[j] for j in np.flatnonzero(x)],
        objective=best_obj,
        feasible=True,
        proven_optimal=True,
        gap=0.0,
    )
