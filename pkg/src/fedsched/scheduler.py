"""Scheduling periods: run subsets through training rounds and manage the pool.

One period generates subsets over the active pool, executes them in order via
a pluggable trainer, records per-round quality/behavior for every scheduled
client, and then updates the pool: clients whose reputation (per-task quality
plus behavior) falls below the threshold are suspended for a configurable
number of periods, flagged-unavailable clients sit out one period, and
suspended clients whose counter runs out rejoin.

The trainer protocol is one method: ``run_round(round_index, client_ids)``
returning ``(quality_by_client, global_metric)``. Clients missing from the
quality map count as not having returned their update.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .scoring import pooled_noniid_degree, reputation_score, task_behavior, task_quality
from .subset_gen import SubsetGenConfig, generate_subsets


@dataclass
class SchedulerConfig:
    """Period-level policy knobs."""

    reputation_threshold: float = 0.5
    suspension_periods: int = 1
    dropout_rate: float = 0.0
    max_periods: int = 10
    max_rounds: int | None = None
    convergence_criterion: tuple[float, int] = (0.001, 3)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must lie in [0, 1]")
        if self.suspension_periods < 1:
            raise ValueError("suspension_periods must be at least 1")
        if self.max_periods < 1:
            raise ValueError("max_periods must be at least 1")


@dataclass
class TaskRecord:
    """Per-period accumulators for one client's rounds."""

    quality_rounds: list[float] = field(default_factory=list)
    behavior_rounds: list[int] = field(default_factory=list)

    def reputation(self) -> float:
        """Per-task reputation from this period's rounds.

        Quality averages over returned rounds only; a client that returned
        nothing gets zero quality, the harshest defensible value.
        """
        b_task = task_behavior(self.behavior_rounds) if self.behavior_rounds else 0.0
        q_task = task_quality(self.quality_rounds) if self.quality_rounds else 0.0
        return reputation_score(q_task, b_task)


@dataclass
class PoolState:
    """Who can be scheduled, who is sitting out, and this period's records."""

    active: set
    histograms: dict
    suspended: dict = field(default_factory=dict)
    availability: dict = field(default_factory=dict)
    reputations: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = self.active & set(self.suspended)
        if overlap:
            raise ValueError(f"clients both active and suspended: {sorted(overlap)}")


@dataclass
class RoundOutcome:
    """Bookkeeping for one executed round."""

    round_index: int
    subset_index: int
    participants: list
    returned: dict
    quality: dict
    global_metric: float
    subset_nid: float


@dataclass
class PeriodFairness:
    period: int
    min_selections: int
    max_selections: int
    n_rounds: int
    n_active: int
    n_suspended: int


@dataclass
class MetricsTimeline:
    """Per-round records plus per-period fairness stats for one task."""

    rounds: list[RoundOutcome] = field(default_factory=list)
    periods: list[PeriodFairness] = field(default_factory=list)
    round_period: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def final_accuracy(self) -> float:
        finite = [r.global_metric for r in self.rounds if math.isfinite(r.global_metric)]
        if not finite:
            raise ValueError("no finite metric recorded")
        return finite[-1]

    def accuracies(self) -> list[float]:
        return [r.global_metric for r in self.rounds]

    def rounds_to_accuracy(self, threshold: float) -> int | None:
        for r in self.rounds:
            if math.isfinite(r.global_metric) and r.global_metric >= threshold:
                return r.round_index + 1
        return None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["round", "period", "subset_index", "n_participants",
                 "n_returned", "accuracy", "subset_nid"]
            )
            for outcome, period in zip(self.rounds, self.round_period):
                writer.writerow([
                    outcome.round_index,
                    period,
                    outcome.subset_index,
                    len(outcome.participants),
                    sum(outcome.returned.values()),
                    f"{outcome.global_metric:.6f}",
                    f"{outcome.subset_nid:.6f}",
                ])


class NullTrainer:
    """Stand-in round executor for dry runs: everyone returns, metric is zero."""

    def run_round(self, round_index: int, client_ids) -> tuple[dict, float]:
        return {cid: 1.0 for cid in client_ids}, 0.0


def run_period(
    state: PoolState,
    subset_config: SubsetGenConfig,
    config: SchedulerConfig,
    trainer,
    *,
    period_index: int = 0,
    round_offset: int = 0,
    rounds_budget: int | None = None,
) -> tuple[PoolState, list[RoundOutcome]]:
    """Execute one scheduling period over the active pool.

    Dropouts are drawn once at period start; they stay in the schedule but
    return nothing, so their behavior records go to zero and the default
    reputation threshold suspends them for the following period. A trainer
    exception fails only that round (all participants marked not returned).
    """
    if not state.active:
        raise ValueError("cannot run a period with an empty active pool")

    rng = np.random.default_rng([config.seed, period_index])
    active_sorted = sorted(state.active)
    dropped = {cid for cid in active_sorted if rng.random() < config.dropout_rate}

    schedule = generate_subsets(
        [(cid, state.histograms[cid]) for cid in active_sorted],
        subset_config,
        seed=int(rng.integers(2 ** 31)),
    )

    state.reputations = {cid: TaskRecord() for cid in active_sorted}
    outcomes: list[RoundOutcome] = []
    last_metric = float("nan")
    for t, subset in enumerate(schedule.subsets):
        if rounds_budget is not None and len(outcomes) >= rounds_budget:
            break
        round_index = round_offset + t
        live = [cid for cid in subset if cid not in dropped]
        try:
            quality, metric = trainer.run_round(round_index, live)
        except Exception:
            quality, metric = {}, last_metric
        returned = {cid: cid in quality for cid in subset}
        for cid in subset:
            record = state.reputations[cid]
            record.behavior_rounds.append(1 if returned[cid] else 0)
            if returned[cid]:
                record.quality_rounds.append(quality[cid])
        if math.isfinite(metric):
            last_metric = metric
        outcomes.append(
            RoundOutcome(
                round_index=round_index,
                subset_index=t,
                participants=list(subset),
                returned=returned,
                quality={cid: quality[cid] for cid in subset if returned[cid]},
                global_metric=metric,
                subset_nid=schedule.per_subset_nid[t],
            )
        )

    new_state = update_pool(state, config)
    return new_state, outcomes


def update_pool(state: PoolState, config: SchedulerConfig) -> PoolState:
    """Apply end-of-period pool maintenance.

    Suspension counters tick down first (re-admitting anyone who reaches
    zero), then this period's reputations and availability flags move
    clients out of the active set.
    """
    active = set(state.active)
    suspended: dict = {}
    for cid, remaining in state.suspended.items():
        remaining -= 1
        if remaining <= 0:
            active.add(cid)
        else:
            suspended[cid] = remaining

    for cid in sorted(state.active):
        record = state.reputations.get(cid)
        if record is not None and record.reputation() < config.reputation_threshold:
            active.discard(cid)
            suspended[cid] = config.suspension_periods
        elif not state.availability.get(cid, True):
            active.discard(cid)
            suspended[cid] = 1

    return PoolState(
        active=active,
        histograms=state.histograms,
        suspended=suspended,
        availability={},
        reputations={},
    )


def run_task(
    pool,
    subset_config: SubsetGenConfig,
    config: SchedulerConfig,
    trainer,
) -> MetricsTimeline:
    """Repeat scheduling periods until convergence or the period/round budget.

    Convergence: the best metric seen must improve by at least the configured
    margin within the configured number of consecutive periods (patience 0
    disables the check).
    """
    pool = list(pool)
    if not pool:
        raise ValueError("cannot run a task on an empty pool")
    state = PoolState(
        active={cid for cid, _ in pool},
        histograms={cid: np.asarray(h) for cid, h in pool},
    )

    timeline = MetricsTimeline()
    min_improvement, patience = config.convergence_criterion
    best_metric = -float("inf")
    stalled = 0
    rounds_done = 0
    for period in range(config.max_periods):
        if not state.active:
            break
        budget = None
        if config.max_rounds is not None:
            budget = config.max_rounds - rounds_done
            if budget <= 0:
                break
        counts: dict = {}
        state, outcomes = run_period(
            state,
            subset_config,
            config,
            trainer,
            period_index=period,
            round_offset=rounds_done,
            rounds_budget=budget,
        )
        for outcome in outcomes:
            timeline.rounds.append(outcome)
            timeline.round_period.append(period)
            for cid in outcome.participants:
                counts[cid] = counts.get(cid, 0) + 1
        rounds_done += len(outcomes)
        timeline.periods.append(
            PeriodFairness(
                period=period,
                min_selections=min(counts.values()) if counts else 0,
                max_selections=max(counts.values()) if counts else 0,
                n_rounds=len(outcomes),
                n_active=len(state.active),
                n_suspended=len(state.suspended),
            )
        )

        if patience > 0 and outcomes:
            period_metric = max(
                (o.global_metric for o in outcomes if math.isfinite(o.global_metric)),
                default=float("nan"),
            )
            if math.isfinite(period_metric) and period_metric >= best_metric + min_improvement:
                best_metric = max(best_metric, period_metric)
                stalled = 0
            else:
                stalled += 1
                if stalled >= patience:
                    break
    return timeline


def run_random_task(
    pool,
    subset_size: int,
    n_rounds: int,
    config: SchedulerConfig,
    trainer,
) -> MetricsTimeline:
    """Baseline: each round draws a uniform subset of the pool.

    Sampled clients individually fail to return with the configured dropout
    probability. Produces the same timeline shape as ``run_task`` so the two
    arms can be compared record-for-record.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("cannot run a task on an empty pool")
    ids = sorted(cid for cid, _ in pool)
    histograms = {cid: np.asarray(h) for cid, h in pool}
    rng = np.random.default_rng([config.seed, 0x5EED])
    rounds_per_period = max(1, math.ceil(len(ids) / subset_size))

    timeline = MetricsTimeline()
    last_metric = float("nan")
    for r in range(n_rounds):
        size = min(subset_size, len(ids))
        subset = [ids[i] for i in rng.choice(len(ids), size=size, replace=False)]
        live = [cid for cid in subset if rng.random() >= config.dropout_rate]
        try:
            quality, metric = trainer.run_round(r, live)
        except Exception:
            quality, metric = {}, last_metric
        returned = {cid: cid in quality for cid in subset}
        if math.isfinite(metric):
            last_metric = metric
        timeline.rounds.append(
            RoundOutcome(
                round_index=r,
                subset_index=r % rounds_per_period,
                participants=subset,
                returned=returned,
                quality={cid: quality[cid] for cid in subset if returned[cid]},
                global_metric=metric,
                subset_nid=pooled_noniid_degree([histograms[cid] for cid in subset]),
            )
        )
        timeline.round_period.append(r // rounds_per_period)
    return timeline
