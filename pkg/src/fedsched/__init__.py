"""Multi-criteria client selection and fairness-guaranteed round scheduling
for federated learning services."""

from .fl_sim import (
    FedAvgTrainer,
    GlobalModel,
    ModelSpec,
    NonIidSpec,
    SyntheticDataset,
    aggregate,
    evaluate,
    local_train,
    make_noniid_pool,
)
from .mkp import MkpInstance, MkpSolution, brute_force, build_complementary, build_instance
from .mkp import solve as solve_mkp
from .pool_select import (
    Candidate,
    PoolSelectionResult,
    approximation_ratio,
    filter_candidates,
    min_budget,
    select_all,
    select_dp,
    select_greedy,
    select_random,
)
from .scheduler import (
    MetricsTimeline,
    PoolState,
    SchedulerConfig,
    run_period,
    run_random_task,
    run_task,
    update_pool,
)
from .scoring import (
    ReputationRecord,
    cost_from_score,
    noniid_degree,
    overall_score,
    pooled_noniid_degree,
    reputation_score,
)
from .subset_gen import (
    SubsetGenConfig,
    SubsetSchedule,
    generate_subsets,
    knapsack_capacity,
)

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "FedAvgTrainer",
    "GlobalModel",
    "MetricsTimeline",
    "MkpInstance",
    "MkpSolution",
    "ModelSpec",
    "NonIidSpec",
    "PoolSelectionResult",
    "PoolState",
    "ReputationRecord",
    "SchedulerConfig",
    "SubsetGenConfig",
    "SubsetSchedule",
    "SyntheticDataset",
    "aggregate",
    "approximation_ratio",
    "brute_force",
    "build_complementary",
    "build_instance",
    "cost_from_score",
    "evaluate",
    "filter_candidates",
    "generate_subsets",
    "knapsack_capacity",
    "local_train",
    "make_noniid_pool",
    "min_budget",
    "noniid_degree",
    "overall_score",
    "pooled_noniid_degree",
    "reputation_score",
    "run_period",
    "run_random_task",
    "run_task",
    "select_all",
    "select_dp",
    "select_greedy",
    "select_random",
    "solve_mkp",
    "update_pool",
]
