import json

import numpy as np
import pytest

from fedsched.fl_sim import NonIidSpec, make_noniid_pool
from fedsched.scoring import pooled_noniid_degree
from fedsched.subset_gen import (
    ScheduleState,
    SubsetGenConfig,
    enforce_min_size,
    generate_subsets,
    improve_nid,
    knapsack_capacity,
    random_subsets_like,
)


def paper_pool(kind, seed):
    spec = NonIidSpec(type=kind, n_clients=100, samples_per_client=60,
                      n_classes=10, seed=seed)
    clients, _ = make_noniid_pool(spec)
    return clients


def check_schedule_invariants(schedule, pool, config):
    ids = {cid for cid, _ in pool}
    hists = {cid: np.asarray(h) for cid, h in pool}
    covered = set()
    for subset in schedule.subsets:
        assert len(subset) == len(set(subset))
        assert len(subset) <= config.max_size
        covered |= set(subset)
    assert covered == ids
    for cid, count in schedule.selection_counts.items():
        assert 1 <= count <= config.x_star
    recount = {}
    for subset in schedule.subsets:
        for cid in subset:
            recount[cid] = recount.get(cid, 0) + 1
    assert recount == {k: v for k, v in schedule.selection_counts.items() if v > 0}
    for subset, nid in zip(schedule.subsets, schedule.per_subset_nid):
        assert nid == pytest.approx(pooled_noniid_degree([hists[c] for c in subset]))


class TestKnapsackCapacity:
    def test_balanced_reference_pool(self):
        # 100 one-label clients with 600 samples each: every class totals 6000
        hists = []
        for i in range(100):
            h = np.zeros(10, dtype=int)
            h[i % 10] = 600
            hists.append(h)
        assert knapsack_capacity(hists, 10) == 600

    def test_single_client(self):
        assert knapsack_capacity([np.array([5, 5])], 1) == 5

    def test_override_returned_verbatim(self):
        assert knapsack_capacity([np.array([5, 5])], 1, override=123) == 123

    def test_empty_and_zero_pools_rejected(self):
        with pytest.raises(ValueError):
            knapsack_capacity([], 10)
        with pytest.raises(ValueError):
            knapsack_capacity([np.zeros(3, dtype=int)], 1)


class TestGenerateSubsets:
    def test_perfect_pool_single_subset(self):
        pool = [(f"c{i}", np.eye(10, dtype=int)[i] * 30) for i in range(10)]
        schedule = generate_subsets(pool, SubsetGenConfig(n=10, delta=3, x_star=3))
        assert len(schedule.subsets) == 1
        assert sorted(schedule.subsets[0]) == sorted(cid for cid, _ in pool)
        assert schedule.per_subset_nid[0] == 0.0

    def test_single_client_pool(self):
        schedule = generate_subsets(
            [("only", np.array([3, 4]))], SubsetGenConfig(n=10, delta=3, x_star=3)
        )
        assert schedule.subsets == [["only"]]
        assert schedule.selection_counts["only"] == 1

    def test_paper_shape_counts_and_sizes(self):
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        for kind in ("one_label", "two_labels_9_1", "three_labels_5_4_1"):
            pool = paper_pool(kind, seed=4)
            schedule = generate_subsets(pool, config, seed=4)
            check_schedule_invariants(schedule, pool, config)
            n_subsets = len(schedule.subsets)
            low = int(np.ceil(100 / config.max_size))
            high = 2 * int(np.ceil(100 / config.n))
            assert low <= n_subsets <= high

    def test_type1_nonfinal_subsets_near_uniform(self):
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        schedule = generate_subsets(paper_pool("one_label", seed=9), config, seed=9)
        for nid in schedule.per_subset_nid[:-1]:
            assert nid <= config.nid_threshold

    def test_deterministic_for_fixed_seed(self):
        pool = paper_pool("three_labels_5_4_1", seed=2)
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        a = generate_subsets(pool, config, seed=5)
        b = generate_subsets(pool, config, seed=5)
        assert json.dumps(a.to_json_dict()) == json.dumps(b.to_json_dict())

    def test_different_seeds_may_reorder(self):
        pool = paper_pool("three_labels_5_4_1", seed=2)
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        a = generate_subsets(pool, config, seed=1)
        b = generate_subsets(pool, config, seed=2)
        check_schedule_invariants(a, pool, config)
        check_schedule_invariants(b, pool, config)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            generate_subsets([], SubsetGenConfig())

    def test_duplicate_ids_rejected(self):
        pool = [("a", np.array([1, 0])), ("a", np.array([0, 1]))]
        with pytest.raises(ValueError):
            generate_subsets(pool, SubsetGenConfig(n=1, delta=0, x_star=1))


class TestImproveNid:
    def make_state(self, histograms, counts, capacity):
        order = list(histograms)
        return ScheduleState(
            histograms={k: np.asarray(v) for k, v in histograms.items()},
            selection_counts=dict(counts),
            capacity=capacity,
            order=order,
        )

    def test_compensation_client_fills_missing_class(self):
        # subset covers classes 0 and 1; class 2 is empty; client z (already
        # scheduled once) holds only class-2 data and fixes the skew
        state = self.make_state(
            {"a": (10, 0, 0), "b": (0, 10, 0), "z": (0, 0, 10)},
            {"a": 0, "b": 0, "z": 1},
            capacity=10,
        )
        config = SubsetGenConfig(n=2, delta=1, x_star=3)
        before = ["a", "b"]
        after = improve_nid(before, state, config)
        assert set(after) == {"a", "b", "z"}
        hists = state.histograms
        assert pooled_noniid_degree([hists[c] for c in after]) < pooled_noniid_degree(
            [hists[c] for c in before]
        )

    def test_no_data_for_deficient_class_is_noop(self):
        state = self.make_state(
            {"a": (10, 0, 0), "b": (0, 10, 0), "z": (5, 5, 0)},
            {"a": 0, "b": 0, "z": 1},
            capacity=10,
        )
        config = SubsetGenConfig(n=2, delta=1, x_star=3)
        assert improve_nid(["a", "b"], state, config) == ["a", "b"]

    def test_exhausted_counts_are_noop(self):
        state = self.make_state(
            {"a": (10, 0, 0), "b": (0, 10, 0), "z": (0, 0, 10)},
            {"a": 0, "b": 0, "z": 3},
            capacity=10,
        )
        config = SubsetGenConfig(n=2, delta=1, x_star=3)
        assert improve_nid(["a", "b"], state, config) == ["a", "b"]


class TestEnforceMinSize:
    def test_grows_to_minimum_with_eligible_clients(self):
        histograms = {f"r{i}": np.array([2, 2]) for i in range(2)}
        counts = {f"r{i}": 0 for i in range(2)}
        for i in range(50):
            histograms[f"e{i}"] = np.array([3, 3])
            counts[f"e{i}"] = 1
        state = ScheduleState(
            histograms=histograms,
            selection_counts=counts,
            capacity=30,
            order=list(histograms),
        )
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        grown = enforce_min_size(["r0", "r1"], state, config)
        assert len(grown) == 7
        assert {"r0", "r1"} <= set(grown)

    def test_large_subset_unchanged(self):
        histograms = {f"c{i}": np.array([1, 1]) for i in range(9)}
        state = ScheduleState(
            histograms=histograms,
            selection_counts={cid: 0 for cid in histograms},
            capacity=20,
            order=list(histograms),
        )
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        big = [f"c{i}" for i in range(8)]
        assert enforce_min_size(big, state, config) == big

    def test_no_eligible_clients_returns_mandatory(self):
        histograms = {"a": np.array([1, 0]), "b": np.array([0, 1])}
        state = ScheduleState(
            histograms=histograms,
            selection_counts={"a": 0, "b": 0},
            capacity=5,
            order=["a", "b"],
        )
        config = SubsetGenConfig(n=5, delta=0, x_star=2)
        assert enforce_min_size(["a", "b"], state, config) == ["a", "b"]


class TestNidQualityVersusRandom:
    def test_scheduled_beats_random_baseline(self):
        config = SubsetGenConfig(n=10, delta=3, x_star=3)
        for kind in ("one_label", "two_labels_9_1", "three_labels_5_4_1"):
            scheduled, matched = [], []
            for seed in range(3):
                pool = paper_pool(kind, seed)
                schedule = generate_subsets(pool, config, seed=seed)
                nids = schedule.per_subset_nid[:-1]
                scheduled.extend(nids)
                sizes = [len(s) for s in schedule.subsets[:-1]]
                _, rand_nids = random_subsets_like(sizes, pool, seed=seed + 1000)
                matched.extend(rand_nids)
            assert np.mean(scheduled) < 0.5 * np.mean(matched)


class TestScheduleSerialization:
    def test_stacked_rows_shape(self):
        pool = [("a", np.array([2, 0])), ("b", np.array([0, 3]))]
        schedule = generate_subsets(pool, SubsetGenConfig(n=2, delta=1, x_star=1))
        rows = schedule.stacked_rows({cid: h for cid, h in pool})
        assert (0, 0, "a", 2) in rows
        assert (0, 1, "b", 3) in rows
        for subset_index, cls, cid, count in rows:
            assert count > 0

    def test_json_dict_fields(self):
        pool = [("a", np.array([1, 1]))]
        schedule = generate_subsets(pool, SubsetGenConfig(n=1, delta=0, x_star=1))
        payload = schedule.to_json_dict()
        assert set(payload) == {
            "subsets", "selection_counts", "per_subset_nid", "undersized_subsets"
        }


class TestConfigValidation:
    def test_min_size_must_be_positive(self):
        with pytest.raises(ValueError):
            SubsetGenConfig(n=3, delta=3)

    def test_thresholds_in_range(self):
        with pytest.raises(ValueError):
            SubsetGenConfig(nid_threshold=1.5)
        with pytest.raises(ValueError):
            SubsetGenConfig(fill_threshold=0.0)
