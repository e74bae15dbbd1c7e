import json

import numpy as np
import pytest
from click.testing import CliRunner

from fedsched.cli import main
from fedsched.files import load_client_file

from conftest import TABLE_COSTS, TABLE_SCORES, client_file_payload


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def table_file(tmp_path):
    """Reference selection instance as a client file: 11 equal criterion
    scores per client so the uniform-weight overall score hits the table."""
    payload = client_file_payload(
        scores_list=[[s / 11] * 11 for s in TABLE_SCORES],
        costs=TABLE_COSTS,
        histograms=[[10, 10] for _ in TABLE_SCORES],
        n_classes=2,
    )
    path = tmp_path / "table.json"
    path.write_text(json.dumps(payload))
    return path


def small_pool_file(tmp_path, n_clients=12, n_classes=4):
    rng = np.random.default_rng(0)
    hists = []
    for i in range(n_clients):
        h = [0] * n_classes
        h[i % n_classes] = 20
        hists.append(h)
    payload = client_file_payload(
        scores_list=[rng.uniform(0.1, 1.0, 11).tolist() for _ in range(n_clients)],
        costs=[int(c) for c in rng.integers(5, 20, n_clients)],
        histograms=hists,
        n_classes=n_classes,
    )
    path = tmp_path / "small.json"
    path.write_text(json.dumps(payload))
    return path


class TestPoolGenerate:
    def test_generates_one_label_pool(self, runner, tmp_path):
        out = tmp_path / "pool.json"
        result = runner.invoke(main, [
            "pool", "generate", "--type", "one-label", "--clients", "100",
            "--classes", "10", "--seed", "7", "-o", str(out),
        ])
        assert result.exit_code == 0, result.output
        records, n_classes = load_client_file(out)
        assert n_classes == 10 and len(records) == 100
        for rec in records:
            assert (rec.histogram > 0).sum() == 1
            assert rec.histogram.sum() == 60

    def test_missing_type_is_usage_error(self, runner):
        result = runner.invoke(main, ["pool", "generate", "--clients", "5"])
        assert result.exit_code == 2

    def test_byte_identical_across_runs(self, runner, tmp_path):
        args = ["pool", "generate", "--type", "two-labels", "--clients", "20",
                "--seed", "3"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.exit_code == 0 and a.output == b.output

    def test_round_trip_preserves_pool(self, runner, tmp_path):
        out = tmp_path / "pool.json"
        runner.invoke(main, ["pool", "generate", "--type", "three-labels",
                             "--clients", "30", "--seed", "1", "-o", str(out)])
        first, _ = load_client_file(out)
        again, _ = load_client_file(out)
        for a, b in zip(first, again):
            assert a.id == b.id
            assert np.array_equal(a.histogram, b.histogram)
            assert np.array_equal(a.scores, b.scores)


class TestPoolSelect:
    def test_method_all_reproduces_reference_results(self, runner, table_file):
        result = runner.invoke(main, [
            "pool", "select", "-i", str(table_file), "--budget", "100",
            "--method", "all",
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert sorted(payload["dp"]["selected_ids"]) == [
            "c000", "c001", "c002", "c004", "c005", "c008"]
        assert payload["dp"]["total_score"] == pytest.approx(36.85, abs=1e-9)
        assert payload["dp"]["total_cost"] == 100
        assert sorted(payload["greedy"]["selected_ids"]) == [
            "c000", "c002", "c003", "c004", "c005"]
        assert payload["greedy"]["total_score"] == pytest.approx(32.78, abs=1e-9)
        assert round(payload["greedy"]["approx_ratio"], 2) == 0.11
        assert payload["dp"]["approx_ratio"] == 0.0
        assert payload["random"]["total_score"] <= payload["dp"]["total_score"]

    def test_zero_budget_selects_nobody(self, runner, table_file):
        result = runner.invoke(main, [
            "pool", "select", "-i", str(table_file), "--budget", "0",
            "--method", "dp",
        ])
        assert result.exit_code == 0
        assert json.loads(result.output)["selected_ids"] == []

    def test_full_budget_selects_everyone(self, runner, table_file):
        result = runner.invoke(main, [
            "pool", "select", "-i", str(table_file), "--budget", "151",
            "--method", "dp",
        ])
        payload = json.loads(result.output)
        assert len(payload["selected_ids"]) == 10
        assert payload["total_score"] == pytest.approx(53.42, abs=1e-9)

    def test_infeasible_min_clients_cites_required_budget(self, runner, table_file):
        result = runner.invoke(main, [
            "pool", "select", "-i", str(table_file), "--budget", "50",
            "--min-clients", "3",
        ])
        assert result.exit_code == 2
        assert "54" in result.output

    def test_malformed_file_is_validation_error(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"clients": [], "n_classes": 0}')
        result = runner.invoke(main, [
            "pool", "select", "-i", str(bad), "--budget", "10",
        ])
        assert result.exit_code == 2


class TestSubsets:
    def test_schedule_covers_pool(self, runner, tmp_path):
        pool_file = small_pool_file(tmp_path)
        result = runner.invoke(main, [
            "subsets", "-i", str(pool_file), "--n", "4", "--delta", "1",
            "--x-star", "3", "--seed", "5",
        ])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        covered = set()
        for subset in payload["subsets"]:
            assert len(subset) <= 5
            covered |= set(subset)
        assert len(covered) == 12
        assert all(1 <= v <= 3 for v in payload["selection_counts"].values())

    def test_fixed_seed_identical_bytes(self, runner, tmp_path):
        pool_file = small_pool_file(tmp_path)
        args = ["subsets", "-i", str(pool_file), "--n", "4", "--delta", "1",
                "--seed", "9"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.exit_code == 0 and a.output == b.output

    def test_small_pool_relaxed_single_subset(self, runner, tmp_path):
        pool_file = small_pool_file(tmp_path, n_clients=5)
        result = runner.invoke(main, [
            "subsets", "-i", str(pool_file), "--n", "10", "--delta", "3",
        ])
        payload = json.loads(result.output)
        assert len(payload["subsets"]) == 1
        assert len(payload["subsets"][0]) == 5

    def test_baseline_and_csv_outputs(self, runner, tmp_path):
        pool_file = small_pool_file(tmp_path)
        csv_path = tmp_path / "stacks.csv"
        out_path = tmp_path / "schedule.json"
        result = runner.invoke(main, [
            "subsets", "-i", str(pool_file), "--n", "4", "--delta", "1",
            "--baseline", "random", "-o", str(out_path), "--csv", str(csv_path),
        ])
        assert result.exit_code == 0
        payload = json.loads(out_path.read_text())
        assert len(payload["baseline"]["subsets"]) == len(payload["subsets"])
        header = csv_path.read_text().splitlines()[0]
        assert header == "subset_index,class,client_id,count"


class TestSimulate:
    def write_config(self, tmp_path, **overrides):
        config = {
            "seed": 5,
            "pool": {"type": "one_label", "n_clients": 12, "n_classes": 4,
                     "samples_per_client": 20},
            "subsets": {"n": 4, "delta": 1, "x_star": 3},
            "scheduler": {"max_periods": 2, "dropout_rate": 0.0,
                          "max_rounds": 6},
            "training": {"model": "logistic", "epochs": 1, "lr": 0.1,
                         "test_samples": 200, "dim": 8},
        }
        config.update(overrides)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(config))
        return path

    def test_dry_run_emits_fairness_stats(self, runner, tmp_path):
        config = self.write_config(tmp_path)
        outdir = tmp_path / "out"
        result = runner.invoke(main, [
            "simulate", "--config", str(config), "--outdir", str(outdir),
            "--periods", "1", "--no-train",
        ])
        assert result.exit_code == 0, result.output
        summary = json.loads((outdir / "summary.json").read_text())
        assert summary["mode"] == "dry-run"
        assert len(summary["fairness"]) == 1
        assert summary["fairness"][0]["min_selections"] >= 1
        assert (outdir / "scheduled.csv").exists()

    def test_training_run_writes_both_arms(self, runner, tmp_path):
        config = self.write_config(tmp_path)
        outdir = tmp_path / "out"
        result = runner.invoke(main, [
            "simulate", "--config", str(config), "--outdir", str(outdir),
        ])
        assert result.exit_code == 0, result.output
        summary = json.loads((outdir / "summary.json").read_text())
        assert 0.0 <= summary["scheduled_final_acc"] <= 1.0
        assert 0.0 <= summary["random_final_acc"] <= 1.0
        scheduled = (outdir / "scheduled.csv").read_text().splitlines()
        random_arm = (outdir / "random.csv").read_text().splitlines()
        assert len(scheduled) == len(random_arm) == summary["rounds"] + 1

    def test_identical_configs_give_identical_summaries(self, runner, tmp_path):
        config = self.write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for outdir in (out_a, out_b):
            result = runner.invoke(main, [
                "simulate", "--config", str(config), "--outdir", str(outdir),
            ])
            assert result.exit_code == 0, result.output
        assert (out_a / "summary.json").read_bytes() == (out_b / "summary.json").read_bytes()
        assert (out_a / "scheduled.csv").read_bytes() == (out_b / "scheduled.csv").read_bytes()

    def test_invalid_dropout_is_validation_error(self, runner, tmp_path):
        config = self.write_config(
            tmp_path, scheduler={"dropout_rate": 1.5, "max_periods": 1}
        )
        result = runner.invoke(main, ["simulate", "--config", str(config)])
        assert result.exit_code == 2
        assert "dropout" in result.output

    def test_unknown_config_key_is_validation_error(self, runner, tmp_path):
        config = self.write_config(tmp_path, typo_section={"x": 1})
        result = runner.invoke(main, ["simulate", "--config", str(config)])
        assert result.exit_code == 2
        assert "typo_section" in result.output


class TestReport:
    def test_prints_summary(self, runner, tmp_path):
        summary = {
            "rounds": 6,
            "scheduled_final_acc": 0.8,
            "random_final_acc": 0.7,
            "margin": 0.1,
            "rounds_to_accuracy": {"threshold": 0.5, "scheduled": 3, "random": 5},
            "fairness": [{"period": 0, "min_selections": 1, "max_selections": 2,
                          "n_rounds": 3, "n_active": 12, "n_suspended": 0}],
        }
        path = tmp_path / "summary.json"
        path.write_text(json.dumps(summary))
        result = runner.invoke(main, ["report", "--summary", str(path)])
        assert result.exit_code == 0
        assert "scheduled final : 0.8000" in result.output
        assert "period 0" in result.output
