"""Command-line surface: generate pools, select pools, build schedules, simulate.

Exit codes: 0 on success, 2 for usage or validation problems, 1 for runtime
failures. Set FEDSCHED_LOG to control log verbosity. All randomness in one
invocation derives from the single --seed (or the config's seed), so paired
runs stay paired.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
import zlib

import click
import numpy as np

from . import files, fl_sim, pool_select, scheduler, scoring, subset_gen

logger = logging.getLogger("fedsched")

_TYPE_ALIASES = {
    "one-label": "one_label",
    "one_label": "one_label",
    "two-labels": "two_labels_9_1",
    "two_labels_9_1": "two_labels_9_1",
    "three-labels": "three_labels_5_4_1",
    "three_labels_5_4_1": "three_labels_5_4_1",
}


def _derived_seed(seed: int, tag: str) -> int:
    return int(np.random.default_rng([seed, zlib.crc32(tag.encode())]).integers(2 ** 31))


def _dump_json(obj, output) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if output is None or output == "-":
        click.echo(text, nl=False)
    else:
        files.atomic_write_text(output, text)


def _parse_float_list(value, length, what):
    if value is None:
        return None
    try:
        parts = [float(v) for v in value.split(",")]
    except ValueError as exc:
        raise click.UsageError(f"{what} must be comma-separated numbers") from exc
    if len(parts) != length:
        raise click.UsageError(f"{what} must have exactly {length} entries")
    return parts


@click.group()
def main() -> None:
    """Client selection and round scheduling for federated learning tasks."""
    logging.basicConfig(level=os.environ.get("FEDSCHED_LOG", "WARNING"))


@main.group()
def pool() -> None:
    """Build and select client pools."""


def _synthesize_records(clients, seed, cost_a, cost_b):
    """Random resource scores plus truthful data-distribution scores."""
    rng = np.random.default_rng([seed, zlib.crc32(b"scores")])
    records = []
    weights = np.ones(scoring.N_CRITERIA)
    for cid, hist in clients:
        resource = rng.uniform(0.05, 1.0, size=8)
        scores = np.concatenate(
            [resource, [scoring.data_dist_score(hist)], [0.5, 0.5]]
        )
        total = scoring.overall_score(weights, scores)
        records.append(
            files.ClientRecord(
                id=cid,
                scores=scores,
                cost=max(1, scoring.cost_from_score(total, cost_a, cost_b)),
                histogram=np.asarray(hist),
                available=True,
            )
        )
    return records


@pool.command("generate")
@click.option("--type", "pool_type", required=True,
              type=click.Choice(sorted(_TYPE_ALIASES)), help="Label-skew pattern.")
@click.option("--clients", type=int, default=100, show_default=True)
@click.option("--classes", type=int, default=10, show_default=True)
@click.option("--samples", type=int, default=60, show_default=True,
              help="Samples per client.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cost-a", type=float, default=2.0, show_default=True)
@click.option("--cost-b", type=float, default=5.0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None,
              help="Client file to write (stdout if omitted).")
def pool_generate(pool_type, clients, classes, samples, seed, cost_a, cost_b, output):
    """Generate a synthetic non-iid client pool file."""
    try:
        spec = fl_sim.NonIidSpec(
            type=_TYPE_ALIASES[pool_type],
            n_clients=clients,
            samples_per_client=samples,
            n_classes=classes,
            seed=_derived_seed(seed, "pool"),
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    generated, _ = fl_sim.make_noniid_pool(spec)
    records = _synthesize_records(generated, seed, cost_a, cost_b)
    payload = {
        "n_classes": classes,
        "clients": [
            {
                "id": rec.id,
                "scores": [float(s) for s in rec.scores],
                "cost": int(rec.cost),
                "histogram": [int(v) for v in rec.histogram],
                "available": rec.available,
            }
            for rec in records
        ],
    }
    _dump_json(payload, output)


def _load_candidates(input_path, weights):
    try:
        records, n_classes = files.load_client_file(input_path)
    except files.ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    w = scoring.as_weights(weights if weights is not None else np.ones(scoring.N_CRITERIA))
    candidates = [
        pool_select.Candidate(
            id=rec.id,
            score=scoring.overall_score(w, rec.scores),
            cost=rec.cost,
            score_vector=rec.scores,
        )
        for rec in records
    ]
    return candidates, records, n_classes


@pool.command("select")
@click.option("--input", "-i", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--budget", type=int, required=True)
@click.option("--method", type=click.Choice(["dp", "greedy", "random", "all"]),
              default="all", show_default=True)
@click.option("--min-clients", type=int, default=None,
              help="Required minimum pool size; budget is checked against it.")
@click.option("--thresholds", default=None,
              help="Comma-separated per-criterion minimums (11 values).")
@click.option("--weights", default=None,
              help="Comma-separated criterion weights (11 values).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
def pool_select_cmd(input_path, budget, method, min_clients, thresholds, weights, seed, output):
    """Select an initial client pool within a cost budget."""
    if budget < 0:
        raise click.UsageError("budget must be non-negative")
    weights_list = _parse_float_list(weights, scoring.N_CRITERIA, "--weights")
    thresholds_list = _parse_float_list(thresholds, scoring.N_CRITERIA, "--thresholds")
    candidates, _, _ = _load_candidates(input_path, weights_list)
    filtered = pool_select.filter_candidates(candidates, thresholds_list)

    if min_clients is not None:
        if len(filtered) < min_clients:
            raise click.UsageError(
                f"only {len(filtered)} candidates pass the thresholds, "
                f"need at least {min_clients}"
            )
        needed = pool_select.min_budget(filtered, min_clients)
        if budget < needed:
            raise click.UsageError(
                f"budget {budget} cannot guarantee {min_clients} clients; "
                f"raise it to at least {needed} (sum of the {min_clients} largest costs)"
            )

    if method == "all":
        results = pool_select.select_all(filtered, budget, seed=_derived_seed(seed, "select"))
        payload = {name: res.to_json_dict() for name, res in results.items()}
    else:
        if method == "dp":
            res = pool_select.select_dp(filtered, budget)
        elif method == "greedy":
            res = pool_select.select_greedy(filtered, budget)
        else:
            res = pool_select.select_random(filtered, budget, seed=_derived_seed(seed, "select"))
        payload = res.to_json_dict()
    _dump_json(payload, output)


@main.command("subsets")
@click.option("--input", "-i", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--n", type=int, default=10, show_default=True, help="Target subset size.")
@click.option("--delta", type=int, default=3, show_default=True)
@click.option("--x-star", type=int, default=3, show_default=True,
              help="Max selections per client per period.")
@click.option("--nid-threshold", type=float, default=0.2, show_default=True)
@click.option("--fill-threshold", type=float, default=0.8, show_default=True)
@click.option("--capacity", type=int, default=None, help="Override knapsack capacity.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--baseline", type=click.Choice(["none", "random"]), default="none",
              show_default=True, help="Also emit size-matched random subsets.")
@click.option("--output", "-o", type=click.Path(dir_okay=False), default=None)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None,
              help="Stacked-histogram CSV (subset_index, class, client_id, count).")
def subsets_cmd(input_path, n, delta, x_star, nid_threshold, fill_threshold,
                capacity, seed, baseline, output, csv_path):
    """Generate one scheduling period's subsets from a client file."""
    try:
        records, n_classes = files.load_client_file(input_path)
        config = subset_gen.SubsetGenConfig(
            n=n, delta=delta, x_star=x_star,
            nid_threshold=nid_threshold, fill_threshold=fill_threshold,
            capacity_override=capacity,
        )
    except (files.ConfigError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc

    pool_pairs = [(rec.id, rec.histogram) for rec in records if rec.available]
    schedule = subset_gen.generate_subsets(pool_pairs, config, seed=_derived_seed(seed, "subsets"))
    payload = schedule.to_json_dict()
    payload["n_classes"] = n_classes
    if baseline == "random":
        sizes = [len(s) for s in schedule.subsets]
        rand_subsets, rand_nids = subset_gen.random_subsets_like(
            sizes, pool_pairs, seed=_derived_seed(seed, "baseline")
        )
        payload["baseline"] = {
            "subsets": rand_subsets,
            "per_subset_nid": rand_nids,
        }
    _dump_json(payload, output)

    if csv_path is not None:
        histograms = {rec.id: rec.histogram for rec in records}
        files.atomic_write_csv(
            csv_path,
            ["subset_index", "class", "client_id", "count"],
            schedule.stacked_rows(histograms),
        )


def _apply_pool_select_stage(cfg, clients, seed):
    """Optional stage-1 filtering of the generated pool before scheduling."""
    params = cfg.pool_select
    records = _synthesize_records(clients, seed, params.cost_a, params.cost_b)
    weights = params.weights if params.weights is not None else [1.0] * scoring.N_CRITERIA
    w = scoring.as_weights(weights)
    candidates = [
        pool_select.Candidate(
            id=rec.id,
            score=scoring.overall_score(w, rec.scores),
            cost=rec.cost,
            score_vector=rec.scores,
        )
        for rec in records
    ]
    filtered = pool_select.filter_candidates(candidates, params.thresholds)
    if len(filtered) < params.min_clients:
        raise click.UsageError(
            f"pool_select: only {len(filtered)} candidates pass, "
            f"need {params.min_clients}"
        )
    needed = pool_select.min_budget(filtered, params.min_clients)
    if params.budget < needed:
        raise click.UsageError(
            f"pool_select: budget {params.budget} below the minimum {needed} "
            f"required for {params.min_clients} clients"
        )
    if params.method == "dp":
        result = pool_select.select_dp(filtered, params.budget)
    elif params.method == "greedy":
        result = pool_select.select_greedy(filtered, params.budget)
    else:
        result = pool_select.select_random(filtered, params.budget,
                                           seed=_derived_seed(seed, "select"))
    chosen = set(result.selected_ids)
    return [(cid, h) for cid, h in clients if cid in chosen]


@main.command("simulate")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--outdir", type=click.Path(file_okay=False), default="out",
              show_default=True)
@click.option("--periods", type=int, default=None, help="Override max periods.")
@click.option("--rounds", type=int, default=None, help="Override the round budget.")
@click.option("--no-train", is_flag=True,
              help="Dry run: schedule only, emit fairness stats without training.")
def simulate_cmd(config_path, outdir, periods, rounds, no_train):
    """Run the scheduled arm and a random-selection baseline on one config."""
    try:
        cfg = files.load_run_config(config_path)
    except files.ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    if periods is not None:
        cfg.scheduler.max_periods = periods
    if rounds is not None:
        cfg.scheduler.max_rounds = rounds

    pool_spec = cfg.pool
    clients, dataset = fl_sim.make_noniid_pool(
        pool_spec,
        dim=cfg.training.dim,
        separation=cfg.training.separation,
        test_samples=cfg.training.test_samples,
        size_spread=cfg.training.size_spread,
    )
    if cfg.pool_select is not None:
        clients = _apply_pool_select_stage(cfg, clients, cfg.seed)

    os.makedirs(outdir, exist_ok=True)
    cfg.scheduler.seed = _derived_seed(cfg.seed, "scheduler")

    if no_train:
        timeline = scheduler.run_task(
            clients, cfg.subsets, cfg.scheduler, scheduler.NullTrainer()
        )
        timeline.write_csv(os.path.join(outdir, "scheduled.csv"))
        summary = {
            "mode": "dry-run",
            "rounds": len(timeline),
            "fairness": [vars(p) for p in timeline.periods],
            "seed": cfg.seed,
        }
        files.atomic_write_json(os.path.join(outdir, "summary.json"), summary)
        click.echo(f"dry run: {len(timeline)} rounds over {len(timeline.periods)} periods")
        return

    model_spec = fl_sim.ModelSpec(
        kind=cfg.training.model,
        dim=cfg.training.dim,
        n_classes=pool_spec.n_classes,
        hidden=cfg.training.hidden,
    )

    def make_trainer():
        return fl_sim.FedAvgTrainer(
            dataset,
            model_spec,
            epochs=cfg.training.epochs,
            batch_size=cfg.training.batch_size,
            lr=cfg.training.lr,
            lr_decay=cfg.training.lr_decay,
            server_lr=cfg.training.server_lr,
            similarity_on=cfg.training.similarity_on,
            seed=_derived_seed(cfg.seed, "trainer"),
        )

    sched_timeline = scheduler.run_task(clients, cfg.subsets, cfg.scheduler, make_trainer())
    rand_config = dataclasses.replace(
        cfg.scheduler, seed=_derived_seed(cfg.seed, "random-arm")
    )
    rand_timeline = scheduler.run_random_task(
        clients, cfg.subsets.n, len(sched_timeline), rand_config, make_trainer()
    )

    sched_timeline.write_csv(os.path.join(outdir, "scheduled.csv"))
    rand_timeline.write_csv(os.path.join(outdir, "random.csv"))
    target = cfg.training.target_accuracy
    summary = {
        "rounds": len(sched_timeline),
        "scheduled_final_acc": sched_timeline.final_accuracy,
        "random_final_acc": rand_timeline.final_accuracy,
        "margin": sched_timeline.final_accuracy - rand_timeline.final_accuracy,
        "rounds_to_accuracy": {
            "threshold": target,
            "scheduled": sched_timeline.rounds_to_accuracy(target),
            "random": rand_timeline.rounds_to_accuracy(target),
        },
        "fairness": [vars(p) for p in sched_timeline.periods],
        "seed": cfg.seed,
    }
    files.atomic_write_json(os.path.join(outdir, "summary.json"), summary)
    click.echo(
        f"scheduled {summary['scheduled_final_acc']:.4f} vs "
        f"random {summary['random_final_acc']:.4f} after {summary['rounds']} rounds"
    )


@main.command("report")
@click.option("--summary", "summary_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def report_cmd(summary_path):
    """Pretty-print a simulation summary."""
    try:
        with open(summary_path) as fh:
            summary = json.load(fh)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"{summary_path}: invalid JSON ({exc})") from exc

    click.echo(f"rounds executed : {summary.get('rounds')}")
    if "scheduled_final_acc" in summary:
        click.echo(f"scheduled final : {summary['scheduled_final_acc']:.4f}")
        click.echo(f"random final    : {summary['random_final_acc']:.4f}")
        click.echo(f"margin          : {summary['margin']:+.4f}")
        rta = summary.get("rounds_to_accuracy", {})
        click.echo(
            f"rounds to {rta.get('threshold', 0):.2f} : "
            f"scheduled={rta.get('scheduled')} random={rta.get('random')}"
        )
    for period in summary.get("fairness", []):
        click.echo(
            f"period {period['period']}: rounds={period['n_rounds']} "
            f"selections per client in [{period['min_selections']}, "
            f"{period['max_selections']}] active={period['n_active']} "
            f"suspended={period['n_suspended']}"
        )


if __name__ == "__main__":
    sys.exit(main())
