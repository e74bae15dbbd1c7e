"""On-disk formats: the client pool JSON schema, run configs, atomic writes."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .fl_sim import NonIidSpec
from .scheduler import SchedulerConfig
from .scoring import N_CRITERIA
from .subset_gen import SubsetGenConfig


class ConfigError(ValueError):
    """A configuration or input file failed validation."""


@dataclass
class ClientRecord:
    """One row of the client pool file."""

    id: str
    scores: np.ndarray
    cost: int
    histogram: np.ndarray
    available: bool = True


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def atomic_write_csv(path, header, rows) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_client_file(path, records, n_classes: int) -> None:
    payload = {
        "n_classes": int(n_classes),
        "clients": [
            {
                "id": rec.id,
                "scores": [float(s) for s in rec.scores],
                "cost": int(rec.cost),
                "histogram": [int(v) for v in rec.histogram],
                "available": bool(rec.available),
            }
            for rec in records
        ],
    }
    atomic_write_json(path, payload)


def load_client_file(path) -> tuple[list[ClientRecord], int]:
    """Parse and validate a client pool file; raises ConfigError on any defect."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(data) - {"clients", "n_classes"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    if "clients" not in data or "n_classes" not in data:
        raise ConfigError(f"{path}: 'clients' and 'n_classes' are required")

    n_classes = data["n_classes"]
    if not isinstance(n_classes, int) or n_classes < 1:
        raise ConfigError(f"{path}: n_classes must be a positive integer")

    records = []
    seen = set()
    for i, row in enumerate(data["clients"]):
        where = f"{path}: clients[{i}]"
        if not isinstance(row, dict):
            raise ConfigError(f"{where}: must be an object")
        unknown = set(row) - {"id", "scores", "cost", "histogram", "available"}
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        try:
            cid = str(row["id"])
            scores = np.asarray(row["scores"], dtype=float)
            cost = row["cost"]
            hist = np.asarray(row["histogram"], dtype=np.int64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        if cid in seen:
            raise ConfigError(f"{where}: duplicate id {cid!r}")
        seen.add(cid)
        if scores.shape != (N_CRITERIA,):
            raise ConfigError(f"{where}: scores must have exactly {N_CRITERIA} entries")
        if np.any(scores < 0) or np.any(scores > 1) or not np.all(np.isfinite(scores)):
            raise ConfigError(f"{where}: scores must lie in [0, 1]")
        if not isinstance(cost, int) or cost < 1:
            raise ConfigError(f"{where}: cost must be a positive integer")
        if hist.shape != (n_classes,):
            raise ConfigError(f"{where}: histogram must have {n_classes} entries")
        if np.any(hist < 0):
            raise ConfigError(f"{where}: histogram counts must be non-negative")
        records.append(
            ClientRecord(
                id=cid,
                scores=scores,
                cost=int(cost),
                histogram=hist,
                available=bool(row.get("available", True)),
            )
        )
    return records, n_classes


@dataclass
class TrainingParams:
    """Trainer and dataset-geometry settings for a simulation run.

    Defaults are the desk-scale comparison regime: a task hard enough that
    skewed random rounds keep hurting, with local training long enough for
    client drift to matter.
    """

    model: str = "mlp"
    hidden: int = 32
    epochs: int = 5
    batch_size: int = 16
    lr: float = 0.2
    lr_decay: float = 0.99
    server_lr: float = 1.0
    dim: int = 16
    separation: float = 1.5
    test_samples: int = 2500
    size_spread: float = 0.5
    similarity_on: str = "weights"
    target_accuracy: float = 0.4


@dataclass
class PoolSelectParams:
    """Optional stage-1 selection applied before scheduling."""

    budget: int = 0
    min_clients: int = 1
    method: str = "dp"
    cost_a: float = 2.0
    cost_b: float = 5.0
    weights: list | None = None
    thresholds: list | None = None


@dataclass
class RunConfig:
    """Everything one `simulate` invocation needs."""

    seed: int = 0
    pool: NonIidSpec = field(
        default_factory=lambda: NonIidSpec(type="one_label", n_clients=100)
    )
    subsets: SubsetGenConfig = field(default_factory=SubsetGenConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    training: TrainingParams = field(default_factory=TrainingParams)
    pool_select: PoolSelectParams | None = None


def _check_keys(section: dict, allowed, path: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: must be an object")
    return value


def parse_run_config(data: dict, path: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(
        data,
        {"seed", "pool", "subsets", "scheduler", "training", "pool_select"},
        path,
    )
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"{path}.seed: must be an integer")

    pool_raw = _section(data, "pool")
    _check_keys(
        pool_raw,
        {"type", "n_clients", "samples_per_client", "n_classes", "seed"},
        f"{path}.pool",
    )
    try:
        pool = NonIidSpec(
            type=pool_raw.get("type", "one_label"),
            n_clients=pool_raw.get("n_clients", 100),
            samples_per_client=pool_raw.get("samples_per_client", 60),
            n_classes=pool_raw.get("n_classes", 10),
            seed=pool_raw.get("seed", seed),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.pool: {exc}") from exc

    subset_raw = _section(data, "subsets")
    _check_keys(
        subset_raw,
        {"n", "delta", "x_star", "nid_threshold", "fill_threshold", "capacity_override"},
        f"{path}.subsets",
    )
    try:
        subsets = SubsetGenConfig(**subset_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.subsets: {exc}") from exc

    sched_raw = dict(_section(data, "scheduler"))
    _check_keys(
        sched_raw,
        {"reputation_threshold", "suspension_periods", "dropout_rate",
         "max_periods", "max_rounds", "convergence"},
        f"{path}.scheduler",
    )
    convergence_raw = sched_raw.pop("convergence", {}) or {}
    _check_keys(
        convergence_raw, {"min_improvement", "patience"}, f"{path}.scheduler.convergence"
    )
    criterion = (
        float(convergence_raw.get("min_improvement", 0.001)),
        int(convergence_raw.get("patience", 0)),
    )
    try:
        scheduler = SchedulerConfig(
            convergence_criterion=criterion, seed=seed, **sched_raw
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.scheduler: {exc}") from exc

    training_raw = _section(data, "training")
    _check_keys(
        training_raw,
        {"model", "hidden", "epochs", "batch_size", "lr", "lr_decay", "server_lr",
         "dim", "separation", "test_samples", "size_spread", "similarity_on",
         "target_accuracy"},
        f"{path}.training",
    )
    try:
        training = TrainingParams(**training_raw)
    except TypeError as exc:
        raise ConfigError(f"{path}.training: {exc}") from exc
    if training.model not in ("logistic", "mlp"):
        raise ConfigError(f"{path}.training.model: must be 'logistic' or 'mlp'")

    pool_select = None
    if data.get("pool_select") is not None:
        select_raw = _section(data, "pool_select")
        _check_keys(
            select_raw,
            {"budget", "min_clients", "method", "cost_a", "cost_b",
             "weights", "thresholds"},
            f"{path}.pool_select",
        )
        try:
            pool_select = PoolSelectParams(**select_raw)
        except TypeError as exc:
            raise ConfigError(f"{path}.pool_select: {exc}") from exc
        if pool_select.method not in ("dp", "greedy", "random"):
            raise ConfigError(f"{path}.pool_select.method: must be dp, greedy or random")

    return RunConfig(
        seed=seed,
        pool=pool,
        subsets=subsets,
        scheduler=scheduler,
        training=training,
        pool_select=pool_select,
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    return parse_run_config(data, path=str(path))
