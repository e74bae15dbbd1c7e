"""Desk-scale federated training backend.

Synthetic classification pools with the three label-skew patterns used in the
experiments (single label; two labels 9:1; three labels 5:4:1 with a seeded
minority of two-label clients), plus a small differentiable classifier and a
FedAvg trainer that plugs into the scheduler as its round executor.

Data are class-conditional Gaussian blobs: class means sit on seeded random
orthogonal directions, unit noise. Cheap enough to train in seconds while
still punishing skewed round subsets the way real label-skew does.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .scoring import model_similarity

NONIID_TYPES = ("one_label", "two_labels_9_1", "three_labels_5_4_1")

_TYPE_RATIOS = {
    "one_label": (1.0,),
    "two_labels_9_1": (0.9, 0.1),
    "three_labels_5_4_1": (0.5, 0.4, 0.1),
}

_MINORITY_RATIOS = ((5 / 6, 1 / 6), (4 / 5, 1 / 5))


class TrainingDiverged(RuntimeError):
    """Raised when a client's local loss stops being finite."""


@dataclass
class NonIidSpec:
    """Shape of a synthetic client pool."""

    type: str
    n_clients: int
    samples_per_client: int = 60
    n_classes: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.type not in NONIID_TYPES:
            raise ValueError(f"type must be one of {NONIID_TYPES}, got {self.type!r}")
        if self.n_clients < 1:
            raise ValueError("need at least one client")
        if self.samples_per_client < 1:
            raise ValueError("need at least one sample per client")
        if self.n_classes < len(_TYPE_RATIOS[self.type]):
            raise ValueError("fewer classes than labels per client")


@dataclass
class SyntheticDataset:
    """Per-client arrays plus a held-out iid test split."""

    client_features: dict
    client_labels: dict
    test_features: np.ndarray
    test_labels: np.ndarray
    n_classes: int
    dim: int
    class_means: np.ndarray

    def client_sample_count(self, cid) -> int:
        return len(self.client_labels[cid])


@dataclass(frozen=True)
class ModelSpec:
    """Flat-parameter classifier: multinomial logistic or one hidden layer."""

    kind: str = "logistic"
    dim: int = 16
    n_classes: int = 10
    hidden: int = 32

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "mlp"):
            raise ValueError("model kind must be 'logistic' or 'mlp'")

    @property
    def n_params(self) -> int:
        if self.kind == "logistic":
            return self.dim * self.n_classes + self.n_classes
        return (
            self.dim * self.hidden
            + self.hidden
            + self.hidden * self.n_classes
            + self.n_classes
        )

    def init(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, 0.1, size=self.n_params)


@dataclass
class GlobalModel:
    """The aggregator's current flat parameter vector."""

    weights: np.ndarray
    round_index: int = 0


def largest_remainder(total: int, ratios) -> list[int]:
    """Split an integer by ratios, assigning leftovers to largest remainders."""
    shares = [total * r for r in ratios]
    counts = [int(math.floor(s)) for s in shares]
    leftover = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def _class_means(n_classes: int, dim: int, separation: float,
                 rng: np.random.Generator) -> np.ndarray:
    raw = rng.standard_normal((dim, max(n_classes, 1)))
    if dim >= n_classes:
        q, _ = np.linalg.qr(raw)
        directions = q[:, :n_classes].T
    else:
        directions = (raw / np.linalg.norm(raw, axis=0, keepdims=True)).T[:n_classes]
    return directions * separation


_SIZE_CYCLE_MID = 4  # position of the 1.0 multiplier in the size cycle


def _size_multiplier(i: int, n_classes: int, spread: float) -> float:
    if spread <= 0.0:
        return 1.0
    k = (i // n_classes) % 5
    return (1.0 - spread, 1.0 + spread, 1.0 - spread, 1.0 + spread, 1.0)[k]


def _client_label_plan(spec: NonIidSpec, rng: np.random.Generator,
                       size_spread: float = 0.0) -> list[dict[int, int]]:
    """Per-client {class: count} maps; classes round-robin to keep pool totals even.

    With a positive size spread, client data sizes cycle through
    mean*(1-spread), mean*(1+spread) and mean so that low and high sizes pair
    off within every class and totals stay balanced.
    """
    c = spec.n_classes
    base_ratios = _TYPE_RATIOS[spec.type]
    n_labels = len(base_ratios)

    def client_size(i: int) -> int:
        return max(1, round(spec.samples_per_client * _size_multiplier(i, c, size_spread)))

    plans = []
    for i in range(spec.n_clients):
        labels = [(i + k) % c for k in range(n_labels)]
        counts = largest_remainder(client_size(i), base_ratios)
        plans.append(dict(zip(labels, counts)))

    if spec.type == "three_labels_5_4_1" and spec.n_clients >= c:
        # One two-label client per residue class: their per-class surpluses and
        # deficits cancel around the ring, so pool totals stay balanced. With
        # a size spread, pick among mean-sized clients to keep that exact.
        for j in range(c):
            members = [i for i in range(spec.n_clients) if i % c == j]
            if size_spread > 0.0:
                mids = [i for i in members
                        if _size_multiplier(i, c, size_spread) == 1.0]
                members = mids or members
            pick = members[int(rng.integers(len(members)))]
            ratio = _MINORITY_RATIOS[int(rng.integers(2))]
            labels = [j % c, (j + 1) % c]
            counts = largest_remainder(client_size(pick), ratio)
            plans[pick] = dict(zip(labels, counts))
    return plans


def make_noniid_pool(
    spec: NonIidSpec,
    *,
    dim: int = 16,
    separation: float = 3.0,
    test_samples: int = 2000,
    size_spread: float = 0.0,
) -> tuple[list[tuple[str, np.ndarray]], SyntheticDataset]:
    """Generate a labeled client pool and its synthetic dataset.

    Every client's realized sample labels match its declared histogram
    exactly, so downstream scheduling sees truthful weights. ``size_spread``
    introduces client data-size heterogeneity (see ``_client_label_plan``);
    ``samples_per_client`` is then the pool mean rather than every client's
    exact size.
    """
    if not 0.0 <= size_spread < 1.0:
        raise ValueError("size_spread must lie in [0, 1)")
    rng = np.random.default_rng(spec.seed)
    means = _class_means(spec.n_classes, dim, separation, rng)
    plans = _client_label_plan(spec, rng, size_spread=size_spread)

    clients: list[tuple[str, np.ndarray]] = []
    client_features: dict = {}
    client_labels: dict = {}
    for i, plan in enumerate(plans):
        cid = f"c{i:03d}"
        hist = np.zeros(spec.n_classes, dtype=np.int64)
        feats = []
        labels = []
        for cls in sorted(plan):
            k = plan[cls]
            if k <= 0:
                continue
            hist[cls] = k
            feats.append(means[cls] + rng.standard_normal((k, dim)))
            labels.append(np.full(k, cls, dtype=np.int64))
        clients.append((cid, hist))
        client_features[cid] = np.concatenate(feats, axis=0)
        client_labels[cid] = np.concatenate(labels)

    per_class = largest_remainder(test_samples, [1 / spec.n_classes] * spec.n_classes)
    test_feats = []
    test_labels = []
    for cls, k in enumerate(per_class):
        test_feats.append(means[cls] + rng.standard_normal((k, dim)))
        test_labels.append(np.full(k, cls, dtype=np.int64))
    dataset = SyntheticDataset(
        client_features=client_features,
        client_labels=client_labels,
        test_features=np.concatenate(test_feats, axis=0),
        test_labels=np.concatenate(test_labels),
        n_classes=spec.n_classes,
        dim=dim,
        class_means=means,
    )
    return clients, dataset


def _unpack_logistic(weights: np.ndarray, spec: ModelSpec):
    d, c = spec.dim, spec.n_classes
    w = weights[: d * c].reshape(d, c)
    b = weights[d * c:]
    return w, b


def _unpack_mlp(weights: np.ndarray, spec: ModelSpec):
    d, h, c = spec.dim, spec.hidden, spec.n_classes
    i = 0
    w1 = weights[i: i + d * h].reshape(d, h); i += d * h
    b1 = weights[i: i + h]; i += h
    w2 = weights[i: i + h * c].reshape(h, c); i += h * c
    b2 = weights[i:]
    return w1, b1, w2, b2


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_logits(weights: np.ndarray, features: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if spec.kind == "logistic":
        w, b = _unpack_logistic(weights, spec)
        return features @ w + b
    w1, b1, w2, b2 = _unpack_mlp(weights, spec)
    return np.tanh(features @ w1 + b1) @ w2 + b2


def loss_and_grad(weights: np.ndarray, features: np.ndarray, labels: np.ndarray,
                  spec: ModelSpec) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
    m = len(labels)
    onehot = np.zeros((m, spec.n_classes))
    onehot[np.arange(m), labels] = 1.0

    if spec.kind == "logistic":
        w, b = _unpack_logistic(weights, spec)
        probs = _softmax(features @ w + b)
        loss = -np.log(np.clip(probs[np.arange(m), labels], 1e-12, None)).mean()
        dlogits = (probs - onehot) / m
        grad = np.concatenate([(features.T @ dlogits).ravel(), dlogits.sum(axis=0)])
        return float(loss), grad

    w1, b1, w2, b2 = _unpack_mlp(weights, spec)
    z1 = features @ w1 + b1
    a1 = np.tanh(z1)
    probs = _softmax(a1 @ w2 + b2)
    loss = -np.log(np.clip(probs[np.arange(m), labels], 1e-12, None)).mean()
    dlogits = (probs - onehot) / m
    dw2 = a1.T @ dlogits
    db2 = dlogits.sum(axis=0)
    da1 = dlogits @ w2.T
    dz1 = da1 * (1.0 - a1 ** 2)
    dw1 = features.T @ dz1
    db1 = dz1.sum(axis=0)
    grad = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
    return float(loss), grad


def local_train(
    model: GlobalModel,
    features: np.ndarray,
    labels: np.ndarray,
    spec: ModelSpec,
    *,
    epochs: int = 2,
    batch_size: int = 16,
    lr: float = 0.05,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch SGD from the global weights on one client's data.

    Returns the trained local weights and the update (global minus local).
    """
    if not np.all(np.isfinite(model.weights)):
        raise ValueError("global weights must be finite")
    if rng is None:
        rng = np.random.default_rng(0)
    # The accumulated update is the primary quantity; the local iterate is
    # always global - update, so applying the update back to the global
    # model recovers the local weights bit-for-bit.
    update = np.zeros_like(model.weights)
    w = model.weights.copy()
    n = len(labels)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start: start + batch_size]
            loss, grad = loss_and_grad(w, features[idx], labels[idx], spec)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDiverged("non-finite local loss")
            update = update + lr * grad
            w = model.weights - update
    return w, update


def aggregation_weights(sample_counts) -> np.ndarray:
    """Per-client mixing weights proportional to sample counts; sums to one."""
    counts = np.asarray(list(sample_counts), dtype=float)
    if counts.size == 0:
        raise ValueError("no updates to weight")
    if np.any(counts <= 0):
        raise ValueError("sample counts must be positive")
    return counts / counts.sum()


def aggregate(updates, model: GlobalModel, server_lr: float = 1.0) -> GlobalModel:
    """Sample-size-weighted average of client updates applied to the model.

    ``updates`` holds (delta, sample_count) pairs in a fixed caller-chosen
    order; an empty list skips the round and leaves the model untouched.
    """
    updates = list(updates)
    if not updates:
        return model
    deltas = [np.asarray(d, dtype=float) for d, _ in updates]
    dim = deltas[0].shape
    for d in deltas:
        if d.shape != dim:
            raise ValueError("updates must all have the global model's dimension")
    p = aggregation_weights(n for _, n in updates)
    combined = np.zeros_like(deltas[0])
    for weight, delta in zip(p, deltas):
        combined += weight * delta
    return GlobalModel(
        weights=model.weights - server_lr * combined,
        round_index=model.round_index + 1,
    )


def evaluate(model, features: np.ndarray, labels: np.ndarray, spec: ModelSpec) -> float:
    """Fraction of correct argmax predictions on a test split."""
    weights = model.weights if isinstance(model, GlobalModel) else np.asarray(model)
    if not np.all(np.isfinite(weights)):
        raise ValueError("model weights must be finite")
    if len(labels) == 0:
        raise ValueError("empty test set")
    predicted = predict_logits(weights, features, spec).argmax(axis=1)
    return float(np.mean(predicted == labels))


def _stable_key(cid) -> int:
    return zlib.crc32(str(cid).encode("utf-8"))


class FedAvgTrainer:
    """Round executor over a synthetic dataset.

    Satisfies the scheduler's trainer protocol: ``run_round(round_index,
    client_ids)`` trains the listed clients locally, aggregates in sorted
    client order (so results do not depend on caller ordering), and returns
    per-client model-quality values plus the post-round test accuracy.
    """

    def __init__(
        self,
        dataset: SyntheticDataset,
        spec: ModelSpec | None = None,
        *,
        epochs: int = 2,
        batch_size: int = 16,
        lr: float = 0.05,
        lr_decay: float = 1.0,
        server_lr: float = 1.0,
        similarity_on: str = "weights",
        seed: int = 0,
    ):
        if similarity_on not in ("weights", "delta"):
            raise ValueError("similarity_on must be 'weights' or 'delta'")
        if not 0.0 < lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        self.dataset = dataset
        self.spec = spec or ModelSpec(dim=dataset.dim, n_classes=dataset.n_classes)
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.server_lr = server_lr
        self.similarity_on = similarity_on
        self.seed = seed
        self.model = GlobalModel(self.spec.init(np.random.default_rng(seed)))

    def run_round(self, round_index: int, client_ids) -> tuple[dict, float]:
        locals_by_client = {}
        updates = []
        round_lr = self.lr * self.lr_decay ** round_index
        for cid in sorted(client_ids):
            rng = np.random.default_rng([self.seed, round_index, _stable_key(cid)])
            try:
                w_local, delta = local_train(
                    self.model,
                    self.dataset.client_features[cid],
                    self.dataset.client_labels[cid],
                    self.spec,
                    epochs=self.epochs,
                    batch_size=self.batch_size,
                    lr=round_lr,
                    rng=rng,
                )
            except TrainingDiverged:
                continue
            locals_by_client[cid] = (w_local, delta)
            updates.append((delta, self.dataset.client_sample_count(cid)))

        previous = self.model
        if updates:
            self.model = aggregate(updates, self.model, server_lr=self.server_lr)

        quality = {}
        for cid, (w_local, delta) in locals_by_client.items():
            if self.similarity_on == "weights":
                a, b = w_local, self.model.weights
            else:
                a, b = delta, previous.weights - self.model.weights
            if np.linalg.norm(a) == 0.0 or np.linalg.norm(b) == 0.0:
                quality[cid] = 0.0
            else:
                quality[cid] = model_similarity(a, b)

        accuracy = evaluate(
            self.model, self.dataset.test_features, self.dataset.test_labels, self.spec
        )
        return quality, accuracy
