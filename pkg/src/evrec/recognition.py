"""Unsupervised training, label assignment, and firing-rate prediction.

Training presents encoded patterns in a seeded-shuffled order with
plasticity on; labels are never read. Afterwards one plasticity-off pass
over the training set assigns each learning neuron the class it responded
to most (ties break to the lowest class index). Prediction presents a
pattern with plasticity off, averages spike counts per class over that
class's neurons, and picks the highest mean rate. Evaluation scores whole
recordings: spike counts are summed across a recording's segments before
the class averaging.

Adaptive thresholds are frozen during label assignment and evaluation so
that read-only passes are deterministic and order-independent; a model is
bitwise identical before and after them.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import SpikePattern
from .snn import Network, SnnConfig

_MODEL_HEADER = struct.Struct("<II")     # n_encoding, n_learning


@dataclass
class DatasetItem:
    pattern: SpikePattern
    label: int
    recording: int      # items sharing a recording id are scored together


@dataclass
class Dataset:
    items: list[DatasetItem]
    n_classes: int

    def validate(self) -> None:
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        addr_counts = {item.pattern.n_addresses for item in self.items}
        if len(addr_counts) > 1:
            raise ValueError(f"patterns disagree on address count: {addr_counts}")
        for item in self.items:
            if not (0 <= item.label < self.n_classes):
                raise ValueError(f"label {item.label} outside [0, {self.n_classes})")

    @property
    def n_addresses(self) -> int:
        return self.items[0].pattern.n_addresses if self.items else 0

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Model:
    """Trained artifact: network weights/thresholds plus per-neuron labels."""

    network: Network
    labels: np.ndarray                 # (n_learning,) class per neuron
    unresponsive: np.ndarray           # neurons that never spiked at assignment

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class Prediction:
    class_id: int
    class_rates: np.ndarray
    responded: bool      # False -> zero spikes everywhere, class 0 by default


@dataclass
class EvalReport:
    confusion: np.ndarray              # (true, predicted) counts
    accuracy: float
    per_class: np.ndarray

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> "EvalReport":
        total = confusion.sum()
        accuracy = float(np.trace(confusion) / total) if total else 0.0
        rows = confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(rows > 0, np.diag(confusion) / rows, 0.0)
        return cls(confusion=confusion, accuracy=accuracy, per_class=per_class)


def train(network: Network, dataset: Dataset, epochs: int = 1,
          shuffle_seed: int = 0, duration_ms: Optional[float] = None) -> Network:
    """Plasticity-on presentation of every pattern, shuffled per epoch.

    Purely unsupervised: item labels are never consulted.
    """
    dataset.validate()
    if not dataset.items:
        raise ValueError("empty training set")
    if dataset.n_addresses > network.n_encoding:
        raise ValueError("dataset addresses exceed the network's encoding layer")
    rng = np.random.default_rng(shuffle_seed)
    for _ in range(epochs):
        for i in rng.permutation(len(dataset.items)):
            network.present(dataset.items[i].pattern, duration_ms,
                            plasticity=True)
    return network


def labels_from_counts(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-neuron label = argmax class (ties -> lowest index); zero rows
    get class 0 and are flagged."""
    labels = np.argmax(counts, axis=1)
    unresponsive = counts.sum(axis=1) == 0
    labels[unresponsive] = 0
    return labels, unresponsive


def assign_labels(network: Network, dataset: Dataset,
                  duration_ms: Optional[float] = None) -> Model:
    """Label each neuron by its strongest class response on one read pass.

    Thresholds are frozen. Neurons that never spike get class 0 and are
    flagged in ``unresponsive``.
    """
    dataset.validate()
    counts = np.zeros((network.n_learning, dataset.n_classes), dtype=np.int64)
    for item in dataset.items:
        res = network.present(item.pattern, duration_ms,
                              plasticity=False, adapt_threshold=False)
        counts[:, item.label] += res.counts
    labels, unresponsive = labels_from_counts(counts)
    return Model(network=network, labels=labels, unresponsive=unresponsive)


def response_counts(model: Model, pattern: SpikePattern,
                    duration_ms: Optional[float] = None) -> np.ndarray:
    """Per-neuron spike counts for one plasticity-off presentation."""
    res = model.network.present(pattern, duration_ms,
                                plasticity=False, adapt_threshold=False)
    return res.counts


def rates_from_counts(labels: np.ndarray, counts: np.ndarray,
                      n_classes: int) -> np.ndarray:
    """Mean spike count per class over that class's neurons (0 if none)."""
    rates = np.zeros(n_classes)
    for c in range(n_classes):
        members = labels == c
        if members.any():
            rates[c] = counts[members].mean()
    return rates


def classify_counts(labels: np.ndarray, counts: np.ndarray,
                    n_classes: int) -> Prediction:
    """Rate-averaging decision rule; all-silent responses fall back to 0."""
    rates = rates_from_counts(labels, counts, n_classes)
    responded = bool(counts.sum() > 0)
    class_id = int(np.argmax(rates)) if responded else 0
    return Prediction(class_id=class_id, class_rates=rates, responded=responded)


def predict(model: Model, pattern: SpikePattern,
            duration_ms: Optional[float] = None,
            n_classes: Optional[int] = None) -> Prediction:
    """Mean firing rate per class, highest wins (lowest index on ties)."""
    n_classes = n_classes or model.n_classes
    counts = response_counts(model, pattern, duration_ms)
    return classify_counts(model.labels, counts, n_classes)


def _recording_groups(dataset: Dataset) -> list[tuple[int, int, list[SpikePattern]]]:
    """(recording id, label, patterns) in first-appearance order."""
    order: list[int] = []
    by_rec: dict[int, tuple[int, list[SpikePattern]]] = {}
    for item in dataset.items:
        if item.recording not in by_rec:
            by_rec[item.recording] = (item.label, [])
            order.append(item.recording)
        label, patterns = by_rec[item.recording]
        if label != item.label:
            raise ValueError(f"recording {item.recording} has conflicting labels")
        patterns.append(item.pattern)
    return [(rec, by_rec[rec][0], by_rec[rec][1]) for rec in order]


def _eval_chunk(args) -> list[tuple[int, int, int]]:
    model, groups, n_classes, duration_ms = args
    out = []
    for pos, (label, patterns) in groups:
        counts = np.zeros(model.network.n_learning, dtype=np.int64)
        for pattern in patterns:
            counts += response_counts(model, pattern, duration_ms)
        out.append((pos, label,
                    classify_counts(model.labels, counts, n_classes).class_id))
    return out


def evaluate(model: Model, dataset: Dataset,
             duration_ms: Optional[float] = None,
             n_classes: Optional[int] = None,
             workers: int = 1) -> EvalReport:
    """Score each recording: sum counts over its segments, then class-average.

    ``workers`` > 1 fans recordings across processes sharing the
    read-only model; results merge by recording index, so the report is
    identical to the sequential one.
    """
    dataset.validate()
    if not dataset.items:
        raise ValueError("empty test set")
    n_classes = n_classes or max(model.n_classes, dataset.n_classes)
    groups = [(pos, (label, patterns)) for pos, (_, label, patterns)
              in enumerate(_recording_groups(dataset))]

    if workers > 1 and len(groups) > 1:
        chunks = [groups[i::workers] for i in range(workers)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_eval_chunk,
                                  [(model, c, n_classes, duration_ms)
                                   for c in chunks]))
        results = sorted(r for part in parts for r in part)
    else:
        results = _eval_chunk((model, groups, n_classes, duration_ms))

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for _, label, pred in results:
        confusion[label, pred] += 1
    return EvalReport.from_confusion(confusion)


def stratified_split(labels: Sequence[int], fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split of recording indices; ``fraction`` trains.

    Every class keeps at least one item on each side when it has two or
    more, so splits stay usable at desk scale.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must lie in [0, 1]")
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        n_train = int(round(fraction * len(members)))
        if len(members) >= 2:
            n_train = min(max(n_train, 1), len(members) - 1)
        train_idx.extend(members[:n_train])
        test_idx.extend(members[n_train:])
    return np.sort(np.array(train_idx, dtype=np.int64)), \
        np.sort(np.array(test_idx, dtype=np.int64))


# ---------------------------------------------------------------------------
# Model files: <u32 n_e><u32 n_l> + f64 weights row-major + f64 thresholds
# + u32 labels, all little-endian.

def save_model(model: Model, path) -> None:
    net = model.network
    n_e, n_l = net.w.shape
    payload = (_MODEL_HEADER.pack(n_e, n_l)
               + np.ascontiguousarray(net.w, dtype="<f8").tobytes()
               + np.ascontiguousarray(net.v_thr, dtype="<f8").tobytes()
               + np.ascontiguousarray(model.labels, dtype="<u4").tobytes())
    Path(path).write_bytes(payload)


def load_model(path, config: SnnConfig = SnnConfig()) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < _MODEL_HEADER.size:
        raise ValueError(f"{path}: truncated model header")
    n_e, n_l = _MODEL_HEADER.unpack_from(raw, 0)
    expected = _MODEL_HEADER.size + 8 * n_e * n_l + 8 * n_l + 4 * n_l
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _MODEL_HEADER.size
    w = np.frombuffer(raw, dtype="<f8", count=n_e * n_l, offset=off)
    off += 8 * n_e * n_l
    thr = np.frombuffer(raw, dtype="<f8", count=n_l, offset=off)
    off += 8 * n_l
    labels = np.frombuffer(raw, dtype="<u4", count=n_l, offset=off)
    net = Network(n_e, n_l, config=config, seed=0)
    net.w = w.reshape(n_e, n_l).copy()
    net.v_thr = thr.copy()
    return Model(network=net, labels=labels.astype(np.int64),
                 unresponsive=np.zeros(n_l, dtype=bool))
