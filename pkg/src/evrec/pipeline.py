"""End-to-end glue: event files -> segments -> C1 maps -> encoded datasets.

Feature extraction is split-independent, so a dataset's per-segment C1
snapshots are computed once and cached in memory; fitting the coding
normalizers (whose maximum response is a training-set statistic) and
encoding to spike patterns happen per split on top of the cached maps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, derive_seed
from .events import US_PER_MS, EventStream, read_events
from .features import (C1Maps, CodingParams, FeatureMaps, GaborBank,
                       c1_pool, encode, fit_coding)
from .recognition import (Dataset, DatasetItem, EvalReport, Model, assign_labels,
                          evaluate, stratified_split, train)
from .segmentation import MsdConfig, Segment, segment_stream
from .snn import Network


class DataError(ValueError):
    """Input files are missing, malformed, or mutually inconsistent."""


@dataclass
class RecordingFeatures:
    """Per-segment C1 snapshots for one recording."""

    label: int
    segments: list[C1Maps]
    source: str = ""


def extract_c1(segment: Segment, width: int, height: int, bank: GaborBank,
               tau_leak_ms: float) -> C1Maps:
    """S1-accumulate a segment, refresh to its end time, and pool to C1."""
    maps = FeatureMaps(width, height, bank, tau_leak_ms)
    maps.deliver_events(segment.x, segment.y, segment.t)
    maps.refresh(segment.t_end / US_PER_MS)
    return c1_pool(maps)


def recording_features(stream: EventStream, msd: MsdConfig, bank: GaborBank,
                       tau_leak_ms: float, label: int,
                       source: str = "") -> RecordingFeatures:
    segments = segment_stream(stream, msd)
    c1s = [extract_c1(seg, stream.width, stream.height, bank, tau_leak_ms)
           for seg in segments]
    return RecordingFeatures(label=label, segments=c1s, source=source)


# ---------------------------------------------------------------------------
# Manifests: CSV with header "path,label"; paths relative to the manifest.

def read_manifest(path) -> list[tuple[Path, int]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    rows: list[tuple[Path, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["path", "label"]:
            raise DataError(f"{path}: expected manifest header 'path,label'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected 'path,label'")
            try:
                label = int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label {row[1]!r}") \
                    from None
            rows.append((path.parent / row[0], label))
    return rows


def write_manifest(path, rows: Sequence[tuple[str, int]]) -> None:
    lines = ["path,label"] + [f"{p},{label}" for p, label in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _event_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def load_recordings(manifest_path, cfg: RunConfig) -> tuple[list[RecordingFeatures], int]:
    """Read, segment, and feature-extract every recording in a manifest."""
    rows = read_manifest(manifest_path)
    if not rows:
        raise DataError(f"{manifest_path}: empty manifest")
    bank = GaborBank(cfg.gabor_config())
    msd = cfg.msd_config()
    tau_leak = cfg["feature.tau_leak_ms"]
    geometry = None
    recordings = []
    for file_path, label in rows:
        stream = read_events(file_path, _event_format(file_path))
        if geometry is None:
            geometry = (stream.width, stream.height)
        elif geometry != (stream.width, stream.height):
            raise DataError(f"{file_path}: sensor geometry {stream.width}x"
                            f"{stream.height} differs from {geometry}")
        recordings.append(recording_features(stream, msd, bank, tau_leak,
                                             label, source=str(file_path)))
    n_classes = max(label for _, label in rows) + 1
    return recordings, n_classes


# ---------------------------------------------------------------------------
# Encoding cached features into datasets

def pooled_responses(recordings: Sequence[RecordingFeatures],
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """All C1 responses of the chosen recordings, flattened."""
    if indices is None:
        indices = range(len(recordings))
    chunks = [c1.values.ravel() for i in indices for c1 in recordings[i].segments]
    if not chunks:
        return np.zeros(0)
    return np.concatenate(chunks)


def fit_coding_for(recordings: Sequence[RecordingFeatures], cfg: RunConfig,
                   indices: Optional[Sequence[int]] = None,
                   kind: Optional[str] = None) -> CodingParams:
    return fit_coding(pooled_responses(recordings, indices),
                      r_min=cfg["coding.r_min"], t_w=cfg["coding.t_w_ms"],
                      kind=kind or cfg["coding.kind"])


def build_dataset(recordings: Sequence[RecordingFeatures], n_classes: int,
                  params: CodingParams, fusion: str,
                  indices: Optional[Sequence[int]] = None) -> Dataset:
    """Encode the chosen recordings; item recording ids index ``recordings``."""
    if indices is None:
        indices = range(len(recordings))
    items = []
    for i in indices:
        rec = recordings[i]
        for c1 in rec.segments:
            items.append(DatasetItem(pattern=encode(c1, params, fusion),
                                     label=rec.label, recording=int(i)))
    dataset = Dataset(items=items, n_classes=n_classes)
    dataset.validate()
    return dataset


# ---------------------------------------------------------------------------
# Experiments

def train_on(recordings: Sequence[RecordingFeatures], n_classes: int,
             cfg: RunConfig,
             indices: Optional[Sequence[int]] = None) -> tuple[Model, CodingParams]:
    """Fit coding, encode, train unsupervised, assign labels."""
    cfg.validate_choices()
    params = fit_coding_for(recordings, cfg, indices)
    dataset = build_dataset(recordings, n_classes, params,
                            cfg["fusion.mode"], indices)
    if not dataset.items:
        raise DataError("no segments to train on")
    network = Network(dataset.n_addresses, cfg["snn.n_learning"],
                      config=cfg.snn_config(), seed=cfg.snn_seed())
    duration = cfg["coding.t_w_ms"]
    train(network, dataset, epochs=cfg["train.epochs"],
          shuffle_seed=cfg.shuffle_seed(), duration_ms=duration)
    model = assign_labels(network, dataset, duration_ms=duration)
    return model, params


def run_split_experiment(recordings: Sequence[RecordingFeatures], n_classes: int,
                         cfg: RunConfig, run_seed: int) -> EvalReport:
    """One train/test repetition: split recordings, train, evaluate.

    The run seed replaces the global seed for this repetition, so the
    split, the weight initialization, and the shuffle order all vary
    together across runs (unless pinned explicitly in the config).
    """
    run_cfg = cfg.copy()
    run_cfg.set("seed", run_seed)
    labels = [rec.label for rec in recordings]
    rng = np.random.default_rng(derive_seed(run_seed, "split"))
    train_idx, test_idx = stratified_split(labels, run_cfg["split.fraction"], rng)
    model, params = train_on(recordings, n_classes, run_cfg, train_idx)
    test_ds = build_dataset(recordings, n_classes, params,
                            run_cfg["fusion.mode"], test_idx)
    return evaluate(model, test_ds, duration_ms=run_cfg["coding.t_w_ms"],
                    n_classes=n_classes, workers=run_cfg["workers"])
