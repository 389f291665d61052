"""Experiment harness: splits, folds, accuracy modes and the evaluation
families (threshold sweep, per-application CV, novel-application detection,
channel ablation, partial signatures, resampling-length sweep).

Pipelines bundle the encode+train+score steps for the CNN and the
statistical baseline behind one interface so every experiment can run either
model on identical record sets.  Reports are plain rows; writers emit one
CSV per experiment plus a combined JSON summary.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import json

import numpy as np

from .baseline import (
    BaselineHyperparams,
    BaselineModel,
    baseline_scores,
    extract_feature_matrix,
    train_baseline,
)
from .cnn import CnnConfig, CnnModel, UNKNOWN_LABEL, build_model, decide_label, forward, train
from .container import atomic_write_bytes
from .errors import ContractViolation, SchemaError, ValidationError
from .gaf import FieldKind, partial_signature
from .ingest import CANONICAL_CHANNELS, JobRecord, MetricKind
from .prng import DOMAIN_KFOLD, DOMAIN_SPLIT, stream_rng
from .resample import AggFn, ResampleSpec


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.60
    val_frac: float = 0.20
    test_frac: float = 0.20
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ContractViolation(f"split fractions sum to {total}, not 1")
        if min(self.train_frac, self.val_frac, self.test_frac) < 0:
            raise ContractViolation("split fractions must be non-negative")


def _labels_of(records: Sequence[JobRecord]) -> list[str]:
    labels = []
    for r in records:
        if r.label is None:
            raise SchemaError(f"job {r.job_id!r} has no label")
        labels.append(r.label)
    return labels


def _grouped_indices(records: Sequence[JobRecord]) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for i, label in enumerate(_labels_of(records)):
        groups.setdefault(label, []).append(i)
    return {label: groups[label] for label in sorted(groups)}


def split_dataset(
    records: Sequence[JobRecord], spec: SplitSpec = SplitSpec()
) -> tuple[list[JobRecord], list[JobRecord], list[JobRecord]]:
    """Disjoint train/val/test cover, per-class proportions within one sample."""
    rng = stream_rng(spec.seed, DOMAIN_SPLIT)
    picks: list[set[int]] = [set(), set(), set()]
    if spec.stratified:
        for label, idx in _grouped_indices(records).items():
            m = len(idx)
            if m < 5:
                raise ValidationError(f"class {label!r} has only {m} samples (< 5)")
            perm = rng.permutation(m)
            n_tr = int(round(spec.train_frac * m))
            n_val = min(int(round(spec.val_frac * m)), m - n_tr)
            picks[0].update(idx[i] for i in perm[:n_tr])
            picks[1].update(idx[i] for i in perm[n_tr : n_tr + n_val])
            picks[2].update(idx[i] for i in perm[n_tr + n_val :])
    else:
        m = len(records)
        perm = rng.permutation(m)
        n_tr = int(round(spec.train_frac * m))
        n_val = min(int(round(spec.val_frac * m)), m - n_tr)
        picks[0].update(perm[:n_tr].tolist())
        picks[1].update(perm[n_tr : n_tr + n_val].tolist())
        picks[2].update(perm[n_tr + n_val :].tolist())
    return tuple(
        [records[i] for i in range(len(records)) if i in chosen] for chosen in picks
    )


def stratified_kfold(
    records: Sequence[JobRecord], k: int = 10, seed: int = 0
) -> list[list[JobRecord]]:
    """k disjoint folds preserving per-class proportions within one sample."""
    if k < 2:
        raise ContractViolation("k must be >= 2")
    rng = stream_rng(seed, DOMAIN_KFOLD)
    fold_indices: list[set[int]] = [set() for _ in range(k)]
    for label, idx in _grouped_indices(records).items():
        m = len(idx)
        if m < k:
            raise ValidationError(f"class {label!r} has only {m} samples (< k={k})")
        perm = rng.permutation(m)
        for j in range(k):
            fold_indices[j].update(idx[i] for i in perm[j::k])
    return [
        [records[i] for i in range(len(records)) if i in chosen] for chosen in fold_indices
    ]


def accuracy(
    predictions: Sequence[str],
    truths: Sequence[str],
    novel_class: Optional[str] = None,
) -> float:
    """Micro accuracy.  ``unknown`` predictions count as wrong unless the
    truth is novel_class, in which case they count as correct."""
    if len(predictions) != len(truths):
        raise ContractViolation("predictions and truths must have equal length")
    if not truths:
        raise ContractViolation("cannot score an empty set")
    correct = 0
    for pred, truth in zip(predictions, truths):
        if pred == truth or (pred == UNKNOWN_LABEL and truth == novel_class):
            correct += 1
    return correct / len(truths)


# ---------------------------------------------------------------------------
# pipelines


@dataclass
class CnnPipeline:
    """Encode records at a fixed resolution and train/apply the CNN."""

    side: int = 32
    kind: FieldKind = FieldKind.GASF
    channels: tuple[MetricKind, ...] = CANONICAL_CHANNELS
    agg: AggFn = AggFn.MEAN
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    dense_units: int = 128
    seed: int = 0
    model: Optional[CnnModel] = field(default=None, init=False, repr=False)
    history: list[dict] = field(default_factory=list, init=False, repr=False)

    def clone(self, **overrides) -> "CnnPipeline":
        return dataclasses.replace(self, **overrides)

    @property
    def class_vocab(self) -> tuple[str, ...]:
        if self.model is None:
            raise ContractViolation("pipeline is not fitted")
        return self.model.class_vocab

    def encode(
        self, records: Sequence[JobRecord], fraction: float = 1.0
    ) -> tuple[np.ndarray, list[Optional[str]]]:
        spec = ResampleSpec(self.side, self.agg)
        tensors = np.stack(
            [
                partial_signature(r, fraction, spec, self.kind, self.channels).tensor
                for r in records
            ]
        )
        return tensors, [r.label for r in records]

    def fit(
        self, train_records: Sequence[JobRecord], val_records: Sequence[JobRecord]
    ) -> "CnnPipeline":
        train_x, train_labels = self.encode(train_records)
        val_x, val_labels = self.encode(val_records)
        vocab = sorted(set(_labels_of(train_records)))
        config = CnnConfig(
            input_side=self.side,
            channels=len(self.channels),
            num_classes=len(vocab),
            dense_units=self.dense_units,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.seed,
        )
        self.model = build_model(config, vocab)
        self.model, self.history = train(
            self.model, (train_x, train_labels), (val_x, val_labels)
        )
        return self

    def scores(self, records: Sequence[JobRecord], fraction: float = 1.0) -> np.ndarray:
        if self.model is None:
            raise ContractViolation("pipeline is not fitted")
        tensors, _ = self.encode(records, fraction)
        out = []
        for start in range(0, tensors.shape[0], self.batch_size):
            out.append(forward(self.model, tensors[start : start + self.batch_size]))
        return np.concatenate(out)

    def describe(self) -> dict:
        return {
            "model": "cnn",
            "side": self.side,
            "kind": self.kind.value,
            "channels": [c.value for c in self.channels],
            "agg": self.agg.value,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "dense_units": self.dense_units,
            "seed": self.seed,
        }


@dataclass
class BaselinePipeline:
    """Statistical features from raw traces + one-vs-rest logistic scorers."""

    channels: tuple[MetricKind, ...] = CANONICAL_CHANNELS
    hyperparams: BaselineHyperparams = field(default_factory=BaselineHyperparams)
    model: Optional[BaselineModel] = field(default=None, init=False, repr=False)

    def clone(self, **overrides) -> "BaselinePipeline":
        return dataclasses.replace(self, **overrides)

    @property
    def class_vocab(self) -> tuple[str, ...]:
        if self.model is None:
            raise ContractViolation("pipeline is not fitted")
        return self.model.class_vocab

    def fit(
        self,
        train_records: Sequence[JobRecord],
        val_records: Sequence[JobRecord] = (),
    ) -> "BaselinePipeline":
        # the baseline has no validation phase; val_records are accepted for
        # interface parity and ignored
        features = extract_feature_matrix(train_records, self.channels)
        self.model = train_baseline(
            features, _labels_of(train_records), self.hyperparams, self.channels
        )
        return self

    def scores(self, records: Sequence[JobRecord], fraction: float = 1.0) -> np.ndarray:
        if self.model is None:
            raise ContractViolation("pipeline is not fitted")
        if fraction != 1.0:
            raise ContractViolation("the statistical baseline has no partial mode")
        return baseline_scores(self.model, extract_feature_matrix(records, self.channels))

    def describe(self) -> dict:
        hp = self.hyperparams
        return {
            "model": "baseline",
            "channels": [c.value for c in self.channels],
            "learning_rate": hp.learning_rate,
            "iterations": hp.iterations,
            "l2": hp.l2,
            "seed": hp.seed,
        }


Pipeline = CnnPipeline | BaselinePipeline


def predict_labels(
    pipeline: Pipeline,
    records: Sequence[JobRecord],
    threshold: float,
    scores: Optional[np.ndarray] = None,
    fraction: float = 1.0,
) -> list[str]:
    if scores is None:
        scores = pipeline.scores(records, fraction)
    vocab = pipeline.class_vocab
    return [decide_label(row, vocab, threshold) for row in scores]


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    kind: str
    rows: list[dict]
    timings: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    if not report.rows:
        raise ContractViolation("cannot write an empty report")
    columns = list(report.rows[0])
    lines = [",".join(columns)]
    for row in report.rows:
        if list(row) != columns:
            raise ContractViolation("report rows have inconsistent columns")
        lines.append(",".join(_format_cell(row[c]) for c in columns))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_summary_json(reports: Sequence[EvalReport], path: str | Path) -> None:
    payload = [
        {
            "experiment": r.kind,
            "config": r.config,
            "timings": r.timings,
            "rows": r.rows,
        }
        for r in reports
    ]
    atomic_write_bytes(path, json.dumps(payload, indent=2).encode("utf-8") + b"\n")


def _check_thresholds(thresholds: Sequence[float]) -> list[float]:
    ts = [float(t) for t in thresholds]
    if not ts:
        raise ContractViolation("at least one threshold is required")
    if any(not 0.0 <= t <= 1.0 for t in ts):
        raise ContractViolation("thresholds must lie in [0, 1]")
    if sorted(ts) != ts:
        raise ContractViolation("thresholds must be sorted ascending")
    return ts


# ---------------------------------------------------------------------------
# experiment families


def run_threshold_sweep(
    pipelines: Mapping[str, Pipeline],
    test_records: Sequence[JobRecord],
    thresholds: Sequence[float],
) -> EvalReport:
    """Accuracy of each fitted model at each confidence threshold."""
    ts = _check_thresholds(thresholds)
    truths = _labels_of(test_records)
    rows = []
    timings = {}
    for name, pipe in pipelines.items():
        t0 = time.perf_counter()
        scores = pipe.scores(test_records)
        timings[f"predict_seconds_{name}"] = time.perf_counter() - t0
        for tau in ts:
            preds = predict_labels(pipe, test_records, tau, scores=scores)
            rows.append({"model": name, "threshold": tau, "accuracy": accuracy(preds, truths)})
    return EvalReport(
        kind="threshold_sweep",
        rows=rows,
        timings=timings,
        config={name: pipe.describe() for name, pipe in pipelines.items()},
    )


def _per_class_accuracy(preds: Sequence[str], truths: Sequence[str]) -> dict[str, float]:
    per_class: dict[str, list[int]] = {}
    for pred, truth in zip(preds, truths):
        per_class.setdefault(truth, []).append(1 if pred == truth else 0)
    return {label: sum(v) / len(v) for label, v in sorted(per_class.items())}


def run_per_application(
    template: Pipeline,
    records: Sequence[JobRecord],
    k: int = 10,
    threshold: float = 0.8,
    seed: int = 0,
) -> EvalReport:
    """Per-class accuracy under k-fold stratified cross validation."""
    folds = stratified_kfold(records, k, seed)
    sums: dict[str, float] = {}
    train_seconds = 0.0
    for i, fold in enumerate(folds):
        train_records = [r for j, f in enumerate(folds) if j != i for r in f]
        pipe = template.clone()
        t0 = time.perf_counter()
        pipe.fit(train_records, fold)
        train_seconds += time.perf_counter() - t0
        preds = predict_labels(pipe, fold, threshold)
        for label, acc in _per_class_accuracy(preds, _labels_of(fold)).items():
            sums[label] = sums.get(label, 0.0) + acc
    rows = [
        {"class": label, "threshold": threshold, "accuracy": total / k}
        for label, total in sorted(sums.items())
    ]
    return EvalReport(
        kind="per_application",
        rows=rows,
        timings={"train_seconds": train_seconds},
        config={"folds": k, "threshold": threshold, **template.describe()},
    )


def run_novel_detection(
    template: Pipeline,
    records: Sequence[JobRecord],
    held_out_class: str,
    thresholds: Sequence[float],
    split: SplitSpec = SplitSpec(),
) -> EvalReport:
    """Train without one class; score the untouched test split, counting
    ``unknown`` as correct for the held-out class."""
    ts = _check_thresholds(thresholds)
    labels = set(_labels_of(records))
    if held_out_class not in labels:
        raise ValidationError(f"class {held_out_class!r} is not in the dataset")
    train_records, val_records, test_records = split_dataset(records, split)
    known_train = [r for r in train_records if r.label != held_out_class]
    known_val = [r for r in val_records if r.label != held_out_class]
    pipe = template.clone()
    t0 = time.perf_counter()
    pipe.fit(known_train, known_val)
    train_seconds = time.perf_counter() - t0

    truths = _labels_of(test_records)
    scores = pipe.scores(test_records)
    heldout_total = sum(1 for t in truths if t == held_out_class)
    rows = []
    for tau in ts:
        preds = predict_labels(pipe, test_records, tau, scores=scores)
        unknown_hits = sum(
            1
            for pred, truth in zip(preds, truths)
            if truth == held_out_class and pred == UNKNOWN_LABEL
        )
        rows.append(
            {
                "threshold": tau,
                "accuracy": accuracy(preds, truths, novel_class=held_out_class),
                "heldout_unknown_rate": unknown_hits / heldout_total if heldout_total else 0.0,
            }
        )
    return EvalReport(
        kind="novel_detection",
        rows=rows,
        timings={"train_seconds": train_seconds},
        config={"held_out_class": held_out_class, **template.describe()},
    )


def run_channel_ablation(
    template: CnnPipeline,
    records: Sequence[JobRecord],
    channel_sets: Sequence[Sequence[MetricKind]],
    threshold: float = 0.0,
    split: SplitSpec = SplitSpec(),
) -> EvalReport:
    """Fresh CNN per channel subset; per-class accuracy on the common test set."""
    if not channel_sets:
        raise ContractViolation("at least one channel set is required")
    train_records, val_records, test_records = split_dataset(records, split)
    truths = _labels_of(test_records)
    rows = []
    timings = {}
    for channels in channel_sets:
        if not channels:
            raise ContractViolation("channel sets must be non-empty")
        name = "+".join(c.value for c in channels)
        pipe = template.clone(channels=tuple(channels))
        t0 = time.perf_counter()
        pipe.fit(train_records, val_records)
        timings[f"train_seconds_{name}"] = time.perf_counter() - t0
        preds = predict_labels(pipe, test_records, threshold)
        for label, acc in _per_class_accuracy(preds, truths).items():
            rows.append({"channels": name, "class": label, "accuracy": acc})
    return EvalReport(
        kind="channel_ablation",
        rows=rows,
        timings=timings,
        config={"threshold": threshold, **template.describe()},
    )


def run_partial_signatures(
    template: CnnPipeline,
    records: Sequence[JobRecord],
    fractions: Sequence[float] = (0.25, 0.50, 0.75, 1.0),
    threshold: float = 0.0,
    split: SplitSpec = SplitSpec(),
) -> EvalReport:
    """Train on full signatures, evaluate on leading-fraction encodings."""
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ContractViolation("fractions must lie in (0, 1]")
    train_records, val_records, test_records = split_dataset(records, split)
    pipe = template.clone()
    t0 = time.perf_counter()
    pipe.fit(train_records, val_records)
    train_seconds = time.perf_counter() - t0
    truths = _labels_of(test_records)
    rows = []
    for fraction in fractions:
        preds = predict_labels(pipe, test_records, threshold, fraction=fraction)
        for label, acc in _per_class_accuracy(preds, truths).items():
            rows.append({"fraction": fraction, "class": label, "accuracy": acc})
    return EvalReport(
        kind="partial_signatures",
        rows=rows,
        timings={"train_seconds": train_seconds},
        config={"threshold": threshold, **template.describe()},
    )


def run_resolution_sweep(
    template: CnnPipeline,
    records: Sequence[JobRecord],
    lengths: Sequence[int] = (32, 64, 128),
    thresholds: Sequence[float] = (0.0,),
    split: SplitSpec = SplitSpec(),
) -> EvalReport:
    """Re-encode and retrain per resampling length; record training time and
    the per-signature payload size."""
    ts = _check_thresholds(thresholds)
    if any(l < 8 for l in lengths):
        raise ContractViolation("resampling lengths must be >= 8")
    train_records, val_records, test_records = split_dataset(records, split)
    truths = _labels_of(test_records)
    rows = []
    timings = {}
    for side in lengths:
        pipe = template.clone(side=side)
        t0 = time.perf_counter()
        pipe.fit(train_records, val_records)
        train_seconds = time.perf_counter() - t0
        timings[f"train_seconds_l{side}"] = train_seconds
        scores = pipe.scores(test_records)
        payload = side * side * len(pipe.channels) * 4
        for tau in ts:
            preds = predict_labels(pipe, test_records, tau, scores=scores)
            rows.append(
                {
                    "l": side,
                    "threshold": tau,
                    "accuracy": accuracy(preds, truths),
                    "payload_bytes": payload,
                    "train_seconds": train_seconds,
                }
            )
    return EvalReport(
        kind="resolution_sweep",
        rows=rows,
        timings=timings,
        config=template.describe(),
    )
