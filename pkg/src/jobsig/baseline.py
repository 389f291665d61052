"""Statistical-feature baseline classifier.

Summarizes each raw (un-resampled) metric trace with 11 statistics: min,
max, mean, population std, skew, kurtosis and the 5/25/50/75/95th
percentiles.  Classification is one-vs-rest logistic scorers on standardized
features, sharing the confidence-threshold decision rule with the CNN so
the two are comparable on the same [0, 1] scale.  Kurtosis is non-excess
(a normal distribution scores 3); constant traces get skew = kurtosis = 0.

Models persist as ``.arbm`` files with the same container framing as the
CNN's ``.arcm``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cnn import UNKNOWN_LABEL, PredictionResult, decide_label
from .container import Reader, Writer, atomic_write_bytes, check_magic
from .errors import ConfigError, ContractViolation, ModelIOError, ValidationError
from .ingest import CANONICAL_CHANNELS, JobRecord, MetricKind

ARBM_MAGIC = b"ARBM"
ARBM_VERSION = 1

STAT_NAMES = ("min", "max", "mean", "std", "skew", "kurtosis",
              "p5", "p25", "p50", "p75", "p95")


def trace_statistics(values: np.ndarray) -> np.ndarray:
    """The 11 summary statistics of one trace, in STAT_NAMES order."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ContractViolation("cannot summarize an empty trace")
    mean = v.mean()
    d = v - mean
    m2 = np.mean(d * d)
    std = np.sqrt(m2)
    if m2 == 0.0:
        skew = 0.0
        kurt = 0.0
    else:
        skew = np.mean(d**3) / m2**1.5
        kurt = np.mean(d**4) / m2**2
    p5, p25, p50, p75, p95 = np.percentile(v, [5, 25, 50, 75, 95])
    return np.array(
        [v.min(), v.max(), mean, std, skew, kurt, p5, p25, p50, p75, p95],
        dtype=np.float64,
    )


def feature_names(channels: Sequence[MetricKind] = CANONICAL_CHANNELS) -> list[str]:
    return [f"{stat}_{ch.value}" for ch in channels for stat in STAT_NAMES]


def extract_features(
    job: JobRecord, channels: Sequence[MetricKind] = CANONICAL_CHANNELS
) -> np.ndarray:
    """11 statistics per selected channel, concatenated in channel order."""
    parts = [trace_statistics(job.traces[ch].values) for ch in channels]
    return np.concatenate(parts)


def extract_feature_matrix(
    records: Sequence[JobRecord], channels: Sequence[MetricKind] = CANONICAL_CHANNELS
) -> np.ndarray:
    return np.stack([extract_features(r, channels) for r in records])


@dataclass(frozen=True)
class BaselineHyperparams:
    learning_rate: float = 0.5
    iterations: int = 500
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations < 1 or self.l2 < 0:
            raise ConfigError("invalid baseline hyperparameters")


@dataclass
class BaselineModel:
    class_vocab: tuple[str, ...]
    channels: tuple[MetricKind, ...]
    mean: np.ndarray
    scale: np.ndarray
    constant_mask: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    bias: np.ndarray = field(repr=False, default=None)
    hyperparams: BaselineHyperparams = field(default_factory=BaselineHyperparams)

    @property
    def feature_dim(self) -> int:
        return int(self.mean.size)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_baseline(
    features: np.ndarray,
    labels: Sequence[str],
    hyperparams: BaselineHyperparams = BaselineHyperparams(),
    channels: Sequence[MetricKind] = CANONICAL_CHANNELS,
    class_vocab: Optional[Sequence[str]] = None,
) -> BaselineModel:
    """One-vs-rest logistic scorers fit by full-batch gradient descent.

    Deterministic: zero-initialized weights and a fixed iteration count, so
    the seed only matters for interface parity with the CNN trainer.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ContractViolation("features must be a non-empty (n, d) matrix")
    if features.shape[0] != len(labels):
        raise ContractViolation("feature/label count mismatch")
    vocab = tuple(class_vocab) if class_vocab is not None else tuple(sorted(set(labels)))
    if len(vocab) < 2:
        raise ValidationError("baseline training needs at least two classes")
    if UNKNOWN_LABEL in vocab:
        raise ConfigError(f"{UNKNOWN_LABEL!r} is reserved for rejected predictions")
    index = {name: i for i, name in enumerate(vocab)}
    for lb in labels:
        if lb not in index:
            raise ValidationError(f"label {lb!r} is not in the class vocabulary")

    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    constant = sd == 0.0
    scale = np.where(constant, 1.0, sd)
    x = (features - mu) / scale

    n, d = x.shape
    k = len(vocab)
    w = np.zeros((k, d), dtype=np.float64)
    b = np.zeros(k, dtype=np.float64)
    targets = np.zeros((k, n), dtype=np.float64)
    for i, lb in enumerate(labels):
        targets[index[lb], i] = 1.0

    lr = hyperparams.learning_rate
    for _ in range(hyperparams.iterations):
        z = x @ w.T + b            # (n, k)
        p = _sigmoid(z)
        err = (p.T - targets) / n  # (k, n)
        gw = err @ x + hyperparams.l2 * w
        gb = err.sum(axis=1)
        w -= lr * gw
        b -= lr * gb

    return BaselineModel(
        class_vocab=vocab,
        channels=tuple(channels),
        mean=mu,
        scale=scale,
        constant_mask=constant,
        weights=w.astype(np.float32),
        bias=b.astype(np.float32),
        hyperparams=hyperparams,
    )


def baseline_scores(model: BaselineModel, features: np.ndarray) -> np.ndarray:
    """Per-class sigmoid scores for one feature vector or a matrix of them."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    if single:
        features = features[None]
    if features.shape[1] != model.feature_dim:
        raise ContractViolation(
            f"expected {model.feature_dim} features, got {features.shape[1]}"
        )
    x = (features - model.mean) / model.scale
    z = x @ model.weights.astype(np.float64).T + model.bias.astype(np.float64)
    scores = _sigmoid(z)
    return scores[0] if single else scores


def predict_baseline(
    model: BaselineModel, features: np.ndarray, threshold: float
) -> PredictionResult:
    """Thresholded argmax over the per-class sigmoid scores."""
    if not 0.0 <= threshold <= 1.0:
        raise ContractViolation("threshold must be in [0, 1]")
    scores = baseline_scores(model, np.asarray(features))
    if scores.ndim != 1:
        raise ContractViolation("predict_baseline takes a single feature vector")
    return PredictionResult(
        probabilities=scores,
        label=decide_label(scores, model.class_vocab, threshold),
        threshold=threshold,
    )


def features_to_csv(
    features: np.ndarray,
    job_ids: Sequence[str],
    labels: Sequence[Optional[str]],
    path: str | Path,
    channels: Sequence[MetricKind] = CANONICAL_CHANNELS,
) -> None:
    header = ["job_id", "label"] + feature_names(channels)
    lines = [",".join(header)]
    for job_id, label, row in zip(job_ids, labels, features):
        cells = [job_id, "" if label is None else label] + [repr(float(v)) for v in row]
        lines.append(",".join(cells))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def save_baseline(model: BaselineModel, path: str | Path) -> None:
    hp = model.hyperparams
    w = Writer()
    w.pack("4sH", ARBM_MAGIC, ARBM_VERSION)
    w.pack("HIB", len(model.class_vocab), model.feature_dim, len(model.channels))
    for ch in model.channels:
        w.write_string(ch.value)
    for name in model.class_vocab:
        w.write_string(name)
    w.pack("dIdQ", hp.learning_rate, hp.iterations, hp.l2, hp.seed)
    w.write_f64_array(model.mean)
    w.write_f64_array(model.scale)
    w.parts.append(model.constant_mask.astype(np.uint8).tobytes())
    w.write_f32_array(model.weights)
    w.write_f32_array(model.bias)
    atomic_write_bytes(path, w.getvalue())


def load_baseline(path: str | Path) -> BaselineModel:
    path = Path(path)
    r = Reader(path.read_bytes(), what=str(path))
    check_magic(r, ARBM_MAGIC, ARBM_VERSION)
    k, dim, n_channels = r.unpack("HIB")
    try:
        channels = tuple(MetricKind(r.read_string()) for _ in range(n_channels))
    except ValueError as exc:
        raise ModelIOError(f"{path}: unknown channel name ({exc})") from None
    vocab = tuple(r.read_string() for _ in range(k))
    lr, iters, l2, seed = r.unpack("dIdQ")
    mean = r.read_f64_array((dim,))
    scale = r.read_f64_array((dim,))
    constant = np.frombuffer(r.take(dim), dtype=np.uint8).astype(bool)
    weights = r.read_f32_array((k, dim))
    bias = r.read_f32_array((k,))
    r.expect_end()
    return BaselineModel(
        class_vocab=vocab,
        channels=channels,
        mean=mean,
        scale=scale,
        constant_mask=constant,
        weights=weights,
        bias=bias,
        hyperparams=BaselineHyperparams(lr, iters, l2, int(seed)),
    )
