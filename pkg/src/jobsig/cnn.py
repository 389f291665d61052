"""Convolutional classifier for job signatures.

Architecture: three conv(3x3, same)/ReLU/maxpool(2x2) stages learning
32, 64 and 128 kernels, dropout 0.30, flatten, dense+ReLU, dropout 0.70,
dense softmax head.  Training is seeded mini-batch gradient descent with
momentum on categorical cross-entropy; runs are bit-reproducible.

Predictions apply a confidence threshold: the argmax class is emitted only
when its score reaches the threshold, otherwise the label is ``unknown``.

Models persist as ``.arcm`` files: magic "ARCM", version, config fields,
length-prefixed class vocabulary, then weight tensors in layer order as
little-endian float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .container import Reader, Writer, atomic_write_bytes, check_magic
from .errors import ConfigError, ContractViolation, ModelIOError, TrainingDiverged, ValidationError
from .prng import (
    DOMAIN_DROPOUT,
    DOMAIN_GRADCHECK,
    DOMAIN_MODEL_INIT,
    DOMAIN_SHUFFLE,
    stream_rng,
)
from .layers import (
    conv2d_backward,
    conv2d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy_grad,
)

ARCM_MAGIC = b"ARCM"
ARCM_VERSION = 1

UNKNOWN_LABEL = "unknown"

PARAM_ORDER = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "conv3_w", "conv3_b",
    "dense1_w", "dense1_b",
    "dense2_w", "dense2_b",
)

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CnnConfig:
    input_side: int
    channels: int
    num_classes: int
    conv_kernels: tuple[int, int, int] = (32, 64, 128)
    kernel_size: int = 3
    dense_units: int = 128
    dropout_pre_flatten: float = 0.30
    dropout_dense: float = 0.70
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size != 3:
            raise ConfigError("only 3x3 kernels are supported")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.pooled_side < 1:
            raise ConfigError(
                f"input_side {self.input_side} collapses to nothing after three 2x2 pools"
            )
        if len(self.conv_kernels) != 3 or any(k < 1 for k in self.conv_kernels):
            raise ConfigError("conv_kernels must be three positive counts")
        if self.dense_units < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("dense_units/batch_size must be positive, epochs >= 0")
        for rate in (self.dropout_pre_flatten, self.dropout_dense):
            if not 0.0 <= rate < 1.0:
                raise ConfigError("dropout rates must be in [0, 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigError("seed must be a non-negative 64-bit integer")

    @property
    def pooled_side(self) -> int:
        side = self.input_side
        for _ in range(3):
            side //= 2
        return side

    @property
    def flatten_size(self) -> int:
        return self.pooled_side * self.pooled_side * self.conv_kernels[2]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        k1, k2, k3 = self.conv_kernels
        return {
            "conv1_w": (k1, self.channels, 3, 3),
            "conv1_b": (k1,),
            "conv2_w": (k2, k1, 3, 3),
            "conv2_b": (k2,),
            "conv3_w": (k3, k2, 3, 3),
            "conv3_b": (k3,),
            "dense1_w": (self.flatten_size, self.dense_units),
            "dense1_b": (self.dense_units,),
            "dense2_w": (self.dense_units, self.num_classes),
            "dense2_b": (self.num_classes,),
        }


@dataclass
class CnnModel:
    config: CnnConfig
    class_vocab: tuple[str, ...]
    params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def label_index(self, label: str) -> int:
        try:
            return self.class_vocab.index(label)
        except ValueError:
            raise ValidationError(f"label {label!r} is not in the class vocabulary") from None


@dataclass
class PredictionResult:
    """Per-class scores plus the thresholded decision.

    For the CNN the scores are softmax probabilities (non-negative, sum 1);
    the statistical baseline fills this with independent per-class sigmoid
    scores instead.
    """

    probabilities: np.ndarray
    label: str
    threshold: float


def decide_label(scores: np.ndarray, class_vocab: Sequence[str], threshold: float) -> str:
    """Confidence-thresholded argmax; ties break to the lowest class index."""
    scores = np.asarray(scores)
    i = int(np.argmax(scores))
    return class_vocab[i] if scores[i] >= threshold else UNKNOWN_LABEL


def _check_vocab(class_vocab: Sequence[str], k: int) -> tuple[str, ...]:
    vocab = tuple(class_vocab)
    if len(vocab) != k:
        raise ConfigError(f"vocabulary has {len(vocab)} names for {k} classes")
    if len(set(vocab)) != len(vocab):
        raise ConfigError("class vocabulary contains duplicates")
    if UNKNOWN_LABEL in vocab:
        raise ConfigError(f"{UNKNOWN_LABEL!r} is reserved for rejected predictions")
    return vocab


_HEAD_INIT_STD = 0.01


def build_model(config: CnnConfig, class_vocab: Sequence[str]) -> CnnModel:
    """Seeded init: He fan-in scaling for the ReLU layers, zero biases.

    The softmax head uses a small fixed scale instead so a fresh model
    predicts near-uniform probabilities.
    """
    vocab = _check_vocab(class_vocab, config.num_classes)
    rng = stream_rng(config.seed, DOMAIN_MODEL_INIT)
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float32)
            continue
        if name == "dense2_w":
            scale = _HEAD_INIT_STD
        elif name.startswith("conv"):
            scale = np.sqrt(2.0 / (shape[1] * shape[2] * shape[3]))
        else:
            scale = np.sqrt(2.0 / shape[0])
        params[name] = (rng.standard_normal(shape) * scale).astype(np.float32)
    return CnnModel(config=config, class_vocab=vocab, params=params)


def _forward(params, x, config, training=False, dropout_rng=None):
    """x is NCHW, same dtype as the params.  Returns (probs, caches)."""
    caches = {}
    h, caches["conv1"] = conv2d_forward(x, params["conv1_w"], params["conv1_b"])
    h, caches["relu1"] = relu_forward(h)
    h, caches["pool1"] = maxpool_forward(h)
    h, caches["conv2"] = conv2d_forward(h, params["conv2_w"], params["conv2_b"])
    h, caches["relu2"] = relu_forward(h)
    h, caches["pool2"] = maxpool_forward(h)
    h, caches["conv3"] = conv2d_forward(h, params["conv3_w"], params["conv3_b"])
    h, caches["relu3"] = relu_forward(h)
    h, caches["pool3"] = maxpool_forward(h)
    if training and config.dropout_pre_flatten > 0:
        h, caches["drop1"] = dropout_forward(h, config.dropout_pre_flatten, dropout_rng)
    else:
        caches["drop1"] = None
    caches["conv_out_shape"] = h.shape
    h = h.reshape(h.shape[0], -1)
    h, caches["dense1"] = dense_forward(h, params["dense1_w"], params["dense1_b"])
    h, caches["relu4"] = relu_forward(h)
    if training and config.dropout_dense > 0:
        h, caches["drop2"] = dropout_forward(h, config.dropout_dense, dropout_rng)
    else:
        caches["drop2"] = None
    logits, caches["dense2"] = dense_forward(h, params["dense2_w"], params["dense2_b"])
    return softmax(logits), caches


def _backward(params, caches, probs, onehot):
    grads = {}
    d = softmax_cross_entropy_grad(probs, onehot)
    d, grads["dense2_w"], grads["dense2_b"] = dense_backward(d, params["dense2_w"], caches["dense2"])
    d = dropout_backward(d, caches["drop2"])
    d = relu_backward(d, caches["relu4"])
    d, grads["dense1_w"], grads["dense1_b"] = dense_backward(d, params["dense1_w"], caches["dense1"])
    d = d.reshape(caches["conv_out_shape"])
    d = dropout_backward(d, caches["drop1"])
    d = maxpool_backward(d, caches["pool3"])
    d = relu_backward(d, caches["relu3"])
    d, grads["conv3_w"], grads["conv3_b"] = conv2d_backward(d, params["conv3_w"], caches["conv3"])
    d = maxpool_backward(d, caches["pool2"])
    d = relu_backward(d, caches["relu2"])
    d, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(d, params["conv2_w"], caches["conv2"])
    d = maxpool_backward(d, caches["pool1"])
    d = relu_backward(d, caches["relu1"])
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(d, params["conv1_w"], caches["conv1"])
    return grads


def _to_nchw(tensors: np.ndarray, config: CnnConfig, dtype) -> np.ndarray:
    tensors = np.asarray(tensors)
    if tensors.ndim == 3:
        tensors = tensors[None]
    if tensors.ndim != 4 or tensors.shape[1:] != (
        config.input_side, config.input_side, config.channels
    ):
        raise ContractViolation(
            f"expected signatures of shape (n, {config.input_side}, "
            f"{config.input_side}, {config.channels}), got {tensors.shape}"
        )
    return np.ascontiguousarray(tensors.transpose(0, 3, 1, 2), dtype=dtype)


def forward(
    model: CnnModel,
    tensors: np.ndarray,
    training_mode: bool = False,
    dropout_rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Class probabilities for a batch of (l, l, c) signature tensors."""
    if training_mode and dropout_rng is None:
        raise ContractViolation("training_mode forward needs a dropout rng")
    x = _to_nchw(tensors, model.config, np.float32)
    probs, _ = _forward(model.params, x, model.config, training_mode, dropout_rng)
    return probs


def _eval_metrics(params, config, x, onehot, batch_size):
    n = x.shape[0]
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        xb = x[start : start + batch_size]
        yb = onehot[start : start + batch_size]
        probs, _ = _forward(params, xb, config, training=False)
        loss_sum += cross_entropy(probs, yb) * xb.shape[0]
        correct += int((probs.argmax(axis=1) == yb.argmax(axis=1)).sum())
    return loss_sum / n, correct / n


def _labels_to_onehot(labels: Sequence[str], model: CnnModel) -> np.ndarray:
    idx = np.array([model.label_index(lb) for lb in labels], dtype=np.intp)
    onehot = np.zeros((len(labels), model.config.num_classes), dtype=np.float32)
    onehot[np.arange(len(labels)), idx] = 1.0
    return onehot


def train(
    model: CnnModel,
    train_set: tuple[np.ndarray, Sequence[str]],
    val_set: tuple[np.ndarray, Sequence[str]],
) -> tuple[CnnModel, list[dict]]:
    """Mini-batch SGD with momentum; returns the model and per-epoch history.

    History rows carry train/validation loss and accuracy.  Two runs with the
    same seed, data and backend produce bit-identical weights.
    """
    config = model.config
    train_x_raw, train_labels = train_set
    val_x_raw, val_labels = val_set
    if len(train_labels) == 0 or len(val_labels) == 0:
        raise ContractViolation("training and validation sets must be non-empty")

    x = _to_nchw(train_x_raw, config, np.float32)
    y = _labels_to_onehot(train_labels, model)
    vx = _to_nchw(val_x_raw, config, np.float32)
    vy = _labels_to_onehot(val_labels, model)

    history: list[dict] = []
    if config.epochs == 0:
        return model, history

    shuffle_rng = stream_rng(config.seed, DOMAIN_SHUFFLE)
    dropout_rng = stream_rng(config.seed, DOMAIN_DROPOUT)
    params = model.params
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    lr = np.float32(config.learning_rate)
    mu = np.float32(config.momentum)
    n = x.shape[0]

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = perm[start : start + config.batch_size]
            xb = x[sel]
            yb = y[sel]
            probs, caches = _forward(params, xb, config, training=True, dropout_rng=dropout_rng)
            batch_loss = cross_entropy(probs, yb)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, samples {start}..{start + len(sel)}"
                )
            grads = _backward(params, caches, probs, yb)
            for name in PARAM_ORDER:
                v = velocity[name]
                v *= mu
                v -= lr * grads[name]
                params[name] += v
        # epoch-end metrics are measured with dropout off, like validation
        train_loss, train_acc = _eval_metrics(params, config, x, y, config.batch_size)
        val_loss, val_acc = _eval_metrics(params, config, vx, vy, config.batch_size)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "train_acc": train_acc,
                "val_loss": val_loss,
                "val_acc": val_acc,
            }
        )
    return model, history


HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def history_to_csv(history: Sequence[dict], path: str | Path) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(repr(row[c]) if c != "epoch" else str(row[c]) for c in HISTORY_COLUMNS))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def predict(model: CnnModel, tensor: np.ndarray, threshold: float) -> PredictionResult:
    """Eq.-style thresholded prediction for a single signature tensor."""
    if not 0.0 <= threshold <= 1.0:
        raise ContractViolation("threshold must be in [0, 1]")
    probs = forward(model, tensor)[0]
    return PredictionResult(
        probabilities=probs,
        label=decide_label(probs, model.class_vocab, threshold),
        threshold=threshold,
    )


def predict_batch(model: CnnModel, tensors: np.ndarray, threshold: float) -> list[PredictionResult]:
    if not 0.0 <= threshold <= 1.0:
        raise ContractViolation("threshold must be in [0, 1]")
    probs = forward(model, tensors)
    return [
        PredictionResult(p, decide_label(p, model.class_vocab, threshold), threshold)
        for p in probs
    ]


def gradient_check(
    model: CnnModel,
    tensors: np.ndarray,
    labels: Sequence[str],
    epsilon: float = 1e-4,
    num_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central finite differences.

    Runs the exact layer code in float64 with dropout disabled, perturbing a
    random sample of parameters.
    """
    config = model.config
    params64 = {name: p.astype(np.float64) for name, p in model.params.items()}
    x = _to_nchw(tensors, config, np.float64)
    onehot = _labels_to_onehot(labels, model).astype(np.float64)

    probs, caches = _forward(params64, x, config, training=False)
    grads = _backward(params64, caches, probs, onehot)

    sizes = [(name, params64[name].size) for name in PARAM_ORDER]
    total = sum(s for _, s in sizes)
    rng = stream_rng(seed, DOMAIN_GRADCHECK)
    picks = rng.choice(total, size=min(num_samples, total), replace=False)

    def loss_at() -> float:
        p, _ = _forward(params64, x, config, training=False)
        return cross_entropy(p, onehot)

    max_rel = 0.0
    for flat in np.sort(picks):
        offset = int(flat)
        for name, size in sizes:
            if offset < size:
                break
            offset -= size
        view = params64[name].ravel()
        original = view[offset]
        view[offset] = original + epsilon
        loss_plus = loss_at()
        view[offset] = original - epsilon
        loss_minus = loss_at()
        view[offset] = original
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = grads[name].ravel()[offset]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel


def save_model(model: CnnModel, path: str | Path) -> None:
    cfg = model.config
    w = Writer()
    w.pack("4sH", ARCM_MAGIC, ARCM_VERSION)
    w.pack(
        "HHHHHHBI",
        cfg.input_side,
        cfg.channels,
        cfg.num_classes,
        cfg.conv_kernels[0],
        cfg.conv_kernels[1],
        cfg.conv_kernels[2],
        cfg.kernel_size,
        cfg.dense_units,
    )
    w.pack("ddIIddQ", cfg.dropout_pre_flatten, cfg.dropout_dense, cfg.epochs,
           cfg.batch_size, cfg.learning_rate, cfg.momentum, cfg.seed)
    w.pack("H", len(model.class_vocab))
    for name in model.class_vocab:
        w.write_string(name)
    for name in PARAM_ORDER:
        w.write_f32_array(model.params[name])
    atomic_write_bytes(path, w.getvalue())


def load_model(path: str | Path) -> CnnModel:
    path = Path(path)
    r = Reader(path.read_bytes(), what=str(path))
    check_magic(r, ARCM_MAGIC, ARCM_VERSION)
    side, channels, k, k1, k2, k3, ksize, dense_units = r.unpack("HHHHHHBI")
    d_pre, d_dense, epochs, batch, lr, momentum, seed = r.unpack("ddIIddQ")
    try:
        config = CnnConfig(
            input_side=side,
            channels=channels,
            num_classes=k,
            conv_kernels=(k1, k2, k3),
            kernel_size=ksize,
            dense_units=dense_units,
            dropout_pre_flatten=d_pre,
            dropout_dense=d_dense,
            epochs=epochs,
            batch_size=batch,
            learning_rate=lr,
            momentum=momentum,
            seed=int(seed),
        )
    except ConfigError as exc:
        raise ModelIOError(f"{path}: invalid stored config: {exc}") from None
    (n_vocab,) = r.unpack("H")
    vocab = tuple(r.read_string() for _ in range(n_vocab))
    params = {name: r.read_f32_array(shape) for name, shape in config.param_shapes().items()}
    r.expect_end()
    return CnnModel(config=config, class_vocab=_check_vocab(vocab, k), params=params)


def clone_config(config: CnnConfig, **overrides) -> CnnConfig:
    """Convenience for experiment sweeps that vary a few fields."""
    return replace(config, **overrides)
