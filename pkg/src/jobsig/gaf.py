"""Gramian angular field encoding of metric traces into job signatures.

A length-l trace is rescaled to [-1, 1], mapped to polar angles
phi = arccos(t) and turned into an l x l matrix of pairwise cosines:
cos(phi_i + phi_j) for the summation field (GASF) and cos(phi_i - phi_j)
for the difference field (GADF).  One matrix per metric becomes one channel
of the l x l x c job signature tensor.

Signatures persist as ``.arcd`` files: a 16-byte header (magic "ARCD",
version u16, l u16, c u16, kind u8, 5 pad bytes) followed by l*l*c
little-endian float32 values in channel-major order, plus a JSON sidecar
carrying job_id, label, coverage_fraction and channel_order.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .container import atomic_write_bytes
from .errors import ContractViolation, ModelIOError, VisualizationError
from .ingest import JobRecord, MetricKind, MetricTrace
from .resample import ResampleSpec, resample

ARCD_MAGIC = b"ARCD"
ARCD_VERSION = 1
_HEADER = struct.Struct("<4sHHHB5x")
assert _HEADER.size == 16


class FieldKind(Enum):
    GASF = "gasf"
    GADF = "gadf"
    # interop variant: sin(phi_i - phi_j), the convention used by most
    # other GAF implementations
    GADF_SIN = "gadf-sin"

    @property
    def code(self) -> int:
        return {"gasf": 0, "gadf": 1, "gadf-sin": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "FieldKind":
        for kind in cls:
            if kind.code == code:
                return kind
        raise ModelIOError(f"unknown field kind code {code}")


@dataclass
class PolarTrace:
    """Angles in [0, pi] plus the (diagnostic-only) radius ramp."""

    phi: np.ndarray
    r: np.ndarray


@dataclass
class JobSignature:
    """An l x l x c tensor of values in [-1, 1], one channel per metric."""

    tensor: np.ndarray
    channel_order: tuple[MetricKind, ...]
    kind: FieldKind
    job_id: str
    label: Optional[str] = None
    coverage_fraction: float = 1.0

    def __post_init__(self):
        t = np.asarray(self.tensor, dtype=np.float32)
        if t.ndim != 3 or t.shape[0] != t.shape[1]:
            raise ContractViolation(f"signature tensor must be l x l x c, got {t.shape}")
        if t.shape[2] != len(self.channel_order):
            raise ContractViolation("channel_order length does not match tensor depth")
        if not 0.0 < self.coverage_fraction <= 1.0:
            raise ContractViolation("coverage_fraction must be in (0, 1]")
        self.tensor = t

    @property
    def side(self) -> int:
        return int(self.tensor.shape[0])

    @property
    def channels(self) -> int:
        return int(self.tensor.shape[2])


def rescale_unit(values: np.ndarray) -> np.ndarray:
    """Rescale a trace to [-1, 1]; a constant trace maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractViolation("cannot rescale an empty trace")
    vmax = values.max()
    vmin = values.min()
    if vmax == vmin:
        return np.zeros_like(values)
    scaled = ((values - vmax) + (values - vmin)) / (vmax - vmin)
    # guard arccos against 1 + epsilon rounding
    return np.clip(scaled, -1.0, 1.0)


def to_polar(normalized: np.ndarray) -> PolarTrace:
    """Map a [-1, 1] trace to angles arccos(t) and radii (i+1)/l."""
    normalized = np.asarray(normalized, dtype=np.float64)
    n = normalized.size
    phi = np.arccos(normalized)
    r = (np.arange(n, dtype=np.float64) + 1.0) / n
    return PolarTrace(phi=phi, r=r)


def gasf(pt: PolarTrace) -> np.ndarray:
    """Summation field: cos(phi_i + phi_j)."""
    phi = pt.phi
    return np.cos(phi[:, None] + phi[None, :])


def gadf(pt: PolarTrace, use_sin: bool = False) -> np.ndarray:
    """Difference field: cos(phi_i - phi_j), or sin with use_sin for interop."""
    phi = pt.phi
    diff = phi[:, None] - phi[None, :]
    return np.sin(diff) if use_sin else np.cos(diff)


def field_matrix(values: np.ndarray, kind: FieldKind) -> np.ndarray:
    """Full trace -> field pipeline for one channel (float64 l x l)."""
    pt = to_polar(rescale_unit(values))
    if kind is FieldKind.GASF:
        return gasf(pt)
    if kind is FieldKind.GADF:
        return gadf(pt)
    return gadf(pt, use_sin=True)


def encode_signature(
    traces: Sequence[MetricTrace],
    kind: FieldKind = FieldKind.GASF,
    job_id: str = "",
    label: Optional[str] = None,
    coverage_fraction: float = 1.0,
) -> JobSignature:
    """Stack one field matrix per metric trace into a multi-channel signature."""
    if not traces:
        raise ContractViolation("at least one trace is required")
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ContractViolation(f"traces must share one length, got {sorted(lengths)}")
    channels = [field_matrix(t.values, kind) for t in traces]
    tensor = np.stack(channels, axis=-1).astype(np.float32)
    return JobSignature(
        tensor=tensor,
        channel_order=tuple(t.kind for t in traces),
        kind=kind,
        job_id=job_id,
        label=label,
        coverage_fraction=coverage_fraction,
    )


def encode_job(
    job: JobRecord,
    spec: ResampleSpec,
    kind: FieldKind = FieldKind.GASF,
    channels: Sequence[MetricKind] = (MetricKind.POWER, MetricKind.IPC, MetricKind.MEM_USED),
) -> JobSignature:
    """Resample the selected channels of a job and encode its signature."""
    traces = [resample(job.traces[c], spec) for c in channels]
    return encode_signature(traces, kind, job_id=job.job_id, label=job.label)


def partial_signature(
    job: JobRecord,
    fraction: float,
    spec: ResampleSpec,
    kind: FieldKind = FieldKind.GASF,
    channels: Sequence[MetricKind] = (MetricKind.POWER, MetricKind.IPC, MetricKind.MEM_USED),
) -> JobSignature:
    """Encode only the leading fraction of the job's traces."""
    if not 0.0 < fraction <= 1.0:
        raise ContractViolation("fraction must be in (0, 1]")
    n = job.trace_length
    prefix = math.ceil(fraction * n)
    if prefix < 1:
        raise ContractViolation("prefix would be empty")
    traces = []
    for c in channels:
        t = job.traces[c]
        traces.append(resample(MetricTrace(t.kind, t.values[:prefix], t.sample_period), spec))
    sig = encode_signature(traces, kind, job_id=job.job_id, label=job.label,
                           coverage_fraction=fraction)
    return sig


def to_pixels(sig: JobSignature) -> np.ndarray:
    """Map [-1, 1] entries to integer pixel values floor((v+1)/2 * 255)."""
    v = sig.tensor.astype(np.float64)
    pixels = np.floor((v + 1.0) / 2.0 * 255.0)
    return np.clip(pixels, 0, 255).astype(np.uint8)


def export_png(sig: JobSignature, path: str | Path) -> None:
    """Render a 1-channel (grayscale) or 3-channel (RGB) signature as a PNG."""
    pixels = to_pixels(sig)
    if sig.channels == 1:
        img = Image.fromarray(pixels[:, :, 0], mode="L")
    elif sig.channels == 3:
        img = Image.fromarray(pixels, mode="RGB")
    else:
        raise VisualizationError(
            f"cannot visualize {sig.channels}-channel signature (only 1 or 3 supported)"
        )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_signature(sig: JobSignature, path: str | Path) -> None:
    """Write the .arcd tensor file plus its JSON sidecar."""
    path = Path(path)
    header = _HEADER.pack(ARCD_MAGIC, ARCD_VERSION, sig.side, sig.channels, sig.kind.code)
    payload = np.ascontiguousarray(sig.tensor.transpose(2, 0, 1), dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)
    sidecar = {
        "job_id": sig.job_id,
        "label": sig.label,
        "coverage_fraction": sig.coverage_fraction,
        "channel_order": [c.value for c in sig.channel_order],
    }
    atomic_write_bytes(
        _sidecar_path(path), json.dumps(sidecar, indent=2).encode("utf-8") + b"\n"
    )


def load_signature(path: str | Path) -> JobSignature:
    """Read an .arcd file and its sidecar back into a JobSignature."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ModelIOError(f"{path}: truncated signature file")
    magic, version, side, channels, kind_code = _HEADER.unpack_from(data)
    if magic != ARCD_MAGIC:
        raise ModelIOError(f"{path}: bad magic {magic!r}")
    if version != ARCD_VERSION:
        raise ModelIOError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * side * side * channels
    if len(data) != expected:
        raise ModelIOError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    tensor = flat.reshape(channels, side, side).transpose(1, 2, 0).astype(np.float32)

    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise ModelIOError(f"{path}: missing sidecar {sidecar_file.name}")
    meta = json.loads(sidecar_file.read_text(encoding="utf-8"))
    order = tuple(MetricKind(name) for name in meta["channel_order"])
    return JobSignature(
        tensor=tensor,
        channel_order=order,
        kind=FieldKind.from_code(kind_code),
        job_id=meta.get("job_id", path.stem),
        label=meta.get("label"),
        coverage_fraction=float(meta.get("coverage_fraction", 1.0)),
    )
