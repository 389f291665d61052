"""Synthetic labelled job traces with per-class temporal structure.

Each class profile describes the power, IPC and memory-used series of one
application as base level + amplitude * waveform(t) plus relative Gaussian
noise.  Waveform periods are fractions of the job duration, so jobs of a
class look alike regardless of runtime.  Generation is deterministic from
the dataset seed via counter-based Philox streams (see jobsig.prng).

The default population has four visibly distinct classes plus a
"confusable" pair whose traces share marginal statistics (mirrored power
ramps) and differ only in temporal order; moment-based features cannot
separate that pair while the image encoding can.

``write_dataset`` emits the ingestion CSV format, one file per job, and the
JSON label manifest.  Synthesized traces are single-node aggregates; with
``nodes > 1`` per-node copies are written with small multiplicative jitter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .container import atomic_write_bytes
from .errors import ConfigError, ContractViolation
from .ingest import JobRecord, MetricKind, MetricTrace
from .prng import DOMAIN_NODE_JITTER, DOMAIN_SYNTH_JOB, stream_rng

_EPOCH_START = 1_600_000_000
_TOT_CYC = 1_000_000_000
_MEM_TOTAL_KB = 134_217_728  # 128 GiB


class Waveform(Enum):
    CONSTANT = "constant"
    RAMP = "ramp"
    SQUARE = "square"
    SAWTOOTH = "sawtooth"
    PERIODIC_BURST = "periodic-burst"


@dataclass(frozen=True)
class PatternSpec:
    """base + amplitude * waveform(t); amplitude < 0 mirrors the waveform."""

    base: float
    amplitude: float = 0.0
    waveform: Waveform = Waveform.CONSTANT
    period_fraction: float = 0.25

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigError("pattern base level must be positive")
        if not 0.0 < self.period_fraction <= 1.0:
            raise ConfigError("period_fraction must be in (0, 1]")


@dataclass(frozen=True)
class ClassProfile:
    name: str
    power: PatternSpec
    ipc: PatternSpec
    mem: PatternSpec
    noise_sigma: float = 0.03
    duration_range: tuple[int, int] = (180, 900)
    node_count_range: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        lo, hi = self.duration_range
        if lo < 60 or hi < lo:
            raise ConfigError("duration_range minimum must be >= 60 s")
        nlo, nhi = self.node_count_range
        if nlo < 1 or nhi < nlo:
            raise ConfigError("node_count_range must be sane and >= 1")

    def pattern(self, kind: MetricKind) -> PatternSpec:
        return {
            MetricKind.POWER: self.power,
            MetricKind.IPC: self.ipc,
            MetricKind.MEM_USED: self.mem,
        }[kind]


@dataclass(frozen=True)
class SynthDatasetSpec:
    profiles: tuple[ClassProfile, ...]
    jobs_per_class: int
    seed: int = 0

    def __post_init__(self):
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ConfigError("profile names must be unique")
        if not self.profiles or self.jobs_per_class < 1:
            raise ConfigError("need at least one profile and one job per class")


def waveform_samples(waveform: Waveform, n: int, period_fraction: float) -> np.ndarray:
    """n samples of the unit waveform over one job duration."""
    if n < 1:
        raise ContractViolation("need at least one sample")
    if waveform is Waveform.CONSTANT:
        return np.zeros(n)
    if waveform is Waveform.RAMP:
        return np.linspace(-1.0, 1.0, n)
    pos = np.arange(n, dtype=np.float64) / n
    phase = (pos / period_fraction) % 1.0
    if waveform is Waveform.SQUARE:
        return np.where(phase < 0.5, 1.0, -1.0)
    if waveform is Waveform.SAWTOOTH:
        return 2.0 * phase - 1.0
    # periodic burst: quiet at the base level, bursting for a quarter period
    return np.where(phase < 0.25, 1.0, 0.0)


def generate_job(
    profile: ClassProfile, seed: int, counter: int = 0, job_id: Optional[str] = None
) -> JobRecord:
    """One labelled job, deterministic from (seed, counter)."""
    rng = stream_rng(seed, DOMAIN_SYNTH_JOB, counter)
    lo, hi = profile.duration_range
    duration = int(rng.integers(lo, hi + 1))
    nlo, nhi = profile.node_count_range
    num_nodes = int(rng.integers(nlo, nhi + 1))

    traces: dict[MetricKind, MetricTrace] = {}
    for kind in (MetricKind.POWER, MetricKind.IPC, MetricKind.MEM_USED):
        pat = profile.pattern(kind)
        values = pat.base + pat.amplitude * waveform_samples(
            pat.waveform, duration, pat.period_fraction
        )
        if profile.noise_sigma > 0:
            values = values + rng.normal(0.0, profile.noise_sigma * pat.base, duration)
        traces[kind] = MetricTrace(kind, np.maximum(values, 0.0), 1.0)

    return JobRecord(
        job_id=job_id if job_id is not None else f"{profile.name}_{counter:05d}",
        label=profile.name,
        num_nodes=num_nodes,
        duration=float(duration),
        traces=traces,
    )


def generate_dataset(spec: SynthDatasetSpec) -> tuple[list[JobRecord], list[dict]]:
    """jobs_per_class records per profile plus the label manifest entries."""
    records: list[JobRecord] = []
    manifest: list[dict] = []
    for class_idx, profile in enumerate(spec.profiles):
        for j in range(spec.jobs_per_class):
            counter = class_idx * spec.jobs_per_class + j
            job = generate_job(profile, spec.seed, counter, f"{profile.name}_{j:04d}")
            records.append(job)
            manifest.append({"job_id": job.job_id, "label": job.label})
    return records, manifest


def _format_value(v: float) -> str:
    return repr(float(v))


def write_job_csv(
    record: JobRecord,
    path: str | Path,
    nodes: Optional[int] = None,
    jitter_sigma: float = 0.01,
    seed: int = 0,
    counter: int = 0,
) -> None:
    """Emit one job as an ingestion CSV, splitting into per-node copies."""
    n_nodes = nodes if nodes is not None else record.num_nodes
    if n_nodes < 1:
        raise ContractViolation("nodes must be >= 1")
    n = record.trace_length
    period = max(1, int(round(record.traces[MetricKind.POWER].sample_period)))
    timestamps = _EPOCH_START + np.arange(n, dtype=np.int64) * period

    base = {kind: record.traces[kind].values for kind in record.traces}
    lines = ["timestamp,node_id,power,tot_ins,tot_cyc,mem_total,mem_free"]
    for node in range(n_nodes):
        if n_nodes == 1:
            vals = base
        else:
            rng = stream_rng(seed, DOMAIN_NODE_JITTER, (counter << 12) | node)
            vals = {
                kind: np.maximum(v * (1.0 + rng.normal(0.0, jitter_sigma, n)), 0.0)
                for kind, v in base.items()
            }
        power = vals[MetricKind.POWER]
        tot_ins = np.round(vals[MetricKind.IPC] * _TOT_CYC).astype(np.int64)
        mem_used = np.minimum(
            np.round(vals[MetricKind.MEM_USED]).astype(np.int64), _MEM_TOTAL_KB
        )
        node_id = f"n{node:03d}"
        for i in range(n):
            lines.append(
                f"{timestamps[i]},{node_id},{_format_value(power[i])},"
                f"{tot_ins[i]},{_TOT_CYC},{_MEM_TOTAL_KB},{_MEM_TOTAL_KB - mem_used[i]}"
            )
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_dataset(
    records: Sequence[JobRecord],
    out_dir: str | Path,
    manifest: Optional[Sequence[dict]] = None,
    nodes: Optional[int] = None,
    jitter_sigma: float = 0.01,
    seed: int = 0,
) -> Path:
    """Write one CSV per record plus manifest.json; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for counter, record in enumerate(records):
        write_job_csv(
            record,
            out_dir / f"{record.job_id}.csv",
            nodes=nodes,
            jitter_sigma=jitter_sigma,
            seed=seed,
            counter=counter,
        )
    if manifest is None:
        manifest = [{"job_id": r.job_id, "label": r.label} for r in records]
    manifest_path = out_dir / "manifest.json"
    atomic_write_bytes(
        manifest_path, json.dumps(list(manifest), indent=2).encode("utf-8") + b"\n"
    )
    return manifest_path


def default4() -> tuple[ClassProfile, ...]:
    """Four visibly distinct application classes."""
    return (
        ClassProfile(
            name="flat_high_power",
            power=PatternSpec(320.0),
            ipc=PatternSpec(1.6),
            mem=PatternSpec(3.0e7),
            noise_sigma=0.03,
        ),
        ClassProfile(
            name="ramp_memory",
            power=PatternSpec(240.0),
            ipc=PatternSpec(1.0),
            mem=PatternSpec(2.4e7, amplitude=1.5e7, waveform=Waveform.RAMP),
            noise_sigma=0.03,
        ),
        ClassProfile(
            # compute bursts show up in IPC and node power together
            name="burst_ipc",
            power=PatternSpec(260.0, amplitude=30.0, waveform=Waveform.PERIODIC_BURST,
                              period_fraction=0.2),
            ipc=PatternSpec(0.7, amplitude=1.5, waveform=Waveform.PERIODIC_BURST,
                            period_fraction=0.2),
            mem=PatternSpec(2.0e7),
            noise_sigma=0.03,
        ),
        ClassProfile(
            name="sawtooth_power",
            power=PatternSpec(250.0, amplitude=60.0, waveform=Waveform.SAWTOOTH,
                              period_fraction=0.25),
            ipc=PatternSpec(1.4, amplitude=0.3, waveform=Waveform.SAWTOOTH,
                            period_fraction=0.25),
            mem=PatternSpec(2.6e7),
            noise_sigma=0.03,
        ),
    )


def confusable2() -> tuple[ClassProfile, ...]:
    """Same-amplitude power sawtooths at different frequencies.

    The sampled value distributions match, so every order-free statistic
    agrees and moment-based features cannot tell the two apart; only the
    temporal arrangement (2 vs 8 cycles per job) differs.
    """
    common = dict(
        ipc=PatternSpec(1.1),
        mem=PatternSpec(2.8e7),
        noise_sigma=0.02,
        duration_range=(180, 900),
    )
    return (
        ClassProfile(
            name="sawtooth_slow",
            power=PatternSpec(280.0, amplitude=50.0, waveform=Waveform.SAWTOOTH,
                              period_fraction=0.5),
            **common,
        ),
        ClassProfile(
            name="sawtooth_fast",
            power=PatternSpec(280.0, amplitude=50.0, waveform=Waveform.SAWTOOTH,
                              period_fraction=0.125),
            **common,
        ),
    )


def default6() -> tuple[ClassProfile, ...]:
    return default4() + confusable2()


PROFILE_SETS = {
    "default4": default4,
    "confusable2": confusable2,
    "default6": default6,
}
