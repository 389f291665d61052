"""Ingestion of per-node monitoring CSVs into per-job metric traces.

Input format: UTF-8 CSV with the exact header
``timestamp,node_id,power,tot_ins,tot_cyc,mem_total,mem_free``.
One file per job step; the filename stem is the job id.  Labels come from a
JSON manifest (array of ``{"job_id": ..., "label": ...}`` objects).

Three derived metrics are produced per node and averaged across nodes:
power (verbatim), IPC (tot_ins / tot_cyc) and memory used
(mem_total - mem_free).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    EmptyInputError,
    ParseError,
    SchemaError,
    ValidationError,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("timestamp", "node_id", "power", "tot_ins", "tot_cyc", "mem_total", "mem_free")


class MetricKind(Enum):
    POWER = "power"
    IPC = "ipc"
    MEM_USED = "mem"

    def __str__(self):
        return self.value


#: Canonical channel order for multi-channel signatures.
CANONICAL_CHANNELS = (MetricKind.POWER, MetricKind.IPC, MetricKind.MEM_USED)

METRIC_BY_NAME = {m.value: m for m in MetricKind}
# accept a couple of obvious aliases on the CLI
METRIC_BY_NAME["memory"] = MetricKind.MEM_USED
METRIC_BY_NAME["mem_used"] = MetricKind.MEM_USED


def parse_channels(names: Iterable[str]) -> tuple[MetricKind, ...]:
    """Map channel names (e.g. from a CLI flag) to metric kinds."""
    kinds = []
    for name in names:
        key = name.strip().lower()
        if key not in METRIC_BY_NAME:
            raise SchemaError(f"unknown metric channel {name!r} (choose from power, ipc, mem)")
        kinds.append(METRIC_BY_NAME[key])
    if not kinds:
        raise SchemaError("at least one metric channel is required")
    if len(set(kinds)) != len(kinds):
        raise SchemaError("duplicate metric channels")
    return tuple(kinds)


@dataclass
class RawSampleRow:
    """One monitoring sample of one node."""

    timestamp: int
    node_id: str
    power: float
    tot_ins: int
    tot_cyc: int
    mem_total: float
    mem_free: float


@dataclass
class MetricTrace:
    """A univariate series of one derived metric."""

    kind: MetricKind
    values: np.ndarray
    sample_period: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValidationError(f"{self.kind} trace must be a non-empty 1-D series")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"{self.kind} trace contains non-finite values")
        if not self.sample_period > 0:
            raise ValidationError("sample_period must be positive")

    def __len__(self):
        return int(self.values.size)


@dataclass
class JobRecord:
    """One classification unit: a job step with its three metric traces."""

    job_id: str
    label: Optional[str]
    num_nodes: int
    duration: float
    traces: dict[MetricKind, MetricTrace] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ValidationError("num_nodes must be positive")
        lengths = {len(t) for t in self.traces.values()}
        if len(lengths) > 1:
            raise ValidationError(f"job {self.job_id}: traces have unequal lengths {lengths}")

    @property
    def trace_length(self) -> int:
        return len(next(iter(self.traces.values())))


@dataclass
class IngestWarnings:
    """Mutable counters for degenerate samples seen while deriving metrics."""

    zero_cycle_samples: int = 0


def _parse_row(fields: Sequence[str], line_no: int) -> RawSampleRow:
    if len(fields) != len(CSV_HEADER):
        raise ParseError(
            f"expected {len(CSV_HEADER)} columns, got {len(fields)}", line=line_no
        )
    try:
        timestamp = int(float(fields[0]))
        power = float(fields[2])
        tot_ins = int(float(fields[3]))
        tot_cyc = int(float(fields[4]))
        mem_total = float(fields[5])
        mem_free = float(fields[6])
    except ValueError as exc:
        raise ParseError(f"non-numeric field: {exc}", line=line_no) from None
    node_id = fields[1].strip()
    if not node_id:
        raise ParseError("empty node_id", line=line_no)
    row = RawSampleRow(timestamp, node_id, power, tot_ins, tot_cyc, mem_total, mem_free)
    if row.power < 0 or row.tot_ins < 0 or row.tot_cyc < 0:
        raise ValidationError(f"line {line_no}: negative counter value")
    if row.mem_free > row.mem_total:
        raise ValidationError(
            f"line {line_no}: mem_free ({row.mem_free:g}) exceeds mem_total ({row.mem_total:g})"
        )
    return row


def parse_trace_csv(stream: IO[str]) -> dict[str, list[RawSampleRow]]:
    """Parse one job-step CSV into rows grouped by node, timestamp-sorted.

    Raises ParseError / ValidationError with the offending line number and
    EmptyInputError when the file has no data rows.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyInputError("empty trace file") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise SchemaError(
            f"bad header {','.join(header)!r}; expected {','.join(CSV_HEADER)!r}"
        )

    groups: dict[str, list[RawSampleRow]] = {}
    for line_no, fields in enumerate(reader, start=2):
        if not fields:
            continue
        row = _parse_row(fields, line_no)
        groups.setdefault(row.node_id, []).append(row)
    if not groups:
        raise EmptyInputError("trace file has a header but no data rows")

    for node_id, rows in groups.items():
        rows.sort(key=lambda r: r.timestamp)
        for prev, cur in zip(rows, rows[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValidationError(
                    f"node {node_id}: timestamps not strictly increasing "
                    f"({prev.timestamp} then {cur.timestamp})"
                )
    return groups


def derive_metrics(
    rows: Sequence[RawSampleRow], warnings: Optional[IngestWarnings] = None
) -> dict[MetricKind, MetricTrace]:
    """Derive the three canonical metric traces from one node's rows.

    IPC samples with tot_cyc == 0 are set to 0 and counted as warnings
    rather than failing the whole job.
    """
    if not rows:
        raise EmptyInputError("no rows for node")
    power = np.array([r.power for r in rows], dtype=np.float64)
    ins = np.array([r.tot_ins for r in rows], dtype=np.float64)
    cyc = np.array([r.tot_cyc for r in rows], dtype=np.float64)
    mem = np.array([r.mem_total - r.mem_free for r in rows], dtype=np.float64)

    ipc = np.zeros_like(ins)
    ok = cyc > 0
    ipc[ok] = ins[ok] / cyc[ok]
    n_zero = int(np.count_nonzero(~ok))
    if n_zero:
        if warnings is not None:
            warnings.zero_cycle_samples += n_zero
        log.warning("node %s: %d samples with tot_cyc=0, IPC set to 0", rows[0].node_id, n_zero)

    period = _sample_period(rows)
    return {
        MetricKind.POWER: MetricTrace(MetricKind.POWER, power, period),
        MetricKind.IPC: MetricTrace(MetricKind.IPC, ipc, period),
        MetricKind.MEM_USED: MetricTrace(MetricKind.MEM_USED, mem, period),
    }


def _sample_period(rows: Sequence[RawSampleRow]) -> float:
    if len(rows) < 2:
        return 1.0
    deltas = np.diff([r.timestamp for r in rows])
    return float(np.median(deltas))


def aggregate_nodes(
    per_node: Sequence[dict[MetricKind, MetricTrace]],
) -> dict[MetricKind, MetricTrace]:
    """Average per-node traces index-wise, truncating to the shortest node."""
    if not per_node:
        raise EmptyInputError("no node trace sets to aggregate")
    kinds = set(per_node[0])
    for traces in per_node[1:]:
        if set(traces) != kinds:
            raise SchemaError(
                f"mismatched metric kinds across nodes: {sorted(k.value for k in kinds)} "
                f"vs {sorted(k.value for k in traces)}"
            )
    out: dict[MetricKind, MetricTrace] = {}
    for kind in kinds:
        n = min(len(t[kind]) for t in per_node)
        stacked = np.stack([t[kind].values[:n] for t in per_node])
        period = float(np.mean([t[kind].sample_period for t in per_node]))
        out[kind] = MetricTrace(kind, stacked.mean(axis=0), period)
    return out


def filter_jobs(records: Iterable[JobRecord], min_duration: float = 60.0) -> list[JobRecord]:
    """Keep jobs with duration >= min_duration and non-empty traces, in order."""
    if min_duration < 0:
        raise ContractViolation("min_duration must be >= 0")
    return [
        r
        for r in records
        if r.duration >= min_duration and r.traces and r.trace_length > 0
    ]


def load_job_csv(
    path: str | Path,
    label: Optional[str] = None,
    warnings: Optional[IngestWarnings] = None,
) -> JobRecord:
    """Load one job-step CSV into a JobRecord (nodes averaged)."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        groups = parse_trace_csv(fh)
    per_node = [derive_metrics(rows, warnings) for rows in groups.values()]
    traces = aggregate_nodes(per_node)

    period = traces[MetricKind.POWER].sample_period
    # duration covers the last sample's interval so a 60-sample 1 Hz trace is 60 s
    spans = [rows[-1].timestamp - rows[0].timestamp for rows in groups.values()]
    duration = float(max(spans)) + period
    return JobRecord(
        job_id=path.stem,
        label=label,
        num_nodes=len(groups),
        duration=duration,
        traces=traces,
    )


def read_label_manifest(path: str | Path) -> dict[str, str]:
    """Read the JSON label manifest into a job_id -> label mapping."""
    with Path(path).open("r", encoding="utf-8") as fh:
        try:
            entries = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(entries, list):
        raise SchemaError("label manifest must be a JSON array")
    labels: dict[str, str] = {}
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "job_id" not in entry or "label" not in entry:
            raise SchemaError(f"manifest entry {i} must be an object with job_id and label")
        labels[str(entry["job_id"])] = str(entry["label"])
    return labels


def load_dataset(
    data_dir: str | Path,
    manifest: Optional[str | Path] = None,
    min_duration: float = 60.0,
    require_labels: bool = False,
) -> list[JobRecord]:
    """Load every ``*.csv`` job file under data_dir, labelled via the manifest."""
    data_dir = Path(data_dir)
    files = sorted(data_dir.glob("*.csv"))
    if not files:
        raise EmptyInputError(f"no .csv job files under {data_dir}")
    labels = read_label_manifest(manifest) if manifest else {}
    records = []
    for f in files:
        label = labels.get(f.stem)
        if require_labels and label is None:
            raise SchemaError(f"job {f.stem!r} has no label in the manifest")
        records.append(load_job_csv(f, label=label))
    kept = filter_jobs(records, min_duration)
    if len(kept) < len(records):
        log.info("filtered %d short/empty jobs of %d", len(records) - len(kept), len(records))
    return kept
