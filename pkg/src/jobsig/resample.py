"""Normalize metric traces to a fixed length.

Traces longer than the target length are downsampled by aggregating
consecutive groups of ``floor(n/l)`` points (mean, max, min or median);
the trailing remainder is discarded.  Traces shorter than the target are
upsampled by forward-filling each point ``floor(l/n)`` times and tail-padding
with the last value until the length is exactly ``l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ContractViolation, EmptyInputError
from .ingest import MetricTrace


class AggFn(Enum):
    MEAN = "mean"
    MAX = "max"
    MIN = "min"
    MEDIAN = "median"

    def apply(self, groups: np.ndarray) -> np.ndarray:
        """Reduce an (l, g) array of groups along its last axis."""
        if self is AggFn.MEAN:
            return groups.mean(axis=-1)
        if self is AggFn.MAX:
            return groups.max(axis=-1)
        if self is AggFn.MIN:
            return groups.min(axis=-1)
        return np.median(groups, axis=-1)


@dataclass(frozen=True)
class ResampleSpec:
    target_length: int
    agg_fn: AggFn = AggFn.MEAN

    def __post_init__(self):
        if self.target_length < 2:
            raise ContractViolation("target_length must be >= 2")


def downsample(trace: MetricTrace, spec: ResampleSpec) -> MetricTrace:
    """Aggregate groups of floor(n/l) points down to exactly l points."""
    n = len(trace)
    l = spec.target_length
    if n <= l:
        raise ContractViolation(f"downsample requires n > l (n={n}, l={l})")
    g = n // l
    groups = trace.values[: l * g].reshape(l, g)
    values = spec.agg_fn.apply(groups)
    return MetricTrace(trace.kind, values, trace.sample_period * g)


def upsample(trace: MetricTrace, target_length: int) -> MetricTrace:
    """Forward-fill each point floor(l/n) times, tail-padding to exactly l."""
    n = len(trace)
    l = target_length
    if n == 0:
        raise EmptyInputError("cannot upsample an empty trace")
    if n >= l:
        raise ContractViolation(f"upsample requires n < l (n={n}, l={l})")
    reps = l // n
    values = np.repeat(trace.values, reps)
    if values.size < l:
        values = np.concatenate([values, np.full(l - values.size, values[-1])])
    return MetricTrace(trace.kind, values, trace.sample_period * n / l)


def resample(trace: MetricTrace, spec: ResampleSpec) -> MetricTrace:
    """Resample to exactly spec.target_length, whatever the input length."""
    n = len(trace)
    if n > spec.target_length:
        return downsample(trace, spec)
    if n < spec.target_length:
        return upsample(trace, spec.target_length)
    return MetricTrace(trace.kind, trace.values.copy(), trace.sample_period)
