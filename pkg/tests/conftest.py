import numpy as np
import pytest

from jobsig.ingest import JobRecord, MetricKind, MetricTrace


def make_trace(values, kind=MetricKind.POWER, period=1.0):
    return MetricTrace(kind, np.asarray(values, dtype=np.float64), period)


def make_job(job_id="job1", label="classA", power=None, ipc=None, mem=None, num_nodes=1):
    n = len(power) if power is not None else 64
    power = power if power is not None else np.linspace(100, 300, n)
    ipc = ipc if ipc is not None else np.full(n, 1.5)
    mem = mem if mem is not None else np.linspace(1e6, 5e6, n)
    traces = {
        MetricKind.POWER: make_trace(power, MetricKind.POWER),
        MetricKind.IPC: make_trace(ipc, MetricKind.IPC),
        MetricKind.MEM_USED: make_trace(mem, MetricKind.MEM_USED),
    }
    return JobRecord(job_id=job_id, label=label, num_nodes=num_nodes,
                     duration=float(n), traces=traces)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
