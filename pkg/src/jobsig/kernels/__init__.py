"""Conv/pool kernels with a compiled core and a pure-numpy fallback.

At import time the compiled extension is preferred; if it is missing the
numpy implementation is used.  Set ``JOBSIG_KERNELS=py`` or
``JOBSIG_KERNELS=c`` to force a backend (``c`` raises if the extension was
not built).  Both backends are bit-identical; see benchmarks/bench_kernels.py
for the speed comparison.
"""

from __future__ import annotations

import os

from . import pykernels

_FORCED = os.environ.get("JOBSIG_KERNELS", "").strip().lower()
if _FORCED not in ("", "c", "py"):
    raise ImportError(f"JOBSIG_KERNELS must be 'c' or 'py', not {_FORCED!r}")

if _FORCED == "py":
    _impl = pykernels
    BACKEND = "py"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "c"
    except ImportError:
        if _FORCED == "c":
            raise
        _impl = pykernels
        BACKEND = "py"

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward


def available_backends() -> dict[str, object]:
    """Importable backends by name, for tests and benchmarks."""
    backends: dict[str, object] = {"py": pykernels}
    try:
        from . import _ckernels  # type: ignore[attr-defined]

        backends["c"] = _ckernels
    except ImportError:
        pass
    return backends
