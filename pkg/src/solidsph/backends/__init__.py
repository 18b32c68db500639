"""Backend selection for the hot per-step kernels.

Two interchangeable implementations exist: a numba-jitted fast path
(fast.py) and a pure-numpy reference (reference.py).  The environment
variable SOLIDSPH_BACKEND picks one ("numba" | "numpy"); default is numba
when importable, with a silent fall back to numpy otherwise.
"""

from __future__ import annotations

import os

from . import reference

_env = os.environ.get("SOLIDSPH_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"SOLIDSPH_BACKEND must be 'numba' or 'numpy', got {_env!r}")

if _env == "numpy":
    _active = reference
else:
    try:
        from . import fast as _fast
        _active = _fast
    except ImportError:
        if _env == "numba":
            raise
        _active = reference


def active():
    """The module providing the selected kernel implementations."""
    return _active


def active_name():
    return _active.NAME


def set_threads(n):
    """Set the worker-thread count (numba backend only; no-op otherwise)."""
    if _active.NAME != "numba":
        return
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(int(n), limit)))
