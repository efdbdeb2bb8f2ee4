"""Backend dispatch for the numerical hot kernels.

The default backend is numba-compiled; set ``PIDECTRL_BACKEND=numpy`` to force
the pure-numpy fallback (or ``numba`` to fail loudly if numba is missing).
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_requested = os.environ.get("PIDECTRL_BACKEND", "auto").lower()
if _requested not in {"auto", "numba", "numpy"}:
    raise RuntimeError(f"PIDECTRL_BACKEND must be auto|numba|numpy, got {_requested!r}")

if _requested == "numpy":
    from . import numpy_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        if _requested == "numba":
            raise
        from . import numpy_impl as _impl

ACTIVE_BACKEND = _impl.BACKEND_NAME

resample_exp_stretch = _impl.resample_exp_stretch
exp_conv_last = _impl.exp_conv_last
ssa_final_states = _impl.ssa_final_states

__all__ = [
    "ACTIVE_BACKEND",
    "resample_exp_stretch",
    "exp_conv_last",
    "ssa_final_states",
]
