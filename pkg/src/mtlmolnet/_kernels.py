"""Hot aggregation kernels: numba jit fast path, pure-numpy fallback.

The only kernel that matters for throughput is the row scatter-add used to
aggregate directed-edge messages onto atoms; ``np.add.at`` is correct but
slow, so a sequential numba loop is used when available.

Backend selection via the ``MTLMOLNET_BACKEND`` environment variable:

* unset / ``numba`` -- use numba when importable (``numba`` additionally
  makes a missing numba an import error instead of a silent fallback)
* ``numpy``         -- force the pure-numpy path

Both paths accumulate in row order, so their outputs are bit-identical.
``benchmarks/kernel_bench.py`` compares them head to head.
"""

import os
import warnings

import numpy as np

_BACKEND_ENV = os.environ.get("MTLMOLNET_BACKEND", "").strip().lower()
if _BACKEND_ENV not in ("", "numba", "numpy"):
    warnings.warn(f"unknown MTLMOLNET_BACKEND={_BACKEND_ENV!r}, using default")
    _BACKEND_ENV = ""


def scatter_add_rows_numpy(src, index, out):
    """Accumulate src rows into out[index[i]] += src[i], in row order."""
    np.add.at(out, index, src)
    return out


_HAS_NUMBA = False
if _BACKEND_ENV != "numpy":
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        if _BACKEND_ENV == "numba":
            raise
        warnings.warn("numba not importable, falling back to numpy kernels")

if _HAS_NUMBA:

    @njit(cache=True)
    def _scatter_add_jit(src, index, out):
        m, h = src.shape
        for i in range(m):
            r = index[i]
            for j in range(h):
                out[r, j] += src[i, j]

    def scatter_add_rows_numba(src, index, out):
        """Numba-compiled equivalent of scatter_add_rows_numpy."""
        _scatter_add_jit(
            np.ascontiguousarray(src), np.ascontiguousarray(index), out
        )
        return out

else:
    scatter_add_rows_numba = None


def backend_name():
    return "numba" if _HAS_NUMBA else "numpy"


def scatter_add_rows(src, index, out):
    """Row scatter-add on the active backend.

    Accumulation order is the row order of ``src`` on either backend, so
    repeated indices produce identical floating-point results.
    """
    if _HAS_NUMBA:
        return scatter_add_rows_numba(src, index, out)
    return scatter_add_rows_numpy(src, index, out)
