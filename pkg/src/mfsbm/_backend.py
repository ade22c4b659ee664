"""Select the compiled kernels when available, else the numpy fallback.

Set MFSBM_BACKEND=python to force the fallback.
"""
import os

import numpy as np

from . import _fallback

_core = None
if os.environ.get("MFSBM_BACKEND", "").lower() != "python":
    try:
        from . import _core  # type: ignore[no-redef]
    except ImportError:
        _core = None

BACKEND = "compiled" if _core is not None else "python"


def _impl(name, backend=None):
    use = backend or BACKEND
    if use == "compiled":
        if _core is None:
            raise ImportError("compiled kernels are not built")
        return getattr(_core, name)
    return getattr(_fallback, name)


def chain_weights(parents, times, x, normals, backend=None):
    return _impl("chain_weights", backend)(
        np.ascontiguousarray(parents, dtype=np.int_), np.ascontiguousarray(times, dtype=float),
        float(x), np.ascontiguousarray(normals, dtype=float))


def advance_segments(pos, rem, rate, expo, normals, coins, backend=None):
    arrs = [np.ascontiguousarray(a, dtype=float) for a in (pos, rem, rate, expo, normals, coins)]
    return _impl("advance_segments", backend)(*arrs)


# beyond this many kernel widths a particle's contribution is below 1e-17 of the peak
CUTOFF_WIDTHS = 9.0


def power_sums(pos, replica, n_replicas, points, delta, max_power, backend=None):
    """sum_i p_delta(y - pos_i)^j per replica, point y and power j (see _fallback.power_sums)."""
    pos = np.asarray(pos, dtype=float)
    order = np.argsort(pos, kind="stable")
    ps = np.ascontiguousarray(pos[order])
    rs = np.ascontiguousarray(np.asarray(replica)[order], dtype=np.int_)
    points = np.ascontiguousarray(points, dtype=float)
    half = CUTOFF_WIDTHS * np.sqrt(delta)
    lo = np.searchsorted(ps, points - half, side="left").astype(np.int_)
    hi = np.searchsorted(ps, points + half, side="right").astype(np.int_)
    return _impl("power_sums", backend)(ps, rs, int(n_replicas), points, float(delta), int(max_power), lo, hi)
