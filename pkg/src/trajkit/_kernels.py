"""Hot geometry kernels used by scenario preprocessing and map priors.

Each kernel ships in two flavours: a numba ``@njit`` build and a pure-numpy
fallback. Selection happens once at import time through the ``TRAJKIT_NUMBA``
environment variable (``0``/``false`` forces the numpy path); when numba is
not importable the fallback is used silently. Both paths compute identical
results, which ``tests/test_kernels.py`` asserts and
``benchmarks/bench_kernels.py`` times.
"""

from __future__ import annotations

import os

import numpy as np


def _env_wants_numba() -> bool:
    flag = os.environ.get("TRAJKIT_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# --- pure numpy implementations ---------------------------------------------

def _np_cumulative_arclength(points: np.ndarray) -> np.ndarray:
    seg = np.sqrt(np.sum(np.diff(points, axis=0) ** 2, axis=1))
    out = np.empty(points.shape[0], dtype=np.float64)
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def _np_nearest_waypoint(points: np.ndarray, query: np.ndarray) -> int:
    d2 = np.sum((points - query) ** 2, axis=1)
    return int(np.argmin(d2))


def _np_truncation_end(cumlen: np.ndarray, start: int, distance: float) -> int:
    # first index p >= start with cumlen[p] - cumlen[start] >= distance,
    # else the last index
    rel = cumlen[start:] - cumlen[start]
    hits = np.nonzero(rel >= distance)[0]
    if hits.size == 0:
        return int(cumlen.shape[0] - 1)
    return int(start + hits[0])


def _np_resample_linear(points: np.ndarray, cumlen: np.ndarray, n: int) -> np.ndarray:
    total = cumlen[-1]
    s = np.linspace(0.0, total, n)
    out = np.empty((n, 2), dtype=np.float64)
    out[:, 0] = np.interp(s, cumlen, points[:, 0])
    out[:, 1] = np.interp(s, cumlen, points[:, 1])
    return out


def _np_min_point_distance(points: np.ndarray, query: np.ndarray) -> float:
    return float(np.sqrt(np.min(np.sum((points - query) ** 2, axis=1))))


# --- numba builds -------------------------------------------------------------

_USE_NUMBA = False
if _env_wants_numba():
    try:
        from numba import njit

        @njit(cache=True)
        def _nb_cumulative_arclength(points):
            n = points.shape[0]
            out = np.empty(n, dtype=np.float64)
            out[0] = 0.0
            acc = 0.0
            for i in range(1, n):
                dx = points[i, 0] - points[i - 1, 0]
                dy = points[i, 1] - points[i - 1, 1]
                acc += np.sqrt(dx * dx + dy * dy)
                out[i] = acc
            return out

        @njit(cache=True)
        def _nb_nearest_waypoint(points, query):
            best = 0
            best_d2 = 1e300
            for i in range(points.shape[0]):
                dx = points[i, 0] - query[0]
                dy = points[i, 1] - query[1]
                d2 = dx * dx + dy * dy
                if d2 < best_d2:
                    best_d2 = d2
                    best = i
            return best

        @njit(cache=True)
        def _nb_truncation_end(cumlen, start, distance):
            base = cumlen[start]
            for p in range(start, cumlen.shape[0]):
                if cumlen[p] - base >= distance:
                    return p
            return cumlen.shape[0] - 1

        @njit(cache=True)
        def _nb_resample_linear(points, cumlen, n):
            total = cumlen[-1]
            out = np.empty((n, 2), dtype=np.float64)
            j = 0
            for i in range(n):
                s = total * i / (n - 1) if n > 1 else 0.0
                while j < cumlen.shape[0] - 2 and cumlen[j + 1] < s:
                    j += 1
                span = cumlen[j + 1] - cumlen[j]
                w = 0.0 if span <= 0.0 else (s - cumlen[j]) / span
                out[i, 0] = points[j, 0] + w * (points[j + 1, 0] - points[j, 0])
                out[i, 1] = points[j, 1] + w * (points[j + 1, 1] - points[j, 1])
            return out

        @njit(cache=True)
        def _nb_min_point_distance(points, query):
            best = 1e300
            for i in range(points.shape[0]):
                dx = points[i, 0] - query[0]
                dy = points[i, 1] - query[1]
                d2 = dx * dx + dy * dy
                if d2 < best:
                    best = d2
            return np.sqrt(best)

        _USE_NUMBA = True
    except ImportError:  # pragma: no cover - numba always present in CI image
        _USE_NUMBA = False


def using_numba() -> bool:
    """True when the numba builds are active."""
    return _USE_NUMBA


def cumulative_arclength(points: np.ndarray) -> np.ndarray:
    """Prefix sums of inter-waypoint L2 distances, starting at 0."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if _USE_NUMBA:
        return _nb_cumulative_arclength(pts)
    return _np_cumulative_arclength(pts)


def nearest_waypoint(points: np.ndarray, query: np.ndarray) -> int:
    """Index of the waypoint closest to *query* (first on ties)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    q = np.ascontiguousarray(query, dtype=np.float64)
    if _USE_NUMBA:
        return int(_nb_nearest_waypoint(pts, q))
    return _np_nearest_waypoint(pts, q)


def truncation_end(cumlen: np.ndarray, start: int, distance: float) -> int:
    """First index at/after *start* whose accumulated length reaches *distance*.

    Falls back to the last index when the polyline ends first.
    """
    cl = np.ascontiguousarray(cumlen, dtype=np.float64)
    if _USE_NUMBA:
        return int(_nb_truncation_end(cl, start, distance))
    return _np_truncation_end(cl, start, distance)


def resample_linear(points: np.ndarray, cumlen: np.ndarray, n: int) -> np.ndarray:
    """n points spaced uniformly in arc length by piecewise-linear interpolation."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cl = np.ascontiguousarray(cumlen, dtype=np.float64)
    if _USE_NUMBA:
        return _nb_resample_linear(pts, cl, n)
    return _np_resample_linear(pts, cl, n)


def min_point_distance(points: np.ndarray, query: np.ndarray) -> float:
    """Distance from *query* to the nearest waypoint of a polyline."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    q = np.ascontiguousarray(query, dtype=np.float64)
    if _USE_NUMBA:
        return float(_nb_min_point_distance(pts, q))
    return _np_min_point_distance(pts, q)
