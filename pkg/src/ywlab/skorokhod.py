"""Skorokhod d0 distance between piecewise-constant cadlag paths.

``d0(x, y) = inf_lambda max(||lambda||_log, sup_t |x(t) - y(lambda(t))|)``
where ``||lambda||_log`` is the sup of ``|log slope|``.

For jump paths the decision problem "is d0 <= eps?" is a reachability
question in the unit square: the graph of ``lambda`` is a monotone curve
from (0, 0) to (T, T) whose slopes stay in ``[e^-eps, e^eps]`` and which only
crosses rectangles ``I_u x J_v`` (constancy intervals of x and y) where the
two values differ by at most ``eps``.  Reachable sets on each rectangle
edge are intervals, so the question is answered exactly by a sweep, and
d0 itself by bisection on ``eps``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = ["JumpPath", "TimeChange", "log_norm", "d0", "sup_distance", "feasible"]


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Right-continuous step path on [0, T] with finitely many jumps.

    ``values[i]`` is the value from ``times[i]`` on.  Jumps that do not
    change the value are dropped, so equal functions have equal
    representations.
    """

    initial: np.ndarray
    times: np.ndarray
    values: np.ndarray
    horizon: float = 1.0

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.initial, dtype=float))
        times = np.asarray(self.times, dtype=float).reshape(-1)
        vals = np.asarray(self.values, dtype=float).reshape(times.size, x0.size)
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if times[0] <= 0 or times[-1] > self.horizon:
                raise ValueError("jump times must lie in (0, T]")
        prev = np.vstack([x0[None, :], vals[:-1]]) if times.size else vals
        keep = np.any(vals != prev, axis=1)
        object.__setattr__(self, "initial", x0)
        object.__setattr__(self, "times", times[keep])
        object.__setattr__(self, "values", vals[keep])

    @property
    def dim(self) -> int:
        return self.initial.size

    @classmethod
    def constant(cls, value, horizon: float = 1.0) -> "JumpPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(v, np.empty(0), np.empty((0, v.size)), horizon)

    @classmethod
    def from_grid(cls, grid, values) -> "JumpPath":
        """Path equal to ``values[i]`` on ``[grid[i], grid[i+1])``."""
        grid = np.asarray(grid, dtype=float)
        vals = np.asarray(values, dtype=float).reshape(grid.size, -1)
        return cls(vals[0], grid[1:], vals[1:], float(grid[-1]))

    def levels(self) -> np.ndarray:
        """All values taken, in order: shape (n_jumps + 1, dim)."""
        return np.vstack([self.initial[None, :], self.values])

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self.levels()[idx]

    def equals(self, other: "JumpPath") -> bool:
        return (
            self.horizon == other.horizon
            and np.array_equal(self.initial, other.initial)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class TimeChange:
    """Piecewise-linear increasing homeomorphism of [0, T] through given knots."""

    s: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if s.shape != lam.shape or s.size < 2:
            raise ValueError("need matching knot arrays with at least two knots")
        if s[0] != 0 or lam[0] != 0 or s[-1] != lam[-1]:
            raise ValueError("time change must fix 0 and T")
        if np.any(np.diff(s) <= 0):
            raise ValueError("knot times must increase")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "lam", lam)

    @classmethod
    def identity(cls, T: float = 1.0) -> "TimeChange":
        return cls(np.array([0.0, T]), np.array([0.0, T]))

    @property
    def horizon(self) -> float:
        return float(self.s[-1])

    def slopes(self) -> np.ndarray:
        return np.diff(self.lam) / np.diff(self.s)

    def __call__(self, t):
        return np.interp(t, self.s, self.lam)

    def inverse(self) -> "TimeChange":
        return TimeChange(self.lam, self.s)

    def compose(self, inner: "TimeChange") -> "TimeChange":
        """``self ∘ inner``."""
        pts = np.union1d(inner.s, np.interp(self.s, inner.lam, inner.s))
        return TimeChange(pts, self(inner(pts)))


def log_norm(lam: TimeChange) -> float:
    """sup over segments of |log slope|; exact for piecewise-linear maps."""
    sl = lam.slopes()
    if np.any(sl <= 0):
        raise ValueError("time change must be strictly increasing")
    return float(np.max(np.abs(np.log(sl))))


def _levels(x: JumpPath) -> tuple[np.ndarray, np.ndarray]:
    """Breakpoints [0, jumps..., T] and the value on each piece."""
    edges = np.concatenate([[0.0], x.times, [x.horizon]])
    return edges, x.levels()


def sup_distance(x: JumpPath, y: JumpPath) -> float:
    """sup_t |x(t) - y(t)|, evaluated on the merged jump grid."""
    if x.horizon != y.horizon:
        raise ValueError("paths live on different horizons")
    events = np.union1d(np.union1d([0.0], x.times), y.times)
    diff = x(events) - y(events)
    return float(np.max(np.linalg.norm(diff, axis=1)))


def _merge(intervals, tol):
    intervals.sort()
    out = []
    for lo, hi in intervals:
        if out and lo <= out[-1][1] + tol:
            if hi > out[-1][1]:
                out[-1][1] = hi
        else:
            out.append([lo, hi])
    return out


def _value_gaps(x: JumpPath, y: JumpPath) -> np.ndarray:
    X, Y = x.levels(), y.levels()
    return np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)


def feasible(x: JumpPath, y: JumpPath, eps: float, gaps: np.ndarray | None = None) -> bool:
    """True iff some time change achieves ``max(||lam||_log, sup|x - y∘lam|) <= eps``."""
    A, _ = _levels(x)
    B, _ = _levels(y)
    gaps = _value_gaps(x, y) if gaps is None else gaps
    p, q = gaps.shape[0] - 1, gaps.shape[1] - 1
    T = x.horizon
    tol = 1e-14 * max(T, 1.0)
    s_lo, s_hi = math.exp(-eps), math.exp(eps)

    # entries[(u, v)] = (left-edge height intervals, bottom-edge time intervals)
    entries: dict[tuple[int, int], tuple[list, list]] = {(0, 0): ([[0.0, 0.0]], [])}
    heap = [(0, 0)]
    seen = {(0, 0)}

    def push(key, side, lo, hi):
        if key not in entries:
            entries[key] = ([], [])
        entries[key][side].append([lo, hi])
        if key not in seen:
            seen.add(key)
            heapq.heappush(heap, key)

    while heap:
        u, v = heapq.heappop(heap)
        left, bottom = entries.pop((u, v))
        if gaps[u, v] > eps:
            continue
        a0, a1, b0, b1 = A[u], A[u + 1], B[v], B[v + 1]
        right_exits, top_exits = [], []
        for lo, hi in _merge(left, tol):
            right_exits.append((lo + (a1 - a0) * s_lo, hi + (a1 - a0) * s_hi))
            top_exits.append((a0 + (b1 - hi) / s_hi, a0 + (b1 - lo) / s_lo))
        for lo, hi in _merge(bottom, tol):
            right_exits.append((b0 + (a1 - hi) * s_lo, b0 + (a1 - lo) * s_hi))
            top_exits.append((lo + (b1 - b0) / s_hi, hi + (b1 - b0) / s_lo))
        for lo, hi in right_exits:
            lo, hi = max(lo, b0), min(hi, b1)
            if lo > hi + tol:
                continue
            if u == p:
                if v == q and lo <= T + tol and hi >= T - tol:
                    return True
                continue
            push((u + 1, v), 0, lo, min(hi, b1))
            if hi >= b1 - tol and v < q:
                push((u + 1, v + 1), 0, b1, b1)
        if v == q:
            continue
        for lo, hi in top_exits:
            lo, hi = max(lo, a0), min(hi, a1)
            if lo > hi + tol:
                continue
            push((u, v + 1), 1, lo, hi)
    return False


def d0(x: JumpPath, y: JumpPath, rel_tol: float = 1e-13) -> float:
    """Skorokhod distance with log-Lipschitz time changes (max form)."""
    upper = sup_distance(x, y)
    if upper == 0.0:
        return 0.0
    gaps = _value_gaps(x, y)
    # the endpoints are never moved by a time change
    lo, hi = max(gaps[0, 0], gaps[-1, -1]), upper
    if lo >= hi:
        return hi
    lo = float(np.nextafter(lo, 0.0))
    for _ in range(200):
        if hi - lo <= rel_tol * max(hi, 1e-300):
            break
        mid = 0.5 * (lo + hi)
        if feasible(x, y, mid, gaps):
            hi = mid
        else:
            lo = mid
    return float(hi)
