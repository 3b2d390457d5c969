"""Right-continuous piecewise-linear paths with jumps.

A :class:`Path` covers counting processes (zero slopes), busy-time processes
(continuous, slopes in {0, 1}) and centred processes (jumps minus a linear
drift). Between consecutive knots the path is affine, so every supremum or
infimum over an interval is attained at a knot value, a left limit at a knot,
or an interval endpoint. All extremal queries below rely on that.
"""
from __future__ import annotations

import numpy as np


class Path:
    """Value ``values[i] + slopes[i] * (t - times[i])`` on ``[times[i], times[i+1])``.

    The last segment extends to ``end`` (defaults to the last knot).
    """

    __slots__ = ("times", "values", "slopes", "end")

    def __init__(self, times, values, slopes=None, end=None):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if slopes is None:
            slopes = np.zeros_like(self.values)
        self.slopes = np.broadcast_to(np.asarray(slopes, dtype=float), self.values.shape).copy()
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("path knot times must be strictly increasing")
        if end is None:
            end = self.times[-1] if self.times.size else 0.0
        self.end = float(end)
        if self.times.size and self.end < self.times[-1]:
            raise ValueError("path end precedes its last knot")

    @classmethod
    def from_events(cls, times, values, start=0.0, initial=0.0, end=None) -> "Path":
        """Step path from (possibly repeated) event times; the last value at a time wins."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        t = np.concatenate([[start], times])
        v = np.concatenate([[initial], values])
        keep = np.append(t[1:] != t[:-1], True)
        return cls(t[keep], v[keep], end=end if end is not None else t[-1])

    def __len__(self) -> int:
        return self.times.size

    def __repr__(self) -> str:
        return f"Path(n={len(self)}, start={self.times[0] if len(self) else None}, end={self.end})"

    @property
    def is_step(self) -> bool:
        return not np.any(self.slopes)

    def _seg(self, t):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            raise ValueError("empty path")
        if np.any(t < self.times[0]) or np.any(t > self.end):
            raise ValueError(f"time outside path domain [{self.times[0]}, {self.end}]")
        return t, np.searchsorted(self.times, t, side="right") - 1

    def __call__(self, t):
        t, i = self._seg(t)
        out = self.values[i] + self.slopes[i] * (t - self.times[i])
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """Value approached from the left at ``t`` (equals the value at the start)."""
        t, i = self._seg(t)
        i = np.where((t == self.times[np.maximum(i, 0)]) & (i > 0), i - 1, i)
        out = self.values[i] + self.slopes[i] * (t - self.times[i])
        return out if out.ndim else float(out)

    def left_limits(self) -> np.ndarray:
        """Left limit at every knot; the first entry is the initial value."""
        out = self.values.copy()
        if self.times.size > 1:
            out[1:] = self.values[:-1] + self.slopes[:-1] * np.diff(self.times)
        return out

    @property
    def end_value(self) -> float:
        return float(self.values[-1] + self.slopes[-1] * (self.end - self.times[-1]))

    def running_inf(self) -> np.ndarray:
        """``inf_{times[0] <= s <= times[i]} x(s)`` for every knot i."""
        return np.minimum.accumulate(np.minimum(self.values, self.left_limits()))

    def running_sup(self) -> np.ndarray:
        return np.maximum.accumulate(np.maximum(self.values, self.left_limits()))

    def inf_until(self, t) -> float:
        """``inf_{s <= t} x(s)``, exact for affine segments."""
        _, i = self._seg(t)
        base = self.running_inf()[int(i)]
        return float(min(base, self(t)))

    def sup_until(self, t) -> float:
        _, i = self._seg(t)
        base = self.running_sup()[int(i)]
        return float(max(base, self(t)))

    def sup_between(self, a, b) -> float:
        inner = (self.times > a) & (self.times <= b)
        cands = [self(a), self(b)]
        cands.extend(self.values[inner])
        cands.extend(self.left_limits()[inner])
        return float(max(cands))

    def inf_between(self, a, b) -> float:
        return -(-self).sup_between(a, b)

    # -- arithmetic on a shared grid -------------------------------------------
    def _check_grid(self, other: "Path"):
        if self.times.shape != other.times.shape or not np.array_equal(self.times, other.times):
            raise ValueError("paths must share knot times; use on_grid first")

    def __add__(self, other):
        if isinstance(other, Path):
            self._check_grid(other)
            return Path(self.times, self.values + other.values, self.slopes + other.slopes, self.end)
        return Path(self.times, self.values + other, self.slopes, self.end)

    __radd__ = __add__

    def __neg__(self):
        return Path(self.times, -self.values, -self.slopes, self.end)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, c: float):
        return Path(self.times, self.values * c, self.slopes * c, self.end)

    __rmul__ = __mul__

    def minus_drift(self, c: float) -> "Path":
        """``x(t) - c t``."""
        return Path(self.times, self.values - c * self.times, self.slopes - c, self.end)

    def on_grid(self, grid) -> "Path":
        """Re-express on a finer grid that contains every knot of ``self``."""
        grid = np.asarray(grid, dtype=float)
        _, i = self._seg(grid)
        return Path(grid, self(grid), self.slopes[i], max(self.end, grid[-1]))

    def restrict(self, t: float) -> "Path":
        """The path on ``[times[0], t]``."""
        keep = self.times <= t
        return Path(self.times[keep], self.values[keep], self.slopes[keep], t)
