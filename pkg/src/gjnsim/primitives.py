"""Seeded renewal streams, Bernoulli routing sequences and centring.

Every random stream is keyed by ``(master_seed, replicate, station, role)``
through :class:`numpy.random.SeedSequence` spawn keys, so streams for
different stations or roles are independent by construction and a replicate
can be regenerated in isolation.
"""
from __future__ import annotations

import math
from typing import Union

import numpy as np

from .model import DistributionSpec, warn_heavy_equilibrium
from .paths import Path

ROLE_ARRIVAL = 1
ROLE_SERVICE = 2
ROLE_ROUTING = 3
ROLE_DELAY = 4
ROLE_WALK = 5

DelayMode = Union[str, float]


def stream_seed(master_seed: int, replicate: int = 0, station: int = 0, role: int = 0,
                *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed) & (2**64 - 1),
                                  spawn_key=(int(replicate), int(station), int(role), *map(int, extra)))


def make_rng(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed) & (2**64 - 1))
    # PCG64: period 2^128, 2^127 distinct streams
    return np.random.Generator(np.random.PCG64(seed))


class _Buffered:
    """Sequential draws served from fixed-size blocks.

    numpy generators produce the same sequence regardless of how draws are
    chunked, so ``take`` results do not depend on ``block``.
    """

    def __init__(self, rng: np.random.Generator, block: int, record: bool):
        self._rng = rng
        self._block = int(block)
        self._buf = np.empty(0)
        self._pos = 0
        self.record = record
        self._history: list[np.ndarray] = []
        self.consumed = 0

    def _draw(self, rng, n):  # pragma: no cover - abstract
        raise NotImplementedError

    def take(self, n: int) -> np.ndarray:
        parts = []
        need = n
        while need > 0:
            avail = self._buf.size - self._pos
            if avail == 0:
                self._buf = self._draw(self._rng, self._block)
                self._pos = 0
                avail = self._block
            m = min(avail, need)
            parts.append(self._buf[self._pos:self._pos + m])
            self._pos += m
            need -= m
        out = np.concatenate(parts) if parts else self._draw_empty()
        if self.record:
            self._history.append(out.copy())
        self.consumed += n
        return out

    def _draw_empty(self):
        return np.empty(0)

    def history(self) -> np.ndarray:
        """All values handed out so far (record mode only)."""
        if not self.record:
            raise RuntimeError("stream was created without record=True")
        return np.concatenate(self._history) if self._history else self._draw_empty()


class RenewalStream(_Buffered):
    """Epochs tau_1 < tau_2 < ... of a renewal process.

    ``delay_mode`` is ``"ordinary"`` (tau_1 is a regular gap),
    ``"equilibrium"`` (tau_1 from the integrated-tail law, giving stationary
    increments) or a float (fixed first epoch).
    """

    def __init__(self, dist: DistributionSpec, delay_mode: DelayMode = "ordinary",
                 seed=0, block: int = 256, record: bool = False):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
        gap_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (0,))
        super().__init__(make_rng(gap_ss), block, record)
        self.dist = dist
        self.delay_mode = delay_mode
        self._delay_ss = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (1,))
        self._t = None

    def _draw(self, rng, n):
        return self.dist.sample(rng, n)

    def first_epoch(self) -> float:
        mode = self.delay_mode
        if mode == "ordinary":
            return float(self.take(1)[0])
        if mode == "equilibrium":
            return float(equilibrium_delay_sample(self.dist, self._delay_ss, 1)[0])
        d = float(mode)
        if d < 0:
            raise ValueError("fixed delay must be nonnegative")
        return d

    def next_epoch(self) -> float:
        if self._t is None:
            self._t = self.first_epoch()
        else:
            self._t += float(self.take(1)[0])
        return self._t


class RoutingSequence(_Buffered):
    """I.i.d. routing outcomes zeta in {0, 1, ..., K}; 0 means exit, l >= 1 station l."""

    def __init__(self, probs, seed=0, block: int = 256, record: bool = True):
        self.probs = np.asarray(probs, dtype=float)
        self._cum = np.cumsum(self.probs)
        self.K = self.probs.size
        super().__init__(make_rng(seed), block, record)

    def _draw(self, rng, n):
        idx = np.searchsorted(self._cum, rng.random(n), side="right")
        return np.where(idx < self.K, idx + 1, 0).astype(np.int64)

    def _draw_empty(self):
        return np.empty(0, dtype=np.int64)


def equilibrium_delay_sample(dist: DistributionSpec, seed, size: int | None = None):
    """Draw from the integrated-tail law with density (1 - F(x)) / E X.

    Inverse transform: closed forms for exponential (the law itself),
    deterministic (uniform on [0, mean]), uniform and pareto; monotone
    bisection for gamma and lognormal.
    """
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    n = 1 if size is None else size
    warn_heavy_equilibrium(dist)
    if dist.family == "exponential":
        out = dist.sample(rng, n)
    else:
        out = dist.equilibrium_ppf(rng.random(n))
    out = np.asarray(out, dtype=float)
    return float(out[0]) if size is None else out


def route(sequence: RoutingSequence, m: int) -> np.ndarray:
    """Phi_k(m): counts of outcomes among the first ``m`` decisions, index 0 = exits."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    have = sequence.consumed
    if m > have:
        sequence.take(m - have)
    outcomes = sequence.history()[:m]
    return np.bincount(outcomes, minlength=sequence.K + 1)


def center(values, rate: float, times) -> Path:
    """``X(t) - rate * t`` for a counting path given by its values at event times.

    Between events the centred path decreases with slope ``-rate``; for a
    routing count indexed by m pass ``times = m`` and ``rate = p_lk``.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    return Path(times, values - rate * times, np.full(times.shape, -float(rate)))


def counting_path(epochs, horizon: float, start: float = 0.0) -> Path:
    """Step path N(t) = #{i : epoch_i <= t} on [start, horizon]."""
    epochs = np.asarray(epochs, dtype=float)
    epochs = epochs[epochs <= horizon]
    return Path.from_events(epochs, np.arange(1, epochs.size + 1), start=start, end=horizon)


def mean_first_epoch(dist: DistributionSpec, mode: DelayMode, mc_draws: int = 10**6,
                     seed: int = 0) -> float:
    """E tau_1 under a delay mode; Monte Carlo only when no closed form is finite."""
    if mode == "ordinary":
        return dist.mean
    if mode == "equilibrium":
        m = dist.equilibrium_mean
        if math.isfinite(m):
            return m
        return float(np.mean(equilibrium_delay_sample(dist, seed, mc_draws)))
    return float(mode)
