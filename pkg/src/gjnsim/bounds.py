"""Suprema of negative-drift random walks: Monte Carlo, Lundberg and block bounds.

Every walk here has the form

    M_i = a * taubar_i + Phibar(i) - d * (i - lag),    i = 1, 2, ...

where ``taubar_i = tau_i - E tau_i`` for a renewal sequence with gaps from
``dist`` (first epoch from ``first``), ``Phibar(i) = Phi(i) - p i`` is an
optional centred Bernoulli(p) count, and ``d > 0``. The tail of interest is
``P(sup_i M_i >= u + offset)``.

``M_i = W_1 + X_2 + ... + X_i`` with ``W_1`` the (possibly delayed) first term
and ``X_j`` i.i.d., so Lundberg's inequality applies conditionally on ``W_1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .model import DistributionSpec, DriftReport, NetworkSpec, solve_traffic
from .primitives import (ROLE_WALK, DelayMode, equilibrium_delay_sample, make_rng,
                         mean_first_epoch, stream_seed)

ROW_BLOCK = 1024
COL_BLOCK = 4096
MIN_COLS = 64
LEMMA_KINDS = ("arrival", "routing", "service")


class CapabilityError(ValueError):
    """The requested computation needs a moment the distribution lacks."""


class NumericalError(ArithmeticError):
    pass


class SupremumError(ValueError):
    pass


@dataclass(frozen=True)
class SupWalkSpec:
    """One supremum problem; see the module docstring for the walk.

    ``kind`` is descriptive: ``scaled_interarrival`` (coefficient on the
    centred arrival epochs), ``routing_service`` (centred routing count plus a
    coefficient on the centred service epochs) or ``scaled_service``.
    """

    kind: str
    dist: DistributionSpec
    coef: float
    drift: float
    offset: float = 0.0
    first: DelayMode = "equilibrium"
    route_prob: float | None = None
    lag: int = 1
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("scaled_interarrival", "routing_service", "scaled_service"):
            raise ValueError(f"unknown walk kind {self.kind!r}")
        if self.route_prob is not None and not 0.0 <= self.route_prob <= 1.0:
            raise ValueError("route_prob must lie in [0, 1]")

    def replace(self, **kw) -> "SupWalkSpec":
        return replace(self, **kw)

    @cached_property
    def first_mean(self) -> float:
        """E tau_1 for the configured first-epoch law."""
        return mean_first_epoch(self.dist, self.first)

    @property
    def heavy_right_tail(self) -> bool:
        return self.coef > 0 and not self.dist.capabilities.has_exp_moment

    @property
    def theta_max(self) -> float:
        """Boundary of finiteness of E exp(theta X)."""
        if self.coef > 0:
            return self.dist.mgf_upper() / self.coef
        return math.inf

    def _bern(self, theta: float) -> float:
        p = self.route_prob
        if not p:
            return 0.0
        return math.log1p(p * math.expm1(theta)) - theta * p

    def increment_log_mgf(self, theta: float) -> float:
        """log E exp(theta X) for a generic centred increment X (no drift)."""
        s = self.coef * theta
        return self.dist.log_mgf(s) - s * self.dist.mean + self._bern(theta)

    def first_log_mgf(self, theta: float) -> float:
        """log E exp(theta Z_1), Z_1 = a taubar_1 + Phibar(1)."""
        s = self.coef * theta
        if self.first == "ordinary":
            lm = self.dist.log_mgf(s) - s * self.dist.mean
        elif self.first == "equilibrium":
            lm = self.dist.equilibrium_log_mgf(s) - s * self.first_mean
        else:
            lm = 0.0
        return lm + self._bern(theta)

    def increment_variance(self) -> float | None:
        v = self.dist.variance
        if v is None:
            return None
        p = self.route_prob or 0.0
        return self.coef**2 * v + p * (1.0 - p)

    def first_positive_part_bound(self) -> float:
        """Upper bound on E (Z_1)^+ used by the Markov step."""
        m = abs(self.coef) * self.first_mean
        if self.route_prob:
            m += 1.0 - self.route_prob
        return m

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dist": self.dist.to_dict(), "coef": self.coef,
                "drift": self.drift, "offset": self.offset, "first": self.first,
                "route_prob": self.route_prob, "lag": self.lag, "label": self.label}


def _require_drift(spec: SupWalkSpec):
    if not spec.drift > 0:
        raise SupremumError(f"drift d = {spec.drift:g} <= 0: supremum may be infinite")


# -- Lundberg exponent -------------------------------------------------------

def cramer_root(log_mgf: Callable[[float], float], theta_max: float = math.inf,
                tol: float = 1e-12) -> float | None:
    """Positive root of ``log_mgf(theta) = 0`` for a convex function vanishing at 0.

    The bracket is found by walking towards ``theta_max`` (or doubling when it
    is infinite); the root is then refined by bisection. ``None`` when the
    function stays negative on the whole domain.
    """
    def f(t):
        try:
            v = log_mgf(t)
        except (OverflowError, ValueError):
            return math.inf
        return v if not math.isnan(v) else math.inf

    hi = None
    if math.isfinite(theta_max):
        for k in range(1, 80):
            t = theta_max * (1.0 - 2.0**-k)
            if f(t) > 0:
                hi = t
                break
    else:
        t = 1e-3
        while t < 1e5:
            if f(t) > 0:
                hi = t
                break
            t *= 2.0
    if hi is None:
        return None
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def lundberg_exponent(spec) -> float | None:
    """theta* > 0 with E exp(theta* (X - d)) = 1, or ``None`` if there is none.

    ``spec`` is a :class:`SupWalkSpec` or a ``(log_mgf, drift)`` pair for a
    custom increment law. Raises :class:`CapabilityError` when the increment
    has a heavy right tail (no exponential moment), since no root exists and
    only the second-moment machinery applies.
    """
    if isinstance(spec, tuple):
        lm, d = spec
        return cramer_root(lambda t: lm(t) - t * d)
    _require_drift(spec)
    if spec.heavy_right_tail:
        raise CapabilityError(f"{spec.dist!r} scaled by {spec.coef:g} has no exponential moment; "
                              "use second_moment_block_bound")
    d = spec.drift
    return cramer_root(lambda t: spec.increment_log_mgf(t) - t * d, spec.theta_max)


def lundberg_bound(spec: SupWalkSpec, u, theta: float | None = None):
    """E exp(theta* W_1) exp(-theta* (u + offset)), capped at 1; nan if no exponent."""
    u = np.asarray(u, dtype=float)
    if theta is None:
        theta = lundberg_exponent(spec)
    if theta is None:
        return np.full(u.shape, np.nan) if u.ndim else math.nan
    lw = spec.first_log_mgf(theta) - theta * spec.drift * (1 - spec.lag)
    out = np.minimum(np.exp(lw - theta * (u + spec.offset)), 1.0)
    return out if out.ndim else float(out)


def truncation_residual(spec: SupWalkSpec, x: float, I: int, theta_star: float) -> float:
    """Bound on P(sup_{i > I} M_i >= x) using exponents strictly below theta*."""
    best = math.inf
    d = spec.drift
    for frac in (0.2, 0.35, 0.5, 0.65, 0.8, 0.9):
        th = frac * theta_star
        lx = spec.increment_log_mgf(th) - th * d
        if not lx < 0:
            continue
        lw = spec.first_log_mgf(th) - th * d * (1 - spec.lag)
        val = lw + (I - 1) * lx - th * x + lx - math.log(-math.expm1(lx))
        best = min(best, val)
    return math.exp(best) if best < 700 else math.inf


# -- Monte Carlo ---------------------------------------------------------------

def _col_edges(upto: int) -> list[int]:
    """Chunk boundaries 0, 64, 128, ..., 4096, 8192, 12288, ... up to ``upto``."""
    edges = [0]
    e = MIN_COLS
    while edges[-1] < upto:
        edges.append(e)
        e = e * 2 if e < COL_BLOCK else e + COL_BLOCK
    return edges


class _WalkBlock:
    """Running sum and maximum for one block of independent walk replicates."""

    def __init__(self, spec: SupWalkSpec, rows: int, seed: int, block: int, drift: float,
                 first_mean: float):
        self.spec = spec
        self.rows = rows
        self.drift = drift
        self.first_mean = first_mean
        self._gaps = make_rng(stream_seed(seed, block, 0, ROLE_WALK, 0))
        self._route = make_rng(stream_seed(seed, block, 0, ROLE_WALK, 1))
        self._first = make_rng(stream_seed(seed, block, 0, ROLE_WALK, 2))
        self.cols = 0
        self.total = np.zeros(rows)
        self.best = np.full(rows, -np.inf)
        self._pending = None

    def _first_terms(self) -> np.ndarray:
        sp = self.spec
        if sp.first == "ordinary":
            return sp.dist.sample(self._first, self.rows)
        if sp.first == "equilibrium":
            return equilibrium_delay_sample(sp.dist, self._first, self.rows)
        return np.full(self.rows, float(sp.first))

    def _chunk(self, lo: int, hi: int) -> np.ndarray:
        sp = self.spec
        w = hi - lo
        x = sp.coef * (sp.dist.sample(self._gaps, (self.rows, w)) - sp.dist.mean)
        route = None
        if sp.route_prob:
            route = (self._route.random((self.rows, w)) < sp.route_prob) - sp.route_prob
            x += route
        x -= self.drift
        if lo == 0:
            # first step: delayed epoch, no drift when lag = 1
            z1 = sp.coef * (self._first_terms() - self.first_mean)
            if route is not None:
                z1 = z1 + route[:, 0]
            x[:, 0] = z1 - self.drift * (1 - sp.lag)
        return x

    def advance(self, I: int) -> np.ndarray:
        """Extend every walk to I steps; return max_{i <= I} M_i per replicate."""
        if I <= self.cols:
            if I != self.cols:
                raise ValueError("walks can only be extended")
            return self.best
        for lo, hi in zip(_col_edges(I)[:-1], _col_edges(I)[1:]):
            if hi <= self.cols:
                continue
            if self._pending is not None and self._pending[0] == lo:
                cs = self._pending[1]
                self._pending = None
            else:
                # cumulate from the chunk edge so rounding never depends on I
                cs = self.total[:, None] + np.cumsum(self._chunk(lo, hi), axis=1)
            start = max(self.cols, lo)
            stop = min(I, hi)
            self.best = np.maximum(self.best, cs[:, start - lo:stop - lo].max(axis=1))
            self.total = cs[:, stop - lo - 1]
            self.cols = stop
            if stop < hi:
                self._pending = (lo, cs)
        return self.best


def wilson_interval(hits: np.ndarray, n: int, level: float = 0.95):
    """Wilson score interval for binomial proportions (vectorized over ``hits``)."""
    hits = np.atleast_1d(np.asarray(hits, dtype=np.int64))
    lo = np.empty(hits.shape)
    hi = np.empty(hits.shape)
    for i, h in enumerate(hits):
        ci = stats.binomtest(int(h), int(n)).proportion_ci(confidence_level=level, method="wilson")
        lo[i], hi[i] = ci.low, ci.high
    return lo, hi


@dataclass
class MCResult:
    """Monte Carlo estimate of P(max_{i <= i_max} M_i >= u + offset) on a u grid."""

    u: np.ndarray
    p: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    replications: int
    i_max: int
    truncation_bound: float
    method: str
    stabilized: bool = True
    history: dict = field(default_factory=dict)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_high - self.ci_low)


def _tail_counts(best: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = np.sort(best)
    return best.size - np.searchsorted(s, x, side="left")


class WalkSampler:
    """Independent replicates of one walk, extendable in length without redraws.

    Rows are split into fixed blocks of ``ROW_BLOCK`` with their own streams,
    so replicate r always sees the same increments whatever the walk length.
    """

    def __init__(self, spec: SupWalkSpec, replications: int, seed: int = 0,
                 drift: float | None = None):
        self.spec = spec
        self.R = int(replications)
        d = spec.drift if drift is None else drift
        fm = spec.first_mean if spec.first in ("ordinary", "equilibrium") else float(spec.first)
        self.blocks = []
        for b, start in enumerate(range(0, self.R, ROW_BLOCK)):
            rows = min(ROW_BLOCK, self.R - start)
            self.blocks.append(_WalkBlock(spec, rows, seed, b, d, fm))

    def max_upto(self, I: int) -> np.ndarray:
        return np.concatenate([blk.advance(I) for blk in self.blocks])

    def value_at(self, I: int) -> np.ndarray:
        """M_I (the walk value itself) after extending to I steps."""
        self.max_upto(I)
        return np.concatenate([blk.total for blk in self.blocks])


def _certified_length(spec: SupWalkSpec, x_min: float, R: int, i_cap: int):
    """Smallest power-of-two length whose residual bound is below 1 / (100 R)."""
    try:
        th = lundberg_exponent(spec)
    except CapabilityError:
        return None, math.nan
    if th is None or not math.isfinite(x_min):
        return None, math.nan
    target = 1.0 / (100.0 * R)
    I = MIN_COLS
    while I <= i_cap:
        r = truncation_residual(spec, x_min, I, th)
        if r <= target:
            return I, r
        I *= 2
    return None, math.nan


def supwalk_tail_mc(spec: SupWalkSpec, u, replications: int = 10_000, seed: int = 0,
                    i_max: int | None = None, i_cap: int = 2**20,
                    min_length: int = 256) -> MCResult:
    """Estimate P(sup_i M_i >= u + offset) by simulating truncated walks.

    The truncation level is certified by a Lundberg-type residual bound
    (residual < 1 / (100 R), i.e. a hundredth of the smallest resolvable
    probability) when an exponent exists; otherwise the length is doubled,
    reusing the same increments, until every estimate moves by at most half a
    standard error. All u values share the same replicates.
    """
    _require_drift(spec)
    if replications < 1:
        raise ValueError("replications must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = u + spec.offset
    R = int(replications)
    sampler = WalkSampler(spec, R, seed)
    history = {}
    stabilized = True
    if i_max is not None:
        best = sampler.max_upto(int(i_max))
        I, method, resid = int(i_max), "fixed", math.nan
    else:
        I, resid = _certified_length(spec, float(x.min()), R, i_cap)
        if I is not None:
            best = sampler.max_upto(I)
            method = "lundberg"
        else:
            method = "doubling"
            I = MIN_COLS
            prev = _tail_counts(sampler.max_upto(I), x) / R
            history[I] = prev
            while True:
                I2 = 2 * I
                best = sampler.max_upto(I2)
                cur = _tail_counts(best, x) / R
                history[I2] = cur
                se = np.sqrt(cur * (1 - cur) / R)
                I = I2
                if I >= min_length and np.all(np.abs(cur - prev) <= 0.5 * se):
                    break
                if I >= i_cap:
                    stabilized = False
                    break
                prev = cur
    hits = _tail_counts(best, x)
    p = hits / R
    lo, hi = wilson_interval(hits, R)
    return MCResult(u=u, p=p, se=np.sqrt(p * (1 - p) / R), ci_low=lo, ci_high=hi,
                    replications=R, i_max=I, truncation_bound=resid, method=method,
                    stabilized=stabilized, history=history)


# -- block events used by the proof machinery ------------------------------------

def _binom_result(hits, R):
    hits = np.atleast_1d(hits)
    p = hits / R
    lo, hi = wilson_interval(hits, R)
    return p, np.sqrt(p * (1 - p) / R), lo, hi


def head_event_mc(spec: SupWalkSpec, N: int, x: float, replications: int = 10_000, seed: int = 0):
    """P(max_{i <= N} Z_i >= x) for the driftless walk Z; returns (p, se, lo, hi)."""
    sam = WalkSampler(spec, replications, seed, drift=0.0)
    return _binom_result(int(np.sum(sam.max_upto(int(N)) >= x)), replications)


def block_event_mc(spec: SupWalkSpec, j: int, replications: int = 10_000, seed: int = 0,
                   delayed: bool = True):
    """P(max_{i <= 2^j} Z_i >= d 2^(j-1)); undelayed walks start from an ordinary gap."""
    sp = spec if delayed else spec.replace(first="ordinary")
    sam = WalkSampler(sp, replications, seed, drift=0.0)
    best = sam.max_upto(2**j)
    return _binom_result(int(np.sum(best >= spec.drift * 2.0 ** (j - 1))), replications)


def target_event_mc(spec: SupWalkSpec, x, replications: int = 10_000, seed: int = 0, **kw) -> MCResult:
    """P(sup_i (Z_i - d i) >= x), the event bounded by the block machinery."""
    return supwalk_tail_mc(spec.replace(lag=0, offset=0.0), x, replications, seed, **kw)


# -- Chernoff dyadic and second-moment block bounds --------------------------------

@dataclass
class DyadicBound:
    value: float
    head: float
    tail: float
    theta: float
    rho: float
    N: int
    j0: int
    threshold: float
    terms: list

    def __float__(self):
        return self.value


@dataclass
class SecondMomentBound:
    value: float
    head: float
    tail: float
    block_constant: float
    N: int
    j0: int
    threshold: float

    def __float__(self):
        return self.value


def _head_length(n_scale: float, u: float, head: int | None) -> int:
    if head is not None:
        return max(1, int(head))
    # nu < 1 leaves the head range empty; use the single index i = 1
    return max(1, int(math.floor(n_scale * u)))


def _choose_theta(spec: SupWalkSpec, divisor: float, theta: float | None) -> tuple[float, float]:
    d = spec.drift

    def ok(t):
        lam = spec.increment_log_mgf(t)
        return math.isfinite(lam) and lam - t * d / 4.0 < 0 and lam < t / divisor

    if theta is not None:
        lam = spec.increment_log_mgf(theta)
        return theta, lam - theta * d / 4.0
    ts = lundberg_exponent(spec)
    t = 0.5 * ts if ts is not None else 1.0
    if math.isfinite(spec.theta_max):
        t = min(t, 0.5 * spec.theta_max)
    for _ in range(61):
        if ok(t):
            return t, spec.increment_log_mgf(t) - t * d / 4.0
        t *= 0.5
    raise NumericalError("no Chernoff parameter with rho < 1 after 60 halvings")


def chernoff_dyadic_bound(spec: SupWalkSpec, u: float, n_scale: float = 1.0,
                          theta: float | None = None, divisor: float = 5.0,
                          threshold: float | None = None, head: int | None = None) -> DyadicBound:
    """Upper bound on P(sup_i (Z_i - d i) >= x), x = n u / divisor by default.

    Head: Chernoff/Doob for max over i <= N, N = floor(n u). Tail: for each
    dyadic block j = floor(log2 N) + m the block event splits into a delayed
    walk and an undelayed walk; Doob's inequality gives
    (E e^{theta Z_1} / E e^{theta X} + 1) rho^(N 2^m) with
    rho = E e^{theta X} e^{-theta d / 4}.
    """
    _require_drift(spec)
    if spec.heavy_right_tail:
        raise CapabilityError("Chernoff bound needs an exponential moment on the right tail")
    x = n_scale * u / divisor if threshold is None else float(threshold)
    N = _head_length(n_scale, u, head)
    j0 = int(math.floor(math.log2(N)))
    if x <= 0:
        return DyadicBound(1.0, 1.0, 0.0, math.nan, math.nan, N, j0, x, [])
    th, log_rho = _choose_theta(spec, divisor, theta)
    if not log_rho < 0:
        raise NumericalError(f"rho = {math.exp(log_rho):g} >= 1 for theta = {th:g}")
    lam = spec.increment_log_mgf(th)
    lam1 = spec.first_log_mgf(th)
    head_val = math.exp(min(lam1 + (N - 1) * lam - th * x, 700.0))
    c = math.exp(lam1 - lam) + 1.0
    tail = 0.0
    terms = []
    m = 0
    while True:
        term = c * math.exp(N * 2.0**m * log_rho)
        terms.append(term)
        tail += term
        if term < 1e-16 * tail or term == 0.0:
            break
        m += 1
    total = head_val + tail
    return DyadicBound(min(total, 1.0), head_val, tail, th, math.exp(log_rho), N, j0, x, terms)


def second_moment_block_bound(spec: SupWalkSpec, u: float, n_scale: float = 1.0,
                              divisor: float = 5.0, threshold: float | None = None,
                              head: int | None = None) -> SecondMomentBound:
    """Markov + Kolmogorov bound on P(sup_i (Z_i - d i) >= x), x = sqrt(n) u / divisor.

    Per dyadic block, with m1 >= E (Z_1)^+ and v = Var X,
    P(max_{i <= 2^j} Z_i >= d 2^(j-1)) <= 2^-j (4 m1 / d + 16 v / d^2).
    Each block contributes a delayed walk (m1 from the configured first
    epoch) and an undelayed one (m1 from an ordinary gap), and
    sum_{j >= j0} 2^-j = 2^(1 - j0).
    Head: split x in halves between Z_1 (Markov) and the rest (Kolmogorov).
    """
    _require_drift(spec)
    v = spec.increment_variance()
    if v is None:
        raise CapabilityError(f"{spec.dist!r} has no finite second moment")
    m1 = spec.first_positive_part_bound()
    if not math.isfinite(m1):
        raise CapabilityError("first epoch has infinite mean")
    m1_plain = spec.replace(first="ordinary").first_positive_part_bound()
    d = spec.drift
    x = math.sqrt(n_scale) * u / divisor if threshold is None else float(threshold)
    N = _head_length(n_scale, u, head)
    j0 = int(math.floor(math.log2(N)))
    if x <= 0:
        return SecondMomentBound(1.0, 1.0, 0.0, math.nan, N, j0, x)
    head_val = 2.0 * m1 / x + 4.0 * (N - 1) * v / x**2
    const = 4.0 * m1 / d + 16.0 * v / d**2
    const_plain = 4.0 * m1_plain / d + 16.0 * v / d**2
    tail = (const + const_plain) * 2.0 ** (1 - j0)
    total = head_val + tail
    return SecondMomentBound(min(total, 1.0), head_val, tail, const, N, j0, x)


def block_constant_bound(spec: SupWalkSpec, j: int) -> tuple[float, float]:
    """(Chernoff, second-moment) bounds on the delayed block event of size 2^j alone."""
    d = spec.drift
    v = spec.increment_variance()
    sm = math.nan
    if v is not None:
        sm = (4.0 * spec.first_positive_part_bound() / d + 16.0 * v / d**2) / 2.0**j
    ch = math.nan
    if not spec.heavy_right_tail:
        th, _ = _choose_theta(spec, 5.0, None)
        # Doob at the block itself: E e^{theta Z_{2^j}} e^{-theta d 2^(j-1)}
        lam, lam1 = spec.increment_log_mgf(th), spec.first_log_mgf(th)
        ch = math.exp(min(lam1 + (2**j - 1) * lam - th * d * 2.0 ** (j - 1), 700.0))
    return min(ch, 1.0), min(sm, 1.0)


def best_dyadic_bound(spec: SupWalkSpec, x: float, kind: str = "chernoff", max_log2: int = 20) -> float:
    """Minimum of a block bound over head lengths N = 1, 2, 4, ...; any N >= 1 is valid."""
    best = 1.0
    for e in range(max_log2 + 1):
        try:
            if kind == "chernoff":
                b = chernoff_dyadic_bound(spec, 0.0, threshold=x, head=2**e)
            else:
                b = second_moment_block_bound(spec, 0.0, threshold=x, head=2**e)
        except (CapabilityError, NumericalError):
            return math.nan
        best = min(best, b.value)
    return best


# -- the three lemma right-hand sides ----------------------------------------------

def lemma_walks(net: NetworkSpec, drift: DriftReport | None, k: int, l: int | None,
                which: str, first: DelayMode = "equilibrium") -> list[SupWalkSpec]:
    """Walk specs whose suprema bound the limiting tails of Y1, Y2_l, Y3_l at station k.

    Returns an empty list when the term vanishes (no exogenous arrivals at k).
    """
    if drift is None:
        drift = solve_traffic(net)
    if which not in LEMMA_KINDS:
        raise ValueError(f"which must be one of {LEMMA_KINDS}")
    nu = float(drift.nu[k])
    if not nu > 0:
        raise SupremumError(f"drift nu_{k} = {nu:g} <= 0: supremum may be infinite")
    K = net.K
    if which == "arrival":
        lam = float(drift.lam[k])
        if lam == 0:
            return []
        dist = net.arrival[k]
        a = lam + nu / 4.0
        w = SupWalkSpec("scaled_interarrival", dist, -a, nu / (4.0 * lam), 0.0, first,
                        label=f"Y1[k={k}]")
        return [w.replace(offset=-1.0 + a * w.first_mean)]
    if l is None:
        raise ValueError("source station l is required for routing and service")
    dist = net.service[l]
    mu = float(drift.mu[l])
    cK = nu / (4.0 * K)
    d = nu / (4.0 * K * mu)
    if which == "routing":
        w = SupWalkSpec("routing_service", dist, -cK, d, 0.0, first,
                        route_prob=float(net.P[l, k]), label=f"Y2[k={k},l={l}]")
        return [w.replace(offset=cK * w.first_mean)]
    b1 = SupWalkSpec("scaled_service", dist, -(mu + cK), d, 0.0, first, label=f"Y3-[k={k},l={l}]")
    b2 = SupWalkSpec("scaled_service", dist, mu - cK, d, 0.0, first, label=f"Y3+[k={k},l={l}]")
    return [b1.replace(offset=-1.0 + (mu + cK) * b1.first_mean),
            b2.replace(offset=-(mu - cK) * b2.first_mean)]


@dataclass
class LemmaEstimate:
    which: str
    k: int
    l: int | None
    u: np.ndarray
    p: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    parts: list


def lemma_rhs(net: NetworkSpec, k: int, which: str, u, l: int | None = None,
              drift: DriftReport | None = None, replications: int = 10_000, seed: int = 0,
              first: DelayMode = "equilibrium", **mc) -> LemmaEstimate:
    """Monte Carlo value of one lemma right-hand side; the service kind sums its two branches.

    For a sum, standard errors add in quadrature and the interval endpoints
    add (a conservative interval for the sum).
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    walks = lemma_walks(net, drift, k, l, which, first)
    if not walks:
        z = np.zeros(u.shape)
        return LemmaEstimate(which, k, l, u, z, z.copy(), z.copy(), z.copy(), [])
    parts = [supwalk_tail_mc(w, u, replications, seed + 7919 * i, **mc) for i, w in enumerate(walks)]
    p = sum(r.p for r in parts)
    se = np.sqrt(sum(r.se**2 for r in parts))
    lo = sum(r.ci_low for r in parts)
    hi = np.minimum(sum(r.ci_high for r in parts), len(parts))
    return LemmaEstimate(which, k, l, u, p, se, lo, hi, parts)


@dataclass
class BoundResult:
    """Monte Carlo estimate and the analytic bounds for one walk family on a u grid."""

    which: str
    u: np.ndarray
    mc: LemmaEstimate
    theta_star: list
    lundberg: np.ndarray
    dyadic: np.ndarray
    second_moment: np.ndarray
    diagnostics: dict

    def dominated(self, n_se: float = 3.0) -> dict:
        """Per bound, whether bound >= estimate - n_se * SE at every u (nan bounds skipped)."""
        out = {}
        floor = self.mc.p - n_se * self.mc.se
        for name in ("lundberg", "dyadic", "second_moment"):
            b = getattr(self, name)
            ok = np.isnan(b) | (b >= floor)
            out[name] = bool(np.all(ok))
        return out

    def rows(self):
        for i, u in enumerate(self.u):
            yield [self.which, u, self.mc.p[i], self.mc.ci_low[i], self.mc.ci_high[i],
                   self.lundberg[i], self.dyadic[i], self.second_moment[i]]


def _walk_bounds(w: SupWalkSpec, u: np.ndarray):
    try:
        th = lundberg_exponent(w)
    except CapabilityError:
        th = None
    lb = lundberg_bound(w, u, th) if th is not None else np.full(u.shape, np.nan)
    # sup_i M_i >= u + c  <=>  sup_i (Z_i - d i) >= u + c - d (1 - lag)
    xs = u + w.offset - w.drift * (1 - w.lag)
    dy = np.array([best_dyadic_bound(w, x, "chernoff") for x in xs])
    sm = np.array([best_dyadic_bound(w, x, "second") for x in xs])
    return th, lb, dy, sm


def lemma_bounds(net: NetworkSpec, k: int, which: str, u, l: int | None = None,
                 drift: DriftReport | None = None, replications: int = 10_000, seed: int = 0,
                 first: DelayMode = "equilibrium", **mc) -> BoundResult:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    est = lemma_rhs(net, k, which, u, l, drift, replications, seed, first, **mc)
    walks = lemma_walks(net, drift, k, l, which, first)
    lb = np.zeros(u.shape)
    dy = np.zeros(u.shape)
    sm = np.zeros(u.shape)
    ths = []
    for w in walks:
        th, a, b, c = _walk_bounds(w, u)
        ths.append(th)
        lb, dy, sm = lb + a, dy + b, sm + c
    lab = which if l is None else f"{which}[l={l}]"
    diag = {"i_max": [r.i_max for r in est.parts], "method": [r.method for r in est.parts],
            "truncation_bound": [r.truncation_bound for r in est.parts],
            "walks": [w.to_dict() for w in walks]}
    return BoundResult(lab, u, est, ths, lb, dy, sm, diag)


BOUND_COLUMNS = ["which", "u", "mc_estimate", "ci_low", "ci_high", "lundberg_bound",
                 "dyadic_bound", "second_moment_bound"]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_bounds_csv(results: Sequence[BoundResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for res in results:
            for row in res.rows():
                w.writerow([_fmt(v) for v in row])
