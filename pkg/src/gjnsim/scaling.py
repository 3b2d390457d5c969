"""Network sequences for the three scaling regimes and stationary tail estimates.

Targets, with Q_n a stationary queue of the n-th network:

* large deviations: P(Q_n >= n u)^(1/n)
* diffusion:        P(Q_n >= sqrt(n) u)
* moderate:         P(Q_n >= b_n sqrt(n) u)^(1/b_n^2)

A regime ``raw`` applies no scaling (threshold u, value p) and is used for
oracle checks against known stationary laws.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .bounds import wilson_interval
from .model import DriftReport, NetworkSpec, SpecError, solve_traffic, validate
from .simulator import stationary_states, time_average_occupancy

KINDS = ("large_deviation", "diffusion", "moderate", "raw")
_ALIASES = {"ld": "large_deviation", "large_deviation": "large_deviation",
            "diffusion": "diffusion", "normal": "diffusion",
            "moderate": "moderate", "md": "moderate", "raw": "raw"}
RESOLUTION_HITS = 10


def parse_bn(text: str) -> tuple[str, float]:
    """``"pow:g"`` -> b_n = n^g with 0 < g < 1/2; ``"logpow:g"`` -> b_n = (ln n)^g, g > 0."""
    try:
        form, g = text.split(":")
        g = float(g)
    except ValueError as e:
        raise SpecError([f"b_n must look like pow:GAMMA or logpow:GAMMA, got {text!r}"]) from e
    if form == "pow":
        if not 0 < g < 0.5:
            raise SpecError([f"pow exponent must lie in (0, 1/2), got {g}"])
    elif form == "logpow":
        if not g > 0:
            raise SpecError([f"logpow exponent must be positive, got {g}"])
    else:
        raise SpecError([f"unknown b_n form {form!r}"])
    return form, g


@dataclass(frozen=True)
class ScalingRegime:
    kind: str
    r: tuple | None = None
    bn: str | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise SpecError([f"unknown regime {self.kind!r}; expected one of {sorted(_ALIASES)}"])
        object.__setattr__(self, "kind", kind)
        if self.r is not None:
            object.__setattr__(self, "r", tuple(float(x) for x in np.atleast_1d(self.r)))
        if kind in ("diffusion", "moderate"):
            if self.r is None:
                raise SpecError([f"{kind} regime needs a drift vector r"])
            if any(x >= 0 for x in self.r):
                raise SpecError(["drift vector r must have negative entries"])
        if kind == "moderate":
            if self.bn is None:
                raise SpecError(["moderate regime needs b_n (pow:g or logpow:g)"])
            parse_bn(self.bn)

    def b(self, n: float) -> float:
        if self.kind != "moderate":
            return 1.0
        form, g = parse_bn(self.bn)
        return n**g if form == "pow" else math.log(n) ** g

    def scale(self, n: float) -> float:
        """s_n with thresholds s_n u."""
        if self.kind == "large_deviation":
            return float(n)
        if self.kind == "diffusion":
            return math.sqrt(n)
        if self.kind == "moderate":
            return self.b(n) * math.sqrt(n)
        return 1.0

    def threshold(self, n: float, u: float) -> int:
        """Integer queue level ceil(s_n u); rounding up keeps the estimate conservative."""
        return int(math.ceil(self.scale(n) * u - 1e-9))

    def exponent(self, n: float) -> float:
        if self.kind == "large_deviation":
            return 1.0 / n
        if self.kind == "moderate":
            return 1.0 / self.b(n) ** 2
        return 1.0

    def normalize(self, p, n: float):
        return np.power(p, self.exponent(n))

    def drift_scale(self, n: float) -> float:
        """Factor multiplying -r in nu_n."""
        if self.kind == "diffusion":
            return 1.0 / math.sqrt(n)
        if self.kind == "moderate":
            return self.b(n) / math.sqrt(n)
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r": None if self.r is None else list(self.r), "bn": self.bn}


def is_critical(spec: NetworkSpec, tol: float = 1e-9) -> bool:
    M = np.eye(spec.K) - spec.P.T
    lam = spec.lam
    return bool(np.allclose(M @ spec.mu, lam, rtol=tol, atol=tol * max(1.0, float(np.abs(lam).max()))))


def make_sequence(base: NetworkSpec, regime: ScalingRegime, n: float) -> NetworkSpec:
    """The n-th network of the regime.

    Diffusion: (I - P^T) mu_n = lambda - r / sqrt(n); moderate:
    (I - P^T) mu_n = lambda - r b_n / sqrt(n). Arrivals are kept; each service
    law is rescaled in time to the new mean 1 / mu_n. Large-deviation and raw
    regimes return the base network unchanged.
    """
    if regime.kind in ("large_deviation", "raw"):
        return base
    if not is_critical(base):
        raise SpecError(["base network is not critically loaded: (I - P^T) mu != lambda"])
    r = np.asarray(regime.r, dtype=float)
    if r.size != base.K:
        raise SpecError([f"drift vector r has {r.size} entries for {base.K} stations"])
    rhs = base.lam - r * regime.drift_scale(n)
    mu_n = np.linalg.solve(np.eye(base.K) - base.P.T, rhs)
    if np.any(mu_n <= 0):
        raise SpecError([f"scaled service rates not positive at n={n}: {mu_n.tolist()}"])
    service = tuple(s.with_mean(1.0 / m) for s, m in zip(base.service, mu_n))
    return base.replace(service=service)


def sequence_residual(base: NetworkSpec, regime: ScalingRegime, n: float) -> float:
    """max |(sqrt(n) / b_n) (lambda_n - (I - P^T) mu_n) - r|; zero up to rounding."""
    spec = make_sequence(base, regime, n)
    gap = spec.lam - (np.eye(spec.K) - spec.P.T) @ spec.mu
    return float(np.max(np.abs(gap / regime.drift_scale(n) - np.asarray(regime.r))))


def moderate_conditions(spec: NetworkSpec, regime: ScalingRegime) -> dict:
    """Which of the two moderate-deviation hypotheses the configuration satisfies.

    (a) 2+eps moments and sqrt(ln n) / b_n -> oo, which for the supported forms
    means b_n = (ln n)^g with g < 1/2. (b) stretched exponential moments and
    n^(beta/2) / b_n^(2 - beta) -> oo; with beta = 1 this holds for every
    supported b_n, so (b) reduces to the moment flag.
    """
    dists = [d for d in (*spec.arrival, *spec.service) if d is not None]
    two_eps = all(d.capabilities.has_2plus_eps_moment for d in dists)
    stretched = all(d.capabilities.has_stretched_exp_moment for d in dists)
    rate_a = False
    if regime.kind == "moderate":
        form, g = parse_bn(regime.bn)
        rate_a = form == "logpow" and g < 0.5
    return {"condition_a": bool(two_eps and rate_a), "condition_b": bool(stretched),
            "has_2plus_eps": two_eps, "has_stretched_exp": stretched}


def default_warmup(drift: DriftReport, mult: float = 20.0) -> float:
    """T_w = C / min nu_k; if some nu_k <= 0, the subcritical slack min(mu - a) is used."""
    m = float(np.min(drift.nu))
    if m > 0:
        return mult / m
    slack = float(np.min(drift.mu - drift.effective_arrivals))
    if slack > 0:
        return mult / slack
    raise SpecError(["network is not subcritical: no stationary regime to warm up to"])


@dataclass
class TailEstimate:
    k: int
    u: float
    n: float
    regime: str
    threshold: int
    p_hat: float
    ci_low: float
    ci_high: float
    se: float
    normalized: float
    norm_low: float
    norm_high: float
    norm_se: float
    replications: int
    warmup: float
    resolved: bool
    mode: str = "replicates"

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def row(self) -> list:
        return [self.regime, self.n, self.u, self.k, self.p_hat, self.ci_low, self.ci_high,
                self.normalized, self.replications, self.warmup, int(self.resolved)]


def sample_states(spec: NetworkSpec, warmup: float, replications: int, master_seed: int = 0,
                  event_cap: int | None = None, threads: int = 1) -> np.ndarray:
    """Stationary-state samples Q(T_w), one per replicate; order does not depend on threads."""
    R = int(replications)
    if threads <= 1 or R < 2 * threads:
        return stationary_states(spec, warmup, R, master_seed, event_cap)
    edges = np.linspace(0, R, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(lambda ab: stationary_states(spec, warmup, ab[1] - ab[0], master_seed,
                                                         event_cap, first_replicate=ab[0]),
                            zip(edges[:-1], edges[1:])))
    return np.concatenate(parts)


def _estimate(hits: int, R: int, k, u, n, regime: ScalingRegime, level: int, warmup: float,
              mode: str = "replicates", se=None, ci=None) -> TailEstimate:
    p = hits / R
    if ci is None:
        lo, hi = wilson_interval([hits], R)
        lo, hi = float(lo[0]), float(hi[0])
    else:
        lo, hi = ci
    if se is None:
        se = math.sqrt(p * (1 - p) / R)
    e = regime.exponent(n)
    norm = float(p**e)
    nse = float(e * p ** (e - 1) * se) if p > 0 else math.inf
    return TailEstimate(k=k, u=float(u), n=n, regime=regime.kind, threshold=level, p_hat=p,
                        ci_low=lo, ci_high=hi, se=se, normalized=norm, norm_low=float(lo**e),
                        norm_high=float(hi**e), norm_se=nse, replications=R, warmup=warmup,
                        resolved=p >= RESOLUTION_HITS / R, mode=mode)


def tails_from_states(states: np.ndarray, regime: ScalingRegime, n: float, u_grid, k: int,
                      warmup: float) -> list[TailEstimate]:
    col = states[:, k]
    R = col.size
    out = []
    for u in u_grid:
        level = regime.threshold(n, u)
        out.append(_estimate(int(np.sum(col >= level)), R, k, u, n, regime, level, warmup))
    return out


def estimate_stationary_tail(spec: NetworkSpec, regime: ScalingRegime | str, u, k: int = 0,
                             replications: int = 2000, warmup: float | None = None,
                             warmup_mult: float = 20.0, master_seed: int = 0, n: float = 1,
                             event_cap: int | None = None, threads: int = 1,
                             mode: str = "replicates", batches: int = 50,
                             batch_length: float | None = None):
    """P(Q_k >= s_n u) for the stationary network ``spec``.

    ``mode="replicates"``: independent replicates, each started with
    equilibrium arrival delays and sampled once at T_w (Wilson interval).
    ``mode="time_average"``: one long run after T_w, split into batches whose
    time fractions give a batch-means interval. A scalar ``u`` returns one
    :class:`TailEstimate`, a sequence returns a list.
    """
    if isinstance(regime, str):
        regime = ScalingRegime(regime)
    drift = validate(spec)
    if not drift.subcritical:
        raise SpecError(["network is not subcritical"])
    if replications < 100:
        raise SpecError(["at least 100 replications are required"])
    scalar = np.ndim(u) == 0
    u_grid = [float(u)] if scalar else [float(x) for x in u]
    Tw = default_warmup(drift, warmup_mult) if warmup is None else float(warmup)
    if mode == "replicates":
        states = sample_states(spec, Tw, replications, master_seed, event_cap, threads)
        out = tails_from_states(states, regime, n, u_grid, k, Tw)
    elif mode == "time_average":
        levels = [regime.threshold(n, x) for x in u_grid]
        L = max(levels) + 1
        bl = batch_length if batch_length is not None else Tw
        occ = time_average_occupancy(spec, Tw, bl, batches, master_seed, L, event_cap=event_cap)
        out = []
        for x, lev in zip(u_grid, levels):
            frac = occ[:, k, lev:].sum(axis=1)
            p = float(frac.mean())
            se = float(frac.std(ddof=1) / math.sqrt(batches))
            q = stats.t.ppf(0.975, batches - 1)
            ci = (max(p - q * se, 0.0), min(p + q * se, 1.0))
            est = _estimate(0, batches, k, x, n, regime, lev, Tw, "time_average", se, ci)
            e = regime.exponent(n)
            est.p_hat, est.normalized = p, p**e
            est.norm_se = e * p ** (e - 1) * se if p > 0 else math.inf
            est.resolved = p >= RESOLUTION_HITS / (batches * bl)
            out.append(est)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return out[0] if scalar else out


@dataclass
class SweepResult:
    regime: ScalingRegime
    k: int
    n_grid: list
    u_grid: list
    cells: list
    limsup: dict
    trend: dict
    conditions: dict = field(default_factory=dict)

    def cell(self, n, u) -> TailEstimate:
        for c in self.cells:
            if c.n == n and c.u == u:
                return c
        raise KeyError((n, u))

    def upward_trend_violations(self, n_se: float = 2.0) -> list:
        """(u, n_i, n_j) pairs, i < j, where the value at n_j exceeds that at n_i by > n_se SE."""
        bad = []
        for u in self.u_grid:
            col = [self.cell(n, u) for n in self.n_grid]
            for i in range(len(col)):
                for j in range(i + 1, len(col)):
                    a, b = col[i], col[j]
                    if not (a.resolved and b.resolved):
                        continue
                    if b.normalized - a.normalized > n_se * math.hypot(a.norm_se, b.norm_se):
                        bad.append((u, a.n, b.n))
        return bad

    def increase_in_u_violations(self, n_se: float = 0.0) -> list:
        """(n, u_i, u_j) consecutive resolved pairs where the value rises by more than n_se SE."""
        bad = []
        for n in self.n_grid:
            row = [c for c in (self.cell(n, u) for u in self.u_grid) if c.resolved]
            for a, b in zip(row, row[1:]):
                slack = n_se * math.hypot(a.norm_se, b.norm_se)
                if b.normalized - a.normalized > slack or (n_se == 0 and b.normalized >= a.normalized):
                    bad.append((n, a.u, b.u))
        return bad

    def write_csv(self, path, manifest: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if manifest is not None:
                fh.write("# " + json.dumps(manifest, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for c in self.cells:
                w.writerow([_fmt(v) for v in c.row()])


SWEEP_COLUMNS = ["regime", "n", "u", "k", "p_hat", "ci_low", "ci_high", "normalized",
                 "replications", "warmup", "resolved"]


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def tightness_sweep(base: NetworkSpec, regime: ScalingRegime | str, n_grid: Sequence[float],
                    u_grid: Sequence[float], k: int = 0, replications: int = 2000,
                    master_seed: int = 0, warmup_mult: float = 20.0,
                    warmup: float | None = None, event_cap: int | None = None,
                    threads: int = 1) -> SweepResult:
    """Full n x u table of tail estimates with common random numbers across cells.

    Every n reuses the same replicate seeds, and all u at one n share the same
    state samples, so comparisons across the table are coupled. Per u the
    maximum normalized value over resolved n is reported as the limsup proxy,
    and Kendall's tau of that proxy against u as the trend statistic.
    """
    if isinstance(regime, str):
        regime = ScalingRegime(regime)
    n_grid = [float(n) if not float(n).is_integer() else int(n) for n in n_grid]
    u_grid = [float(u) for u in u_grid]
    errs = []
    if not n_grid:
        errs.append("n grid is empty")
    if not u_grid:
        errs.append("u grid is empty")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        errs.append("n grid must be strictly increasing")
    if any(b <= a for a, b in zip(u_grid, u_grid[1:])):
        errs.append("u grid must be strictly increasing")
    if errs:
        raise SpecError(errs)
    cells = []
    cache = {}
    for n in n_grid:
        spec = make_sequence(base, regime, n)
        drift = validate(spec)
        if not drift.subcritical:
            raise SpecError([f"network at n={n} is not subcritical"])
        Tw = default_warmup(drift, warmup_mult) if warmup is None else float(warmup)
        key = (id(spec), Tw)
        if key not in cache:
            cache[key] = sample_states(spec, Tw, replications, master_seed, event_cap, threads)
        cells.extend(tails_from_states(cache[key], regime, n, u_grid, k, Tw))
    limsup = {}
    for u in u_grid:
        vals = [c.normalized for c in cells if c.u == u and c.resolved]
        limsup[u] = max(vals) if vals else math.nan
    us = [u for u in u_grid if not math.isnan(limsup[u])]
    tau = math.nan
    if len(us) >= 2:
        tau = float(stats.kendalltau(us, [limsup[u] for u in us]).statistic)
    conds = moderate_conditions(base, regime) if regime.kind == "moderate" else {}
    return SweepResult(regime, k, list(n_grid), u_grid, cells, limsup,
                       {"kendall_tau": tau, "resolved_u": us}, conds)
