"""Network descriptions, interarrival and service distributions, traffic equations."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import integrate, special

_SQRT2PI = math.sqrt(2.0 * math.pi)
FAMILIES = ("exponential", "deterministic", "uniform", "gamma", "lognormal", "pareto")

# canonical parameter names, plus accepted aliases resolved in ``from_dict``
_CANONICAL = {
    "exponential": ("rate",),
    "deterministic": ("value",),
    "uniform": ("low", "high"),
    "gamma": ("shape", "scale"),
    "lognormal": ("mu", "sigma"),
    "pareto": ("shape", "scale"),
}
_ALIASES = {
    "exponential": [("mean",)],
    "deterministic": [("mean",)],
    "uniform": [],
    "gamma": [("shape", "mean")],
    "lognormal": [("mean", "sigma")],
    "pareto": [("shape", "mean")],
}


class SpecError(ValueError):
    """Raised when a network or distribution description is invalid.

    ``errors`` holds one human-readable entry per violated invariant.
    """

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class Capabilities:
    has_exp_moment: bool
    has_2plus_eps_moment: bool
    has_stretched_exp_moment: bool

    def to_dict(self) -> dict[str, bool]:
        return {
            "has_exp_moment": self.has_exp_moment,
            "has_2plus_eps_moment": self.has_2plus_eps_moment,
            "has_stretched_exp_moment": self.has_stretched_exp_moment,
        }


@dataclass(frozen=True)
class DistributionSpec:
    """A nonnegative distribution from one of six families.

    Parameters are stored under canonical names: ``rate`` (exponential),
    ``value`` (deterministic), ``low``/``high`` (uniform), ``shape``/``scale``
    (gamma, pareto; pareto support starts at ``scale``) and ``mu``/``sigma``
    (lognormal, log-space).
    """

    family: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError([f"unknown distribution family {self.family!r}"])
        names = _CANONICAL[self.family]
        if set(self.params) != set(names):
            raise SpecError([f"{self.family} expects parameters {list(names)}, got {sorted(self.params)}"])
        p = {k: float(v) for k, v in self.params.items()}
        object.__setattr__(self, "params", p)
        errs = []
        for k, v in p.items():
            if not math.isfinite(v):
                errs.append(f"{self.family} parameter {k} must be finite")
        if self.family == "uniform":
            if not 0 <= p["low"] < p["high"]:
                errs.append("uniform requires 0 <= low < high")
        elif self.family == "lognormal":
            if p["sigma"] <= 0:
                errs.append("lognormal sigma must be positive")
        else:
            for k, v in p.items():
                if v <= 0:
                    errs.append(f"{self.family} parameter {k} must be positive")
        if self.family == "pareto" and p["shape"] <= 1:
            errs.append("pareto shape must exceed 1 for a finite mean")
        if errs:
            raise SpecError(errs)

    # -- constructors -------------------------------------------------------
    @classmethod
    def exponential(cls, rate: float) -> "DistributionSpec":
        return cls("exponential", {"rate": rate})

    @classmethod
    def deterministic(cls, value: float) -> "DistributionSpec":
        return cls("deterministic", {"value": value})

    @classmethod
    def uniform(cls, low: float, high: float) -> "DistributionSpec":
        return cls("uniform", {"low": low, "high": high})

    @classmethod
    def gamma(cls, shape: float, scale: float) -> "DistributionSpec":
        return cls("gamma", {"shape": shape, "scale": scale})

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "DistributionSpec":
        return cls("lognormal", {"mu": mu, "sigma": sigma})

    @classmethod
    def pareto(cls, shape: float, scale: float) -> "DistributionSpec":
        return cls("pareto", {"shape": shape, "scale": scale})

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DistributionSpec":
        """Parse ``{"family": ..., <params>}``; unknown keys are rejected."""
        if not isinstance(d, Mapping) or "family" not in d:
            raise SpecError(["distribution must be an object with a 'family' key"])
        fam = d["family"]
        if fam not in FAMILIES:
            raise SpecError([f"unknown distribution family {fam!r}"])
        keys = set(d) - {"family"}
        if keys == set(_CANONICAL[fam]):
            return cls(fam, {k: d[k] for k in keys})
        for alias in _ALIASES[fam]:
            if keys == set(alias):
                return _from_alias(fam, {k: float(d[k]) for k in keys})
        allowed = [list(_CANONICAL[fam])] + [list(a) for a in _ALIASES[fam]]
        raise SpecError([f"{fam} parameters must be one of {allowed}, got {sorted(keys)}"])

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, **self.params}

    # -- moments --------------------------------------------------------------
    @property
    def mean(self) -> float:
        p, f = self.params, self.family
        if f == "exponential":
            return 1.0 / p["rate"]
        if f == "deterministic":
            return p["value"]
        if f == "uniform":
            return 0.5 * (p["low"] + p["high"])
        if f == "gamma":
            return p["shape"] * p["scale"]
        if f == "lognormal":
            return math.exp(p["mu"] + 0.5 * p["sigma"] ** 2)
        a = p["shape"]
        return a * p["scale"] / (a - 1.0)

    @property
    def second_moment(self) -> float | None:
        """E X^2, or ``None`` when infinite."""
        p, f = self.params, self.family
        if f == "exponential":
            return 2.0 / p["rate"] ** 2
        if f == "deterministic":
            return p["value"] ** 2
        if f == "uniform":
            a, b = p["low"], p["high"]
            return (a * a + a * b + b * b) / 3.0
        if f == "gamma":
            k, th = p["shape"], p["scale"]
            return k * (k + 1.0) * th * th
        if f == "lognormal":
            return math.exp(2 * p["mu"] + 2 * p["sigma"] ** 2)
        a = p["shape"]
        if a <= 2:
            return None
        return a * p["scale"] ** 2 / (a - 2.0)

    @property
    def variance(self) -> float | None:
        m2 = self.second_moment
        if m2 is None:
            return None
        return max(m2 - self.mean**2, 0.0)

    @property
    def rate(self) -> float:
        return 1.0 / self.mean

    @property
    def capabilities(self) -> Capabilities:
        if self.family == "lognormal":
            return Capabilities(False, True, False)
        if self.family == "pareto":
            return Capabilities(False, self.params["shape"] > 2.0, False)
        return Capabilities(True, True, True)

    @property
    def equilibrium_mean(self) -> float:
        """Mean of the integrated-tail law, E X^2 / (2 E X); ``inf`` if E X^2 is."""
        m2 = self.second_moment
        return math.inf if m2 is None else m2 / (2.0 * self.mean)

    # -- transforms -----------------------------------------------------------
    def with_mean(self, mean: float) -> "DistributionSpec":
        """Same shape, time axis rescaled so that the mean becomes ``mean``."""
        c = mean / self.mean
        p, f = dict(self.params), self.family
        if f == "exponential":
            p["rate"] /= c
        elif f == "deterministic":
            p["value"] *= c
        elif f == "uniform":
            p["low"] *= c
            p["high"] *= c
        elif f == "lognormal":
            p["mu"] += math.log(c)
        else:
            p["scale"] *= c
        return DistributionSpec(f, p)

    def log_mgf(self, s: float) -> float:
        """log E exp(s X); ``inf`` where the transform diverges."""
        p, f = self.params, self.family
        if s == 0.0:
            return 0.0
        if f == "exponential":
            r = p["rate"]
            return math.log(r / (r - s)) if s < r else math.inf
        if f == "deterministic":
            return s * p["value"]
        if f == "uniform":
            a, b = p["low"], p["high"]
            w = s * (b - a)
            return s * a + math.log(math.expm1(w) / w) if w < 700 else s * b - math.log(w)
        if f == "gamma":
            th = p["scale"]
            return -p["shape"] * math.log1p(-th * s) if s * th < 1 else math.inf
        if s > 0:
            return math.inf
        if f == "lognormal":
            mu, sig = p["mu"], p["sigma"]
            val, _ = integrate.quad(
                lambda z: math.exp(s * math.exp(min(mu + sig * z, 700.0)) - 0.5 * z * z) / _SQRT2PI,
                -40.0, 40.0, epsabs=1e-14, epsrel=1e-12, limit=200)
            return math.log(val)
        a, xm = p["shape"], p["scale"]
        # E exp(sX) = a (|s| xm)^a Gamma(-a, |s| xm), via the substitution y = |s| x
        val, _ = integrate.quad(lambda x: math.exp(s * x) * a * xm**a * x ** (-a - 1.0),
                                xm, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return math.log(val)

    def mgf_upper(self) -> float:
        """Supremum of the s for which E exp(sX) is finite."""
        f = self.family
        if f == "exponential":
            return self.params["rate"]
        if f == "gamma":
            return 1.0 / self.params["scale"]
        if f in ("deterministic", "uniform"):
            return math.inf
        return 0.0

    def equilibrium_log_mgf(self, s: float) -> float:
        """log E exp(s X_e) for the integrated-tail law: (M(s) - 1) / (s E X)."""
        if s == 0.0:
            return 0.0
        lm = self.log_mgf(s)
        if not math.isfinite(lm):
            return math.inf
        return math.log(math.expm1(lm) / (s * self.mean))

    # -- cdfs and sampling ----------------------------------------------------
    def sf(self, x):
        x = np.asarray(x, dtype=float)
        p, f = self.params, self.family
        if f == "exponential":
            return np.exp(-p["rate"] * np.maximum(x, 0.0))
        if f == "deterministic":
            return (x < p["value"]).astype(float)
        if f == "uniform":
            return np.clip((p["high"] - x) / (p["high"] - p["low"]), 0.0, 1.0)
        if f == "gamma":
            return special.gammaincc(p["shape"], np.maximum(x, 0.0) / p["scale"])
        if f == "lognormal":
            with np.errstate(divide="ignore"):
                z = (np.log(np.maximum(x, 0.0)) - p["mu"]) / p["sigma"]
            return special.ndtr(-z)
        a, xm = p["shape"], p["scale"]
        return np.where(x < xm, 1.0, (xm / np.maximum(x, xm)) ** a)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p, f = self.params, self.family
        if f == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        if f == "deterministic":
            return np.full(size, p["value"])
        if f == "uniform":
            return rng.uniform(p["low"], p["high"], size)
        if f == "gamma":
            return rng.gamma(p["shape"], p["scale"], size)
        if f == "lognormal":
            return rng.lognormal(p["mu"], p["sigma"], size)
        return p["scale"] * (1.0 + rng.pareto(p["shape"], size))

    def integrated_tail(self, x):
        """int_0^x P(X > y) dy, vectorized."""
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        p, f = self.params, self.family
        if f == "exponential":
            r = p["rate"]
            return -np.expm1(-r * x) / r
        if f == "deterministic":
            return np.minimum(x, p["value"])
        if f == "uniform":
            a, b = p["low"], p["high"]
            mid = a + 0.5 * (b - a) - 0.5 * (b - np.clip(x, a, b)) ** 2 / (b - a)
            return np.where(x < a, x, mid)
        if f == "gamma":
            k, th = p["shape"], p["scale"]
            return x * special.gammaincc(k, x / th) + k * th * special.gammainc(k + 1.0, x / th)
        if f == "lognormal":
            mu, sig = p["mu"], p["sigma"]
            with np.errstate(divide="ignore"):
                lx = np.log(x)
            return x * self.sf(x) + self.mean * special.ndtr((lx - mu - sig * sig) / sig)
        a, xm = p["shape"], p["scale"]
        xx = np.maximum(x, xm)
        return np.where(x < xm, x, xm + xm**a * (xx ** (1.0 - a) - xm ** (1.0 - a)) / (1.0 - a))

    def equilibrium_cdf(self, x):
        return self.integrated_tail(x) / self.mean

    def equilibrium_ppf(self, q) -> np.ndarray:
        """Inverse of the integrated-tail cdf.

        Closed forms for exponential, deterministic, uniform and pareto;
        vectorized bisection to 1e-10 for gamma and lognormal.
        """
        q = np.asarray(q, dtype=float)
        p, f = self.params, self.family
        m = self.mean
        if f == "exponential":
            return -np.log1p(-q) / p["rate"]
        if f == "deterministic":
            return q * p["value"]
        if f == "uniform":
            a, b = p["low"], p["high"]
            y = q * m
            inner = b - np.sqrt(np.maximum(2.0 * (b - a) * (a + 0.5 * (b - a) - y), 0.0))
            return np.where(y < a, y, inner)
        if f == "pareto":
            a, xm = p["shape"], p["scale"]
            y = q * m
            tail = (xm ** (1.0 - a) + (y - xm) * (1.0 - a) / xm**a)
            with np.errstate(invalid="ignore", divide="ignore"):
                inner = np.power(np.maximum(tail, 0.0), 1.0 / (1.0 - a))
            return np.where(y < xm, y, inner)
        return _bisect_monotone(self.equilibrium_cdf, q, m)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.family}({args})"


def _from_alias(fam: str, d: dict[str, float]) -> DistributionSpec:
    m = d.get("mean")
    if m is None or m <= 0:
        raise SpecError([f"{fam} mean must be positive"])
    if fam == "exponential":
        return DistributionSpec.exponential(1.0 / m)
    if fam == "deterministic":
        return DistributionSpec.deterministic(m)
    if fam == "gamma":
        return DistributionSpec.gamma(d["shape"], m / d["shape"])
    if fam == "lognormal":
        return DistributionSpec.lognormal(math.log(m) - 0.5 * d["sigma"] ** 2, d["sigma"])
    a = d["shape"]
    if a <= 1:
        raise SpecError(["pareto shape must exceed 1 for a finite mean"])
    return DistributionSpec.pareto(a, m * (a - 1.0) / a)


def _bisect_monotone(F, q: np.ndarray, scale: float, tol: float = 1e-10) -> np.ndarray:
    q = np.atleast_1d(q).astype(float)
    lo = np.zeros_like(q)
    hi = np.full_like(q, scale)
    for _ in range(200):
        short = F(hi) < q
        if not short.any():
            break
        hi = np.where(short, 2.0 * hi, hi)
    while True:
        mid = 0.5 * (lo + hi)
        below = F(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, hi)):
            return 0.5 * (lo + hi)


@dataclass(frozen=True)
class RoutingMatrix:
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.array(self.P, dtype=float, ndmin=2))

    @property
    def K(self) -> int:
        return self.P.shape[0]

    @property
    def exit_probs(self) -> np.ndarray:
        return 1.0 - self.P.sum(axis=1)

    def __eq__(self, other):
        return isinstance(other, RoutingMatrix) and np.array_equal(self.P, other.P)

    __hash__ = None


@dataclass(frozen=True)
class NetworkSpec:
    """K single-server FIFO stations with renewal arrivals and Bernoulli routing.

    ``arrival[k] is None`` means station k sees no exogenous arrivals.
    Construction does not check invariants; call :func:`validate`.
    """

    arrival: tuple
    service: tuple
    routing: RoutingMatrix
    initial_queue: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "arrival", tuple(self.arrival))
        object.__setattr__(self, "service", tuple(self.service))
        if not isinstance(self.routing, RoutingMatrix):
            object.__setattr__(self, "routing", RoutingMatrix(self.routing))
        iq = tuple(int(x) for x in self.initial_queue) or (0,) * len(self.service)
        object.__setattr__(self, "initial_queue", iq)

    @property
    def K(self) -> int:
        return len(self.service)

    @property
    def lam(self) -> np.ndarray:
        return np.array([0.0 if a is None else 1.0 / a.mean for a in self.arrival])

    @property
    def mu(self) -> np.ndarray:
        return np.array([1.0 / s.mean for s in self.service])

    @property
    def P(self) -> np.ndarray:
        return self.routing.P

    def replace(self, **kw) -> "NetworkSpec":
        d = dict(arrival=self.arrival, service=self.service, routing=self.routing,
                 initial_queue=self.initial_queue)
        d.update(kw)
        return NetworkSpec(**d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "stations": [
                {"arrival": None if a is None else a.to_dict(), "service": s.to_dict(),
                 "initial_queue": q}
                for a, s, q in zip(self.arrival, self.service, self.initial_queue)
            ],
            "routing": self.P.tolist(),
        }


@dataclass(frozen=True)
class DriftReport:
    lam: np.ndarray
    mu: np.ndarray
    effective_arrivals: np.ndarray
    nu: np.ndarray
    subcritical: bool
    strong_drift: bool
    spectral_radius: float = 0.0

    @property
    def violating_stations(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.nu <= 0)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "effective_arrivals": self.effective_arrivals.tolist(),
            "nu": self.nu.tolist(),
            "subcritical": self.subcritical,
            "strong_drift": self.strong_drift,
            "spectral_radius": self.spectral_radius,
        }


def spectral_radius(P) -> float:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise SpecError([f"routing matrix must be square, got shape {P.shape}"])
    if P.size and (np.any(P < 0) or np.any(P > 1) or not np.all(np.isfinite(P))):
        raise SpecError(["routing entries must lie in [0, 1]"])
    if P.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(P))))


def solve_traffic(spec: NetworkSpec) -> DriftReport:
    """Effective arrival rates a = (I - P^T)^{-1} lambda and the drifts nu.

    ``nu_k = mu_k - lambda_k - sum_l p_lk mu_l``. Subcriticality (mu > a) and
    the strong drift condition (nu > 0) are reported separately: the second
    implies the first but not conversely.
    """
    P = spec.P
    rho = spectral_radius(P)
    if rho >= 1:
        raise SpecError([f"spectral radius of routing matrix is {rho:.6g} >= 1"])
    lam, mu = spec.lam, spec.mu
    M = np.eye(spec.K) - P.T
    a = np.linalg.solve(M, lam)
    nu = mu - lam - P.T @ mu
    return DriftReport(lam=lam, mu=mu, effective_arrivals=a, nu=nu,
                       subcritical=bool(np.all(mu > a)), strong_drift=bool(np.all(nu > 0)),
                       spectral_radius=rho)


def validate(spec: NetworkSpec, require_strong_drift: bool = False) -> DriftReport:
    """Check every network invariant; raise :class:`SpecError` listing all violations."""
    errors = []
    K = spec.K
    if K < 1:
        raise SpecError(["network needs at least one station"])
    P = spec.P
    if P.shape != (K, K):
        errors.append(f"routing matrix has shape {P.shape}, expected ({K}, {K})")
    else:
        for k in range(K):
            row = P[k]
            if np.any(~np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
                errors.append(f"routing entries out of [0, 1] at station {k}")
            elif row.sum() > 1 + 1e-12:
                errors.append(f"routing row sum exceeds 1 at station {k} (sum={row.sum():.6g})")
    if len(spec.arrival) != K:
        errors.append(f"{len(spec.arrival)} arrival entries for {K} stations")
    if len(spec.initial_queue) != K:
        errors.append(f"{len(spec.initial_queue)} initial queue entries for {K} stations")
    for k, q in enumerate(spec.initial_queue):
        if q < 0:
            errors.append(f"negative initial queue at station {k}")
    if all(a is None for a in spec.arrival):
        errors.append("no station has exogenous arrivals")
    for k, s in enumerate(spec.service):
        if not (s.mean > 0 and math.isfinite(s.mean)):
            errors.append(f"service mean at station {k} must be positive and finite")
    if errors:
        raise SpecError(errors)
    rho = spectral_radius(P)
    if rho >= 1:
        raise SpecError([f"spectral radius of routing matrix is {rho:.6g} >= 1"])
    report = solve_traffic(spec)
    if require_strong_drift and not report.strong_drift:
        raise SpecError([f"drift nu_{k} = {report.nu[k]:.6g} <= 0 at station {k}"
                         for k in report.violating_stations])
    return report


# -- JSON ingestion ----------------------------------------------------------

_STATION_KEYS = {"arrival", "service", "initial_queue"}
_TOP_KEYS = {"stations", "routing"}


def spec_from_dict(doc: Mapping[str, Any]) -> NetworkSpec:
    errors = []
    if not isinstance(doc, Mapping):
        raise SpecError(["network document must be a JSON object"])
    extra = set(doc) - _TOP_KEYS
    if extra:
        errors.append(f"unknown top-level keys {sorted(extra)}")
    stations = doc.get("stations")
    if not isinstance(stations, list) or not stations:
        raise SpecError(errors + ["'stations' must be a nonempty list"])
    arrival, service, q0 = [], [], []
    for k, st in enumerate(stations):
        if not isinstance(st, Mapping):
            errors.append(f"station {k} must be an object")
            continue
        bad = set(st) - _STATION_KEYS
        if bad:
            errors.append(f"unknown keys {sorted(bad)} at station {k}")
        try:
            a = st.get("arrival")
            arrival.append(None if a is None else DistributionSpec.from_dict(a))
        except SpecError as e:
            errors.extend(f"station {k} arrival: {m}" for m in e.errors)
        try:
            if "service" not in st:
                raise SpecError(["missing"])
            service.append(DistributionSpec.from_dict(st["service"]))
        except SpecError as e:
            errors.extend(f"station {k} service: {m}" for m in e.errors)
        q = st.get("initial_queue", 0)
        if not isinstance(q, int) or isinstance(q, bool) or q < 0:
            errors.append(f"initial_queue at station {k} must be a nonnegative integer")
        q0.append(q)
    K = len(stations)
    routing = doc.get("routing", [[0.0] * K for _ in range(K)])
    try:
        P = np.array(routing, dtype=float)
        if P.shape != (K, K):
            errors.append(f"routing matrix has shape {P.shape}, expected ({K}, {K})")
    except (TypeError, ValueError):
        errors.append("routing must be a K x K numeric matrix")
        P = np.zeros((K, K))
    if errors:
        raise SpecError(errors)
    spec = NetworkSpec(arrival=arrival, service=service, routing=RoutingMatrix(P),
                       initial_queue=q0)
    return spec


def load_spec(path: str | Path) -> NetworkSpec:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SpecError([f"invalid JSON: {e}"]) from e
    return spec_from_dict(doc)


def warn_heavy_equilibrium(dist: DistributionSpec) -> None:
    if dist.second_moment is None:
        warnings.warn(f"{dist!r} has infinite second moment: equilibrium delay has infinite mean",
                      RuntimeWarning, stacklevel=3)
