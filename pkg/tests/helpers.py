"""Random network generators shared by property and acceptance tests."""
import numpy as np

from gjnsim.model import DistributionSpec as D
from gjnsim.model import NetworkSpec


def random_dist(rng, mean):
    fam = rng.integers(6)
    if fam == 0:
        return D.exponential(1.0 / mean)
    if fam == 1:
        return D.deterministic(mean)
    if fam == 2:
        w = rng.uniform(0.1, 1.0) * mean
        return D.uniform(mean - w, mean + w)
    if fam == 3:
        k = rng.uniform(0.5, 4.0)
        return D.gamma(k, mean / k)
    if fam == 4:
        s = rng.uniform(0.2, 1.2)
        return D.lognormal(np.log(mean) - 0.5 * s * s, s)
    a = rng.uniform(1.5, 4.0)
    return D.pareto(a, mean * (a - 1) / a)


def random_network(rng, kmax=5, load=None):
    """A network with spectral radius < 1 and mixed distributions.

    With ``load`` set, service means are chosen so that every station has
    effective utilization ``load`` (subcritical for load < 1).
    """
    K = int(rng.integers(1, kmax + 1))
    P = rng.uniform(0, 1, (K, K)) * (rng.uniform(0, 1, (K, K)) < 0.5)
    rows = P.sum(1)
    target = rng.uniform(0.0, 0.8, K)
    P = np.where(rows[:, None] > 0, P / np.maximum(rows[:, None], 1e-12) * target[:, None], 0.0)
    has = rng.uniform(0, 1, K) < 0.6
    has[rng.integers(K)] = True
    lam = np.where(has, rng.uniform(0.2, 1.0, K), 0.0)
    arrival = [random_dist(rng, 1.0 / l) if h else None for l, h in zip(lam, has)]
    a = np.linalg.solve(np.eye(K) - P.T, lam)
    if load is None:
        mu = rng.uniform(0.3, 3.0, K)
    else:
        mu = np.maximum(a, 1e-3) / load
    service = [random_dist(rng, 1.0 / m) for m in mu]
    q0 = rng.integers(0, 4, K)
    return NetworkSpec(arrival, service, P, q0)
