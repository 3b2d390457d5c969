"""One-dimensional Skorohod reflection and the single-station majorants.

For a station k with drift nu_k > 0 the queue length is dominated pathwise by
the reflection of ``Q~_k(t) = Qbar_k(t) - nu_k t`` and, more crudely, by the
sum ``Y1 + sum_l Y2_l + sum_l Y3_l + (Q_k(0) - nu_k t / 4)^+``. Every path
involved is affine between events, so the suprema defining the Y terms are
exact maxima over knot values and left limits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import DriftReport, SpecError
from .paths import Path
from .simulator import Trajectory

TOL = 1e-9


def skorohod_reflect(x: Path) -> Path:
    """psi(x)(t) = x(t) - min(inf_{s<=t} x(s), 0), in one left-to-right pass.

    A knot is inserted wherever a decreasing segment reaches the running
    minimum, after which the reflected path sits at zero.
    """
    if len(x) == 0:
        return Path([], [], end=x.end)
    times, values, slopes = [], [], []
    low = min(x.values[0], 0.0)
    n = len(x)
    for i in range(n):
        t0, v, c = x.times[i], x.values[i], x.slopes[i]
        t1 = x.times[i + 1] if i + 1 < n else x.end
        low = min(low, v)
        gap = v - low
        if c < 0 and gap <= -c * (t1 - t0):
            t_hit = t0 + gap / -c
            if t_hit > t0:
                times.append(t0)
                values.append(gap)
                slopes.append(c)
                if t_hit < t1:
                    times.append(t_hit)
                    values.append(0.0)
                    slopes.append(0.0)
            else:
                times.append(t0)
                values.append(0.0)
                slopes.append(0.0)
            low = min(low, v + c * (t1 - t0))
        else:
            times.append(t0)
            values.append(gap)
            slopes.append(c)
    return Path(times, values, slopes, x.end)


def regulator(x: Path, at) -> np.ndarray:
    """l(t) = -min(inf_{s<=t} x(s), 0) evaluated at the given times."""
    at = np.atleast_1d(np.asarray(at, dtype=float))
    return np.array([-min(x.inf_until(t), 0.0) for t in at])


def _sup_increment(f: Path):
    """sup_{s<=t} (f(t) - f(s)) at every knot and at every knot's left limit."""
    inf = f.running_inf()
    left = f.left_limits()
    at = f.values - inf
    prev = np.concatenate([[left[0]], inf[:-1]])
    at_left = left - np.minimum(prev, left)
    return at, at_left


@dataclass
class MajorantBundle:
    """Majorants of one station evaluated on the trajectory grid.

    ``*_left`` arrays hold left limits at the same grid points.
    """

    station: int
    grid: np.ndarray
    q: np.ndarray
    q_left: np.ndarray
    q_bar: Path
    q_tilde: Path
    q_hat: Path
    d_bar: list
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    remainder: np.ndarray
    bound: np.ndarray
    bound_left: np.ndarray
    majorization_violations: int
    decomposition_violations: int
    identity_residual: float

    @property
    def ok(self) -> bool:
        return self.majorization_violations == 0 and self.decomposition_violations == 0

    def write_csv(self, path) -> None:
        qh = self.q_hat(self.grid)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Q", "Q_hat", "Y1", "sum_Y2", "sum_Y3"])
            for row in zip(self.grid, self.q, qh, self.y1, self.y2.sum(1), self.y3.sum(1)):
                w.writerow([repr(float(v)) for v in row])


def centered_paths(traj: Trajectory, drift: DriftReport, k: int):
    """Abar_k, {Phibar_lk(D_l)}_l and {Dbar_l}_l as paths on the trajectory grid."""
    G, T = traj.grid, traj.horizon
    P = traj.spec.P
    lam, mu = drift.lam, drift.mu
    a_bar = Path(G, traj.A[:, k] - lam[k] * G, -lam[k], T)
    phi_bar = [Path(G, traj.phi[:, l, k] - P[l, k] * traj.D[:, l], end=T) for l in range(traj.K)]
    d_bar = [Path(G, traj.D[:, l] - mu[l] * traj.B[:, l], -mu[l] * traj.busy_slope[:, l], T)
             for l in range(traj.K)]
    return a_bar, phi_bar, d_bar


def build_majorants(traj: Trajectory, drift: DriftReport, k: int, tol: float = TOL) -> MajorantBundle:
    nu = float(drift.nu[k])
    if not nu > 0:
        raise SpecError([f"drift nu_{k} = {nu:.6g} <= 0 at station {k}: majorants need nu_k > 0"])
    K = traj.K
    G, T = traj.grid, traj.horizon
    P = traj.spec.P
    q0 = float(traj.q0[k])
    a_bar, phi_bar, d_bar = centered_paths(traj, drift, k)

    q_bar = a_bar + q0
    for l in range(K):
        q_bar = q_bar + phi_bar[l] + P[l, k] * d_bar[l]
    q_bar = q_bar - d_bar[k]
    q_tilde = q_bar.minus_drift(nu)
    q_hat = skorohod_reflect(q_tilde)

    qp = traj.path("Q", k)
    q, q_left = qp.values, qp.left_limits()
    hat, hat_left = q_hat(G), q_hat.left_limit(G)
    scale = np.maximum(1.0, np.abs(hat))
    major_bad = np.sum(q > hat + tol * scale) + np.sum(q_left > hat_left + tol * scale)

    # identity: Q = Qbar - nu t - sum_l p_lk mu_l (t - B_l) + mu_k (t - B_k)
    idle = G[:, None] - traj.B
    recon = q_bar.values - nu * G - idle @ (P[:, k] * drift.mu) + drift.mu[k] * idle[:, k]
    ident_res = float(np.max(np.abs(recon - q))) if G.size else 0.0

    c4 = nu / 4.0
    cK = nu / (4.0 * K)
    y1, y1_left = _sup_increment(a_bar.minus_drift(c4))
    y2 = np.empty((G.size, K))
    y2_left = np.empty((G.size, K))
    y3 = np.empty((G.size, K))
    y3_left = np.empty((G.size, K))
    for l in range(K):
        y2[:, l], y2_left[:, l] = _sup_increment(phi_bar[l].minus_drift(cK))
        up, up_l = _sup_increment(d_bar[l].minus_drift(cK))
        dn, dn_l = _sup_increment((-d_bar[l]).minus_drift(cK))
        y3[:, l] = np.maximum(up, dn)
        y3_left[:, l] = np.maximum(up_l, dn_l)
    rem = np.maximum(q0 - c4 * G, 0.0)
    bound = y1 + y2.sum(1) + y3.sum(1) + rem
    bound_left = y1_left + y2_left.sum(1) + y3_left.sum(1) + rem
    bscale = np.maximum(1.0, np.abs(bound))
    dec_bad = np.sum(q > bound + tol * bscale) + np.sum(q_left > bound_left + tol * bscale)
    return MajorantBundle(station=k, grid=G, q=q, q_left=q_left, q_bar=q_bar, q_tilde=q_tilde,
                          q_hat=q_hat, d_bar=d_bar, y1=y1, y2=y2, y3=y3, remainder=rem,
                          bound=bound, bound_left=bound_left,
                          majorization_violations=int(major_bad),
                          decomposition_violations=int(dec_bad), identity_residual=ident_res)


def y_components(traj: Trajectory, drift: DriftReport, k: int, t: float):
    """(Y1(t), [Y2_l(t)]_l, [Y3_l(t)]_l) for station k at an arbitrary time t.

    Each term is sup_{0<=s<=t} of an increment minus a linear drift; the
    increment paths are affine between events, so the supremum over s is
    attained at a knot, a left limit or s = t itself.
    """
    nu = float(drift.nu[k])
    if not nu > 0:
        raise SpecError([f"drift nu_{k} = {nu:.6g} <= 0 at station {k}"])
    traj._check_t(t)
    K = traj.K
    a_bar, phi_bar, d_bar = centered_paths(traj, drift, k)

    def sup_inc(f: Path) -> float:
        return float(f(t) - f.inf_until(t))

    y1 = sup_inc(a_bar.minus_drift(nu / 4.0))
    cK = nu / (4.0 * K)
    y2 = np.array([sup_inc(phi_bar[l].minus_drift(cK)) for l in range(K)])
    y3 = np.array([max(sup_inc(d_bar[l].minus_drift(cK)), sup_inc((-d_bar[l]).minus_drift(cK)))
                   for l in range(K)])
    return y1, y2, y3
