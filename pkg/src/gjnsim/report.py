"""PNG figures written next to the CSV outputs.

Rendering uses the Agg backend with the PNG ``Software`` tag removed, so the
same data always gives byte-identical files.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_queue_paths(traj, path, max_points: int = 20000):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    G = traj.grid
    step = max(1, G.size // max_points)
    for k in range(traj.K):
        ax.step(G[::step], traj.Q[::step, k], where="post", lw=0.8, label=f"station {k}")
    ax.set_xlabel("t")
    ax.set_ylabel("Q_k(t)")
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def plot_majorants(bundle, path, max_points: int = 20000):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    G = bundle.grid
    step = max(1, G.size // max_points)
    ax.step(G[::step], bundle.q[::step], where="post", lw=0.8, label="Q")
    ax.plot(G[::step], bundle.q_hat(G)[::step], lw=0.8, label="reflected majorant")
    ax.plot(G[::step], bundle.bound[::step], lw=0.8, label="Y decomposition")
    ax.set_xlabel("t")
    ax.set_title(f"station {bundle.station}", fontsize=9)
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)


def plot_bounds(results, path):
    n = len(results)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.5), squeeze=False)
    for ax, res in zip(axes[0], results):
        u = res.u
        p = np.maximum(res.mc.p, 1e-12)
        yerr = np.vstack([p - np.maximum(res.mc.ci_low, 1e-12), np.maximum(res.mc.ci_high - p, 0)])
        ax.errorbar(u, p, yerr=yerr, fmt="o", ms=3, label="Monte Carlo")
        for name, lab in (("lundberg", "Lundberg"), ("dyadic", "Chernoff dyadic"),
                          ("second_moment", "second moment")):
            b = getattr(res, name)
            if np.any(np.isfinite(b)):
                ax.plot(u, b, lw=1, label=lab)
        ax.set_yscale("log")
        ax.set_xlabel("u")
        ax.set_title(res.which, fontsize=9)
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_sweep(result, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for n in result.n_grid:
        cells = [result.cell(n, u) for u in result.u_grid]
        u = np.array([c.u for c in cells])
        v = np.array([c.normalized for c in cells])
        ok = np.array([c.resolved for c in cells])
        line, = ax.plot(u[ok], v[ok], "o-", ms=3, label=f"n={n}")
        if np.any(~ok):
            ax.plot(u[~ok], v[~ok], "x", color=line.get_color())
    ax.set_xlabel("u")
    ax.set_ylabel("normalized tail")
    ax.set_title(f"{result.regime.kind} (x: below resolution floor)", fontsize=9)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_tail(estimates, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    u = np.array([e.u for e in estimates])
    p = np.array([e.p_hat for e in estimates])
    lo = np.array([e.ci_low for e in estimates])
    hi = np.array([e.ci_high for e in estimates])
    pos = p > 0
    ax.errorbar(u[pos], p[pos], yerr=np.vstack([p[pos] - lo[pos], hi[pos] - p[pos]]), fmt="o-", ms=3)
    if np.any(pos) and not math.isclose(p[pos].min(), p[pos].max()):
        ax.set_yscale("log")
    ax.set_xlabel("u")
    ax.set_ylabel("P(Q_k >= threshold)")
    _save(fig, path)
