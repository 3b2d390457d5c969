"""Event-driven simulation of a generalized Jackson network.

The event loop runs in a numba kernel over pre-drawn blocks of interarrival
gaps, service times and routing outcomes; the Python driver refills the
blocks from the seeded streams whenever one runs low. Because the streams are
chunk-invariant, a trajectory depends only on (spec, horizon, seed,
replicate, arrival start), never on the block size.

Event order: earliest time first; at equal times departures precede
exogenous arrivals, then lower station index first. A departing customer is
routed at its departure instant, so the routed arrival and any service start
it triggers carry the same timestamp.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .model import NetworkSpec
from .paths import Path
from .primitives import (ROLE_ARRIVAL, ROLE_ROUTING, ROLE_SERVICE, DelayMode, RenewalStream,
                         RoutingSequence, stream_seed)

KIND_DEPARTURE = 0
KIND_EXTERNAL = 1

_DONE, _REFILL, _LOG_FULL, _MAX_EVENTS = 0, 1, 2, 3


class ResourceError(RuntimeError):
    """The event count exceeded the configured cap before the horizon."""


@numba.njit(cache=True, nogil=True)
def _advance(T, max_events, tnow, q, next_arr, next_dep, busy_since, busy_acc, has_arr,
             arr_buf, arr_ptr, arr_len, svc_buf, svc_ptr, svc_len, rt_buf, rt_ptr, rt_len,
             record, log_t, log_kind, log_st, log_dest, log_q1, log_q2, counters, occ, occ_on):
    K = q.shape[0]
    L = occ.shape[1]
    t = tnow[0]
    while True:
        for k in range(K):
            if has_arr[k] and arr_ptr[k] >= arr_len[k]:
                tnow[0] = t
                return _REFILL
            if svc_ptr[k] >= svc_len[k] or rt_ptr[k] >= rt_len[k]:
                tnow[0] = t
                return _REFILL
        if record and counters[1] >= log_t.shape[0]:
            tnow[0] = t
            return _LOG_FULL
        best = np.inf
        bk = -1
        bkind = -1
        for k in range(K):
            if next_dep[k] < best:
                best = next_dep[k]
                bk = k
                bkind = KIND_DEPARTURE
        for k in range(K):
            if next_arr[k] < best:
                best = next_arr[k]
                bk = k
                bkind = KIND_EXTERNAL
        if bk < 0 or best > T:
            if occ_on:
                for k in range(K):
                    occ[k, min(q[k], L - 1)] += T - t
            tnow[0] = T
            return _DONE
        if counters[0] >= max_events:
            tnow[0] = t
            return _MAX_EVENTS
        if occ_on:
            for k in range(K):
                occ[k, min(q[k], L - 1)] += best - t
        t = best
        k = bk
        dest = -1
        if bkind == KIND_EXTERNAL:
            q[k] += 1
            next_arr[k] = t + arr_buf[k, arr_ptr[k]]
            arr_ptr[k] += 1
            if q[k] == 1:
                busy_since[k] = t
                next_dep[k] = t + svc_buf[k, svc_ptr[k]]
                svc_ptr[k] += 1
        else:
            q[k] -= 1
            z = rt_buf[k, rt_ptr[k]]
            rt_ptr[k] += 1
            dest = z
            if z > 0:
                l = z - 1
                q[l] += 1
                if l != k and q[l] == 1:
                    busy_since[l] = t
                    next_dep[l] = t + svc_buf[l, svc_ptr[l]]
                    svc_ptr[l] += 1
            if q[k] > 0:
                next_dep[k] = t + svc_buf[k, svc_ptr[k]]
                svc_ptr[k] += 1
            else:
                next_dep[k] = np.inf
                busy_acc[k] += t - busy_since[k]
        if record:
            i = counters[1]
            log_t[i] = t
            log_kind[i] = bkind
            log_st[i] = k
            log_dest[i] = dest
            log_q1[i] = q[k]
            log_q2[i] = q[dest - 1] if dest > 0 else -1
            counters[1] = i + 1
        counters[0] += 1


class _Engine:
    """Holds kernel state and the seeded streams of one replicate."""

    def __init__(self, spec: NetworkSpec, master_seed: int, replicate: int,
                 arrival_start: DelayMode | Sequence[DelayMode] = "ordinary",
                 record: bool = False, block: int = 1024, occ_levels: int = 0):
        K = spec.K
        self.spec = spec
        self.record = record
        self.block = int(block)
        if isinstance(arrival_start, (str, int, float)):
            arrival_start = [arrival_start] * K
        self.arr_streams = [
            None if a is None else RenewalStream(a, arrival_start[k],
                                                 stream_seed(master_seed, replicate, k, ROLE_ARRIVAL),
                                                 block=block, record=record)
            for k, a in enumerate(spec.arrival)
        ]
        self.svc_streams = [RenewalStream(s, "ordinary",
                                          stream_seed(master_seed, replicate, k, ROLE_SERVICE),
                                          block=block, record=record)
                            for k, s in enumerate(spec.service)]
        self.rt_streams = [RoutingSequence(spec.P[k], stream_seed(master_seed, replicate, k, ROLE_ROUTING),
                                           block=block, record=record)
                           for k in range(K)]
        W = self.block + 8
        self.arr_buf = np.zeros((K, W))
        self.svc_buf = np.zeros((K, W))
        self.rt_buf = np.zeros((K, W), dtype=np.int64)
        self.arr_ptr = np.zeros(K, np.int64)
        self.arr_len = np.zeros(K, np.int64)
        self.svc_ptr = np.zeros(K, np.int64)
        self.svc_len = np.zeros(K, np.int64)
        self.rt_ptr = np.zeros(K, np.int64)
        self.rt_len = np.zeros(K, np.int64)
        self.has_arr = np.array([s is not None for s in self.arr_streams])
        self.q = np.array(spec.initial_queue, dtype=np.int64)
        self.q0 = self.q.copy()
        self.next_arr = np.full(K, np.inf)
        self.next_dep = np.full(K, np.inf)
        self.busy_since = np.zeros(K)
        self.busy_acc = np.zeros(K)
        self.tnow = np.zeros(1)
        self.counters = np.zeros(2, np.int64)
        cap = 4096 if record else 0
        self.log_t = np.zeros(cap)
        self.log_kind = np.zeros(cap, np.int64)
        self.log_st = np.zeros(cap, np.int64)
        self.log_dest = np.zeros(cap, np.int64)
        self.log_q1 = np.zeros(cap, np.int64)
        self.log_q2 = np.zeros(cap, np.int64)
        self.occ = np.zeros((K, max(occ_levels, 1)))
        self.occ_on = occ_levels > 0
        self.first_epochs = np.full(K, np.nan)
        for k, s in enumerate(self.arr_streams):
            if s is not None:
                self.next_arr[k] = self.first_epochs[k] = s.first_epoch()
        self._refill()
        for k in range(K):
            if self.q[k] > 0:
                self.next_dep[k] = self._pop_service(k)

    def _pop_service(self, k):
        v = self.svc_buf[k, self.svc_ptr[k]]
        self.svc_ptr[k] += 1
        if self.svc_ptr[k] >= self.svc_len[k]:
            self._refill()
        return v

    @staticmethod
    def _top_up(buf, ptr, length, k, stream, low=4):
        rem = length[k] - ptr[k]
        if rem >= low:
            return
        buf[k, :rem] = buf[k, ptr[k]:length[k]]
        new = stream.take(buf.shape[1] - 8)
        buf[k, rem:rem + new.size] = new
        ptr[k] = 0
        length[k] = rem + new.size

    def _refill(self):
        for k in range(self.spec.K):
            if self.arr_streams[k] is not None:
                self._top_up(self.arr_buf, self.arr_ptr, self.arr_len, k, self.arr_streams[k])
            self._top_up(self.svc_buf, self.svc_ptr, self.svc_len, k, self.svc_streams[k])
            self._top_up(self.rt_buf, self.rt_ptr, self.rt_len, k, self.rt_streams[k])

    def _grow_log(self):
        for name in ("log_t", "log_kind", "log_st", "log_dest", "log_q1", "log_q2"):
            a = getattr(self, name)
            b = np.zeros(2 * a.size, a.dtype)
            b[:a.size] = a
            setattr(self, name, b)

    def run(self, T: float, max_events: int | None = None) -> int:
        """Advance to the horizon; returns the final kernel status."""
        limit = np.iinfo(np.int64).max if max_events is None else int(max_events)
        while True:
            status = _advance(float(T), limit, self.tnow, self.q, self.next_arr, self.next_dep,
                              self.busy_since, self.busy_acc, self.has_arr,
                              self.arr_buf, self.arr_ptr, self.arr_len,
                              self.svc_buf, self.svc_ptr, self.svc_len,
                              self.rt_buf, self.rt_ptr, self.rt_len,
                              self.record, self.log_t, self.log_kind, self.log_st, self.log_dest,
                              self.log_q1, self.log_q2, self.counters, self.occ, self.occ_on)
            if status == _REFILL:
                self._refill()
            elif status == _LOG_FULL:
                self._grow_log()
            else:
                return status

    @property
    def t(self) -> float:
        return float(self.tnow[0])

    @property
    def n_events(self) -> int:
        return int(self.counters[0])

    def busy_time(self) -> np.ndarray:
        return self.busy_acc + np.where(self.q > 0, self.t - self.busy_since, 0.0)

    def service_consumed(self, k: int) -> int:
        s = self.svc_streams[k]
        return s.consumed - int(self.svc_len[k] - self.svc_ptr[k])


@dataclass
class Trajectory:
    """A simulated sample path on ``[0, horizon]``.

    Per-station processes are stored on ``grid``, the sorted distinct event
    times together with 0 and the horizon; values are right-continuous
    (state after every event at that instant). Busy time is continuous with
    slope ``busy_slope[i]`` on ``[grid[i], grid[i+1])``. The raw event log
    keeps simultaneous events separate.
    """

    spec: NetworkSpec
    horizon: float
    grid: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    D: np.ndarray
    B: np.ndarray
    busy_slope: np.ndarray
    phi: np.ndarray  # phi[i, l, k] = Phi_lk(D_l(grid[i]))
    events: dict
    service_times: list
    arrival_epochs: list
    routing_outcomes: list
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def q0(self) -> np.ndarray:
        return np.asarray(self.spec.initial_queue)

    def path(self, name: str, k: int) -> Path:
        if name == "B":
            return Path(self.grid, self.B[:, k], self.busy_slope[:, k], self.horizon)
        arr = {"Q": self.Q, "A": self.A, "D": self.D}[name]
        return Path(self.grid, arr[:, k], end=self.horizon)

    def phi_path(self, l: int, k: int) -> Path:
        return Path(self.grid, self.phi[:, l, k], end=self.horizon)

    def _check_t(self, t):
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")

    def service_epochs(self, k: int) -> np.ndarray:
        """sigma_{k,i}: cumulative service requirements of the services started so far."""
        return np.cumsum(self.service_times[k])

    def write_csv(self, path) -> None:
        """Event dump: (time, station, event_type, queue_after); stations are 0-based."""
        ev = self.events
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "station", "event_type", "queue_after"])
            for t, kind, st, dest, q1, q2 in zip(ev["time"], ev["kind"], ev["station"], ev["dest"],
                                                  ev["q_station"], ev["q_dest"]):
                if kind == KIND_EXTERNAL:
                    w.writerow([repr(float(t)), int(st), "external", int(q1)])
                else:
                    w.writerow([repr(float(t)), int(st), "departure", int(q1)])
                    if dest > 0:
                        w.writerow([repr(float(t)), int(dest) - 1, "arrival", int(q2)])


def simulate(spec: NetworkSpec, horizon: float, master_seed: int = 0, replicate: int = 0,
             arrival_start: DelayMode | Sequence[DelayMode] = "ordinary",
             event_cap: int | None = None, stop_after: int | None = None) -> Trajectory:
    """Simulate one replicate and record its full trajectory.

    ``event_cap`` raises :class:`ResourceError` when exceeded before the
    horizon; ``stop_after`` instead ends the run after that many events and
    shrinks the horizon to the last event time.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    eng = _Engine(spec, master_seed, replicate, arrival_start, record=True)
    limit = stop_after
    if event_cap is not None:
        limit = event_cap if limit is None else min(limit, event_cap)
    status = eng.run(horizon, limit)
    T = float(horizon)
    if status == _MAX_EVENTS:
        if stop_after is None or (event_cap is not None and event_cap < stop_after):
            raise ResourceError(f"event cap {event_cap} exceeded before horizon {horizon}")
        T = eng.t
    return _build_trajectory(eng, T, master_seed, replicate, arrival_start)


def _build_trajectory(eng: _Engine, T: float, master_seed, replicate, arrival_start) -> Trajectory:
    spec = eng.spec
    K = spec.K
    n = eng.n_events
    t = eng.log_t[:n].copy()
    kind = eng.log_kind[:n].copy()
    st = eng.log_st[:n].copy()
    dest = eng.log_dest[:n].copy()
    q1 = eng.log_q1[:n].copy()
    q2 = eng.log_q2[:n].copy()
    events = dict(time=t, kind=kind, station=st, dest=dest, q_station=q1, q_dest=q2)

    grid = np.unique(np.concatenate([[0.0], t, [T]]))
    # index of the last event at or before each grid time (-1: none yet)
    last = np.searchsorted(t, grid, side="right") - 1

    Qev = queue_after_events(events, eng.q0, K)
    ext = np.zeros((n, K), np.int64)
    dep = np.zeros((n, K), np.int64)
    rows = np.arange(n)
    ext[rows[kind == KIND_EXTERNAL], st[kind == KIND_EXTERNAL]] = 1
    isdep = kind == KIND_DEPARTURE
    dep[rows[isdep], st[isdep]] = 1
    phi_ev = np.zeros((n, K, K), np.int64)
    routed = isdep & (dest > 0)
    phi_ev[rows[routed], st[routed], dest[routed] - 1] = 1
    A_ev, D_ev, phi_cum = np.cumsum(ext, 0), np.cumsum(dep, 0), np.cumsum(phi_ev, 0)

    def at_grid(ev_arr, init):
        out = np.empty((grid.size,) + ev_arr.shape[1:], dtype=ev_arr.dtype)
        pre = last < 0
        out[pre] = init
        out[~pre] = ev_arr[last[~pre]]
        return out

    Q = at_grid(Qev, eng.q0)
    A = at_grid(A_ev, 0)
    D = at_grid(D_ev, 0)
    phi = at_grid(phi_cum, 0)
    slope = (Q > 0).astype(float)
    B = np.zeros((grid.size, K))
    if grid.size > 1:
        B[1:] = np.cumsum(slope[:-1] * np.diff(grid)[:, None], axis=0)
    svc = [s.history()[:eng.service_consumed(k)] for k, s in enumerate(eng.svc_streams)]
    arrs = []
    for k, s in enumerate(eng.arr_streams):
        if s is None:
            arrs.append(np.empty(0))
            continue
        gaps = s.history()
        if s.delay_mode == "ordinary":
            gaps = gaps[1:]
        ep = eng.first_epochs[k] + np.concatenate([[0.0], np.cumsum(gaps)])
        arrs.append(ep[ep <= T])
    rts = [r.history()[:int(D[-1, k])] for k, r in enumerate(eng.rt_streams)]
    meta = dict(master_seed=master_seed, replicate=replicate, arrival_start=arrival_start,
                n_events=n)
    return Trajectory(spec=spec, horizon=T, grid=grid, Q=Q, A=A, D=D, B=B, busy_slope=slope,
                      phi=phi, events=events, service_times=svc, arrival_epochs=arrs,
                      routing_outcomes=rts, meta=meta)


def queue_after_events(events: dict, q0, K: int) -> np.ndarray:
    """Queue vector after each logged event, forward-filled from the engine's counters."""
    n = events["time"].size
    out = np.empty((n, K), np.int64)
    st, dest = events["station"], events["dest"]
    for k in range(K):
        idx = np.full(n, -1)
        val = np.full(n, q0[k], np.int64)
        m1 = st == k
        idx[m1] = np.flatnonzero(m1)
        val[m1] = events["q_station"][m1]
        m2 = (dest - 1 == k) & (st != k)
        idx[m2] = np.flatnonzero(m2)
        val[m2] = events["q_dest"][m2]
        ff = np.maximum.accumulate(idx)
        out[:, k] = np.where(ff >= 0, val[np.maximum(ff, 0)], q0[k])
    return out


def busy_time(traj: Trajectory, k: int, t: float) -> float:
    """B_k(t) = int_0^t 1{Q_k(s) > 0} ds, exact from the event structure."""
    traj._check_t(t)
    return float(traj.path("B", k)(t))


def queue_at(traj: Trajectory, k: int, t: float) -> int:
    traj._check_t(t)
    return int(traj.path("Q", k)(t))


def flow_balance_violations(traj: Trajectory) -> int:
    """Events after which Q_k != Q_k(0) + A_k + sum_l Phi_lk(D_l) - D_k for some k.

    The routing counts are rebuilt from the recorded routing sequences, so the
    check also confirms that the i-th departure from l used zeta_l^(i).
    """
    ev = traj.events
    n = ev["time"].size
    if n == 0:
        return 0
    K = traj.K
    Q = queue_after_events(ev, traj.q0, K)
    kind, st = ev["kind"], ev["station"]
    rhs = np.tile(traj.q0, (n, 1)).astype(np.int64)
    rows = np.arange(n)
    ext = np.zeros((n, K), np.int64)
    ext[rows[kind == KIND_EXTERNAL], st[kind == KIND_EXTERNAL]] = 1
    rhs += np.cumsum(ext, 0)
    isdep = kind == KIND_DEPARTURE
    dep = np.zeros((n, K), np.int64)
    dep[rows[isdep], st[isdep]] = 1
    Dcum = np.cumsum(dep, 0)
    rhs -= Dcum
    for l in range(K):
        zeta = traj.routing_outcomes[l]
        # Phi_lk(m) for m = 0..len(zeta)
        for k in range(K):
            phi_m = np.concatenate([[0], np.cumsum(zeta == k + 1)])
            m = np.minimum(Dcum[:, l], zeta.size)
            rhs[:, k] += phi_m[m]
    bad = np.any(rhs != Q, axis=1) | np.any(Q < 0, axis=1)
    return int(bad.sum())


def departure_identity_violations(traj: Trajectory, tol: float = 1e-9) -> int:
    """Grid points where D_k(t) != S_k(B_k(t)), up to a relative tolerance on B."""
    bad = 0
    for k in range(traj.K):
        sig = traj.service_epochs(k)
        D = traj.D[:, k]
        B = traj.B[:, k]
        eps = tol * np.maximum(1.0, B)
        done = np.concatenate([[0.0], sig])
        ok_low = done[np.minimum(D, sig.size)] <= B + eps
        nxt = np.where(D < sig.size, done[np.minimum(D + 1, sig.size)], np.inf)
        ok_high = nxt > B - eps
        bad += int(np.sum(~(ok_low & ok_high) | (D > sig.size)))
    return bad


def run_state(spec: NetworkSpec, horizon: float, master_seed: int, replicate: int,
              arrival_start: DelayMode = "equilibrium", event_cap: int | None = None,
              occ_levels: int = 0):
    """Run one replicate to ``horizon`` without recording; returns the engine."""
    lam_tot = float(spec.lam.sum() + spec.mu.sum())
    block = int(min(max(lam_tot * horizon / max(spec.K, 1) + 8, 16), 8192))
    eng = _Engine(spec, master_seed, replicate, arrival_start, record=False, block=block,
                  occ_levels=occ_levels)
    status = eng.run(horizon, event_cap)
    if status == _MAX_EVENTS:
        raise ResourceError(f"event cap {event_cap} exceeded before horizon {horizon}")
    return eng


def stationary_states(spec: NetworkSpec, warmup: float, replications: int, master_seed: int,
                      event_cap: int | None = None, first_replicate: int = 0) -> np.ndarray:
    """Q(T_w) for independent replicates started with equilibrium arrival delays."""
    out = np.empty((replications, spec.K), np.int64)
    for i in range(replications):
        eng = run_state(spec, warmup, master_seed, first_replicate + i, "equilibrium", event_cap)
        out[i] = eng.q
    return out


def time_average_occupancy(spec: NetworkSpec, warmup: float, batch_length: float, batches: int,
                           master_seed: int, levels: int, replicate: int = 0,
                           event_cap: int | None = None) -> np.ndarray:
    """Long-run mode: per-batch fraction of time each station spends at each level.

    Returns an array of shape ``(batches, K, levels)``; the last level collects
    everything at or above it.
    """
    eng = run_state(spec, warmup, master_seed, replicate, "equilibrium", event_cap, occ_levels=levels)
    out = np.empty((batches, spec.K, levels))
    T = warmup
    for b in range(batches):
        eng.occ[:] = 0.0
        T += batch_length
        status = eng.run(T, event_cap)
        if status == _MAX_EVENTS:
            raise ResourceError(f"event cap {event_cap} exceeded")
        out[b] = eng.occ / batch_length
    return out

