"""Command-line entry point.

    gjnsim validate       --spec net.json
    gjnsim simulate       --spec net.json --horizon 100 --out run/
    gjnsim verify-bounds  --spec net.json --replications 100 --horizon 200 --out run/
    gjnsim lemma-tails    --spec net.json --u-grid 1,2,4,8 --out run/
    gjnsim estimate-tail  --spec net.json --regime raw --u-grid 1,2,3 --out run/
    gjnsim sweep          --spec base.json --regime diffusion --r -0.5 --n-grid 25,100,400 ...

Settings come from defaults, then flags, then ``--config FILE`` (JSON), each
layer overriding the previous one. Every run writes ``manifest.json`` listing
the emitted files with their sha256 digests. Exit codes: 0 success,
2 invalid input, 3 invariant violation, 4 I/O error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import LEMMA_KINDS, CapabilityError, SupremumError, lemma_bounds, write_bounds_csv
from .model import SpecError, load_spec, spec_from_dict, validate
from .reflection import build_majorants
from .scaling import (SWEEP_COLUMNS, ScalingRegime, estimate_stationary_tail, make_sequence,
                      tightness_sweep)
from .simulator import (ResourceError, departure_identity_violations, flow_balance_violations,
                        simulate)

log = logging.getLogger("gjnsim")

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("validate", "simulate", "verify-bounds", "lemma-tails", "estimate-tail", "sweep")

DEFAULTS = {
    "spec": None, "out": ".", "seed": 0, "replications": None, "horizon": 100.0,
    "regime": "raw", "n": 1.0, "n_grid": None, "u_grid": None, "bn": None, "r": None,
    "event_cap": None, "warmup_mult": 20.0, "warmup": None, "threads": 1, "station": None,
    "source": None, "which": None, "figures": True,
}
# settings that never change results and are left out of the echoed manifest
_NOT_ECHOED = {"out", "threads", "figures"}


class Violation(Exception):
    pass


def _floats(v):
    if v is None:
        return None
    if isinstance(v, str):
        return [float(x) for x in v.split(",") if x.strip()]
    if isinstance(v, (int, float)):
        return [float(v)]
    return [float(x) for x in v]


def _ints(v):
    f = _floats(v)
    return None if f is None else [int(x) for x in f]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gjnsim", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--spec", help="network JSON file")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="master seed (u64)")
        s.add_argument("--replications", type=int)
        s.add_argument("--horizon", type=float)
        s.add_argument("--regime", choices=["ld", "large_deviation", "diffusion", "moderate", "raw"])
        s.add_argument("--n", type=float, help="scale index for estimate-tail")
        s.add_argument("--n-grid", dest="n_grid")
        s.add_argument("--u-grid", dest="u_grid")
        s.add_argument("--bn", help="pow:GAMMA or logpow:GAMMA")
        s.add_argument("--r", help="comma-separated negative drift vector")
        s.add_argument("--event-cap", dest="event_cap", type=int)
        s.add_argument("--warmup-mult", dest="warmup_mult", type=float)
        s.add_argument("--warmup", type=float, help="explicit warm-up horizon")
        s.add_argument("--threads", type=int)
        s.add_argument("--station", help="station index or comma list")
        s.add_argument("--source", help="source station(s) l for routing/service")
        s.add_argument("--which", help="comma list of arrival,routing,service")
        s.add_argument("--no-figures", dest="figures", action="store_const", const=False)
        s.add_argument("--config", help="JSON file whose keys override flags")
    return p


def resolve_settings(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        unknown = sorted(set(doc) - set(DEFAULTS) - {"command"})
        if unknown:
            raise SpecError([f"unknown config keys: {unknown}"])
        if doc.get("command", args.command) != args.command:
            raise SpecError([f"config is for command {doc['command']!r}, not {args.command!r}"])
        cfg.update({k: v for k, v in doc.items() if k != "command"})
    cfg["command"] = args.command
    return cfg


def _load(cfg):
    spec = cfg["spec"]
    if spec is None:
        raise SpecError(["--spec is required"])
    if isinstance(spec, dict):
        return spec_from_dict(spec), hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()
    data = Path(spec).read_bytes()
    return load_spec(spec), hashlib.sha256(data).hexdigest()


def _echo(cfg, spec_digest) -> dict:
    out = {k: v for k, v in sorted(cfg.items()) if k not in _NOT_ECHOED}
    out["spec_sha256"] = spec_digest
    return out


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _clean(x):
    """Replace non-finite floats by strings so JSON stays standard."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


class Outputs:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name) -> Path:
        self.files.append(name)
        return self.root / name

    def write_json(self, name, obj):
        self.path(name).write_text(_dump(_clean(obj)))

    def finish(self, command, echoed):
        entries = []
        for name in sorted(set(self.files)):
            data = (self.root / name).read_bytes()
            entries.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {"command": command, "manifest": echoed, "outputs": entries, "version": __version__}
        (self.root / "manifest.json").write_text(_dump(_clean(doc)))


# -- commands ------------------------------------------------------------------

def cmd_validate(cfg, out: Outputs):
    spec, _ = _load(cfg)
    drift = validate(spec)
    doc = {"valid": True, "drift": drift.to_dict(), "violating_stations": drift.violating_stations}
    notes = []
    if not drift.subcritical:
        notes.append("network is not subcritical")
    if not drift.strong_drift:
        notes.append(f"strong drift fails at stations {drift.violating_stations}: "
                     "bound verification is unavailable")
    doc["notes"] = notes
    out.write_json("drift.json", doc)
    print(_dump(_clean(doc)), end="")


def cmd_simulate(cfg, out: Outputs):
    spec, _ = _load(cfg)
    validate(spec)
    rep = 0
    traj = simulate(spec, float(cfg["horizon"]), int(cfg["seed"]), rep, event_cap=cfg["event_cap"])
    traj.write_csv(out.path("trajectory.csv"))
    fb = flow_balance_violations(traj)
    di = departure_identity_violations(traj)
    K = spec.K
    T = traj.horizon
    summary = {"events": int(traj.meta["n_events"]), "horizon": T,
               "final_queue": traj.Q[-1].tolist(), "departures": traj.D[-1].tolist(),
               "arrivals": traj.A[-1].tolist(),
               "busy_time": [float(traj.path("B", k).end_value) for k in range(K)],
               "flow_balance_violations": fb, "departure_identity_violations": di}
    out.write_json("summary.json", summary)
    if cfg["figures"]:
        from .report import plot_queue_paths
        plot_queue_paths(traj, out.path("queue_paths.png"))
    if fb or di:
        raise Violation(f"flow balance violations {fb}, departure identity violations {di}")


def cmd_verify_bounds(cfg, out: Outputs):
    spec, _ = _load(cfg)
    drift = validate(spec)
    if not drift.strong_drift:
        raise SpecError([f"drift nu_{k} = {drift.nu[k]:.6g} <= 0 at station {k}"
                         for k in drift.violating_stations])
    R = int(cfg["replications"] or 100)
    T = float(cfg["horizon"])
    stations = _ints(cfg["station"]) or list(range(spec.K))
    rows = []
    total = 0
    for rep in range(R):
        traj = simulate(spec, T, int(cfg["seed"]), rep, event_cap=cfg["event_cap"])
        fb = flow_balance_violations(traj)
        di = departure_identity_violations(traj)
        for k in stations:
            b = build_majorants(traj, drift, k)
            rows.append([rep, k, int(traj.meta["n_events"]), fb, di, b.majorization_violations,
                         b.decomposition_violations, b.identity_residual])
            total += fb + di + b.majorization_violations + b.decomposition_violations
            if rep == 0:
                b.write_csv(out.path(f"majorants_k{k}.csv"))
                if cfg["figures"]:
                    from .report import plot_majorants
                    plot_majorants(b, out.path(f"majorants_k{k}.png"))
    with open(out.path("verification.csv"), "w") as fh:
        fh.write("replicate,station,events,flow_balance,departure_identity,majorization,"
                 "decomposition,identity_residual\n")
        for r in rows:
            fh.write(",".join(str(v) if not isinstance(v, float) else repr(v) for v in r) + "\n")
    worst = max((r[7] for r in rows), default=0.0)
    out.write_json("summary.json", {"replications": R, "stations": stations, "violations": total,
                                    "max_identity_residual": worst})
    if total:
        raise Violation(f"{total} invariant violations across {R} replicates")


def cmd_lemma_tails(cfg, out: Outputs):
    spec, _ = _load(cfg)
    drift = validate(spec)
    stations = _ints(cfg["station"]) or [k for k in range(spec.K) if drift.nu[k] > 0]
    bad = [k for k in stations if not drift.nu[k] > 0]
    if bad:
        raise SpecError([f"drift nu_{k} = {drift.nu[k]:.6g} <= 0 at station {k}" for k in bad])
    whichs = cfg["which"].split(",") if isinstance(cfg["which"], str) else (cfg["which"] or list(LEMMA_KINDS))
    u = _floats(cfg["u_grid"]) or [1.0, 2.0, 4.0, 8.0]
    R = int(cfg["replications"] or 10_000)
    sources = _ints(cfg["source"]) or list(range(spec.K))
    results = []
    seed = int(cfg["seed"])
    for k in stations:
        for which in whichs:
            ls = [None] if which == "arrival" else sources
            for l in ls:
                res = lemma_bounds(spec, k, which, u, l, drift, R, seed)
                res.which = f"{res.which}[k={k}]"
                results.append(res)
                seed += 1
    write_bounds_csv(results, out.path("bounds.csv"))
    dom = {r.which: r.dominated() for r in results}
    out.write_json("summary.json", {"theta_star": {r.which: r.theta_star for r in results},
                                    "domination": dom,
                                    "truncation": {r.which: r.diagnostics["i_max"] for r in results}})
    if cfg["figures"]:
        from .report import plot_bounds
        plot_bounds(results, out.path("bounds.png"))
    fails = [w for w, d in dom.items() if not all(d.values())]
    if fails:
        raise Violation(f"an analytic bound fell below the Monte Carlo estimate: {fails}")


def _regime(cfg) -> ScalingRegime:
    r = _floats(cfg["r"])
    return ScalingRegime(cfg["regime"], tuple(r) if r else None, cfg["bn"])


def _write_tail_csv(path, cells, manifest):
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(_clean(manifest), sort_keys=True) + "\n")
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for c in cells:
            fh.write(",".join(str(v) if isinstance(v, (str, int)) else repr(float(v)) for v in c.row()) + "\n")


def cmd_estimate_tail(cfg, out: Outputs, echoed):
    base, _ = _load(cfg)
    regime = _regime(cfg)
    n = float(cfg["n"])
    spec = make_sequence(base, regime, n)
    u = _floats(cfg["u_grid"]) or [1.0, 2.0, 3.0]
    k = (_ints(cfg["station"]) or [0])[0]
    est = estimate_stationary_tail(spec, regime, u, k, int(cfg["replications"] or 2000),
                                   cfg["warmup"], float(cfg["warmup_mult"]), int(cfg["seed"]), n,
                                   cfg["event_cap"], int(cfg["threads"]))
    _write_tail_csv(out.path("tail.csv"), est, echoed)
    if cfg["figures"]:
        from .report import plot_tail
        plot_tail(est, out.path("tail.png"))


def cmd_sweep(cfg, out: Outputs, echoed):
    base, _ = _load(cfg)
    regime = _regime(cfg)
    n_grid = _floats(cfg["n_grid"])
    u_grid = _floats(cfg["u_grid"])
    if not n_grid or not u_grid:
        raise SpecError(["sweep needs non-empty --n-grid and --u-grid"])
    k = (_ints(cfg["station"]) or [0])[0]
    res = tightness_sweep(base, regime, n_grid, u_grid, k, int(cfg["replications"] or 2000),
                          int(cfg["seed"]), float(cfg["warmup_mult"]), cfg["warmup"],
                          cfg["event_cap"], int(cfg["threads"]))
    res.write_csv(out.path("sweep.csv"), _clean(echoed))
    out.write_json("summary.json", {"limsup_proxy": res.limsup, "trend": res.trend,
                                    "conditions": res.conditions,
                                    "upward_trend_in_n": res.upward_trend_violations(),
                                    "increase_in_u": res.increase_in_u_violations(2.0)})
    if cfg["figures"]:
        from .report import plot_sweep
        plot_sweep(res, out.path("sweep.png"))


def run(cfg: dict) -> int:
    """Execute one resolved configuration; returns the process exit code."""
    command = cfg["command"]
    echoed = None
    try:
        out = Outputs(cfg["out"])
        digest = _load(cfg)[1] if cfg.get("spec") is not None else None
        echoed = _clean(_echo(cfg, digest))
        if command == "validate":
            cmd_validate(cfg, out)
        elif command == "simulate":
            cmd_simulate(cfg, out)
        elif command == "verify-bounds":
            cmd_verify_bounds(cfg, out)
        elif command == "lemma-tails":
            cmd_lemma_tails(cfg, out)
        elif command == "estimate-tail":
            cmd_estimate_tail(cfg, out, echoed)
        elif command == "sweep":
            cmd_sweep(cfg, out, echoed)
        else:
            raise SpecError([f"unknown command {command!r}"])
        out.finish(command, echoed)
        return EXIT_OK
    except (SpecError, SupremumError, CapabilityError, ResourceError) as e:
        errors = getattr(e, "errors", [str(e)])
        print(json.dumps({"valid": False, "errors": errors}, indent=2), file=sys.stdout)
        return EXIT_INVALID
    except Violation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        try:
            out.finish(command, echoed)
        except OSError:
            pass
        return EXIT_VIOLATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_settings(args)
    except SpecError as e:
        print(json.dumps({"valid": False, "errors": e.errors}, indent=2))
        return EXIT_INVALID
    except json.JSONDecodeError as e:
        print(json.dumps({"valid": False, "errors": [f"config is not valid JSON: {e}"]}, indent=2))
        return EXIT_INVALID
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
