import numpy as np

from gjnsim.model import solve_traffic
from gjnsim.reflection import build_majorants
from gjnsim.report import plot_majorants, plot_queue_paths, plot_tail
from gjnsim.scaling import estimate_stationary_tail
from gjnsim.simulator import simulate


def test_figures_are_deterministic(tmp_path, mm1):
    tr = simulate(mm1, 100.0, master_seed=1)
    b = build_majorants(tr, solve_traffic(mm1), 0)
    est = estimate_stationary_tail(mm1, "raw", [1.0, 2.0], replications=200)
    out = []
    for tag in "ab":
        paths = [tmp_path / f"{tag}{i}.png" for i in range(3)]
        plot_queue_paths(tr, paths[0])
        plot_majorants(b, paths[1])
        plot_tail(est, paths[2])
        out.append([p.read_bytes() for p in paths])
    assert out[0] == out[1]
    assert all(x[:8] == b"\x89PNG\r\n\x1a\n" for x in out[0])
    assert all(b"Software" not in x for x in out[0])
