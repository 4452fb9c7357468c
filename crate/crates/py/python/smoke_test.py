"""Smoke test for the triad_reduce extension module.

Build and run from the workspace root:

    cargo build --release -p triad-py
    cp target/release/libtriad_reduce.so crates/py/python/triad_reduce.so
    python3 crates/py/python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import triad_reduce as tr


def main():
    c = tr.Coefficients.builtin()
    assert c.n == 10
    assert c.validate(5e-4)["pass"]
    assert c.projected().validate(1e-12)["pass"]

    dx, de = tr.reduced_drift_at(1.0, 10.0)
    assert dx < 0.0
    g = tr.reduced_noise_at(0.5, 10.0)
    assert g[1][0] == 0.0 and g[0][0] == c.sigma
    # E noise is -2x times the x-column W2 amplitude, so dE·dE balances dx·dE
    assert abs(g[1][1] + 2 * 0.5 * g[0][1]) < 1e-15
    assert tr.reduced_drift_at(0.0, 0.0) == (0.0, 0.0)

    y0 = [1.0] * c.n
    run = tr.fast_run(y0, 10.0, dt=1e-3, record_stride=100)
    e = [sum(run[f"y{k}"][i] ** 2 for k in range(1, c.n + 1)) for i in range(len(run["t"]))]
    assert max(abs(v - 10.0) for v in e) < 1e-7, max(e)

    cfg = tr.ExperimentConfig.full(1.0)
    cfg.t_final = 5.0
    cfg.ensemble = 2
    cfg.seed = 3
    trajs = tr.simulate(cfg)
    assert len(trajs) == 2 and set(trajs[0]) == {"t", "x", "E"}
    again = tr.simulate(cfg)
    assert trajs[0]["x"] == again[0]["x"]

    cfg = tr.ExperimentConfig.reduced()
    cfg.dt = 1e-3
    cfg.record_stride = 10
    cfg.t_final = 400.0
    cfg.ensemble = 1
    with tempfile.TemporaryDirectory() as out:
        bundle = tr.simulate_to(cfg, out)
        assert os.path.exists(os.path.join(out, "traj_000.csv"))
    x = next(v for v in bundle["variables"] if v["name"] == "x")
    assert 1.5 < x["variance"] < 3.5, x["variance"]

    xs = trajs[0]["x"]
    cf = tr.correlation_function(xs, 0.01, 0.1)
    assert cf["values"][0] == 1.0

    rho = tr.energy_density([5.0, 25.0, 60.0])
    assert all(v > 0 for v in rho)

    m = tr.estimate_m(t_final=200.0)
    assert m["M"] > 0 and math.isfinite(m["stderr_M"])

    try:
        tr.correlation_function([1.0, 2.0], 0.01, 5.0)
    except ValueError:
        pass
    else:
        raise AssertionError("short series accepted")

    print("smoke test ok: M(T=200) =", round(m["M"], 3))


if __name__ == "__main__":
    main()
