"""Smoke test for the wvlab extension module.

Build and install first:
    pip install maturin && maturin develop --release -m crates/python/Cargo.toml
or
    maturin build --release -m crates/python/Cargo.toml && pip install target/wheels/wvlab-*.whl
"""

import json
import math
import tempfile

import wvlab


def close(a, b, tol):
    assert abs(a - b) < tol, f"{a} vs {b} (tol {tol})"


def main():
    grid = wvlab.Grid(-20.0, 20.0, 256)
    assert len(grid) == 256
    psi = wvlab.WaveFunction.gaussian(grid, -2.0, 1.0, 1.5)
    close(psi.norm(), 1.0, 1e-12)

    frames = wvlab.propagate(psi, 1.0, 0.01)
    close(frames[-1].time, 1.0, 1e-12)
    close(frames[-1].norm(), 1.0, 1e-10)

    p = wvlab.Operator.momentum(grid)
    close(p.expectation(psi), 1.5, 1e-10)
    close(p.weak_average(psi), 1.5, 1e-10)

    # the real part of the momentum weak value is the guidance velocity (m = 1)
    for w, v in zip(p.weak_values(psi), wvlab.velocity(psi)):
        if w is not None and v is not None:
            close(w.real, v, 1e-6 * (1 + abs(v)))

    starts = wvlab.sample_positions(psi, 50, 7)
    assert starts == wvlab.sample_positions(psi, 50, 7)
    times, paths = wvlab.trajectories(psi, starts, 1.0, 0.01)
    assert len(paths) == 50 and len(paths[0]) == len(times)
    order = sorted(range(50), key=lambda i: starts[i])
    finals = [paths[i][-1] for i in order]
    assert finals == sorted(finals), "trajectories crossed"

    h = wvlab.Operator.hamiltonian(
        grid, json.dumps({"kind": "harmonic", "omega": 1.0}), truncate=4
    )
    close(h.eigenvalues()[0], 0.5, 1e-8)

    x = wvlab.Operator.position(grid)
    value, stderr, prob = wvlab.weak_measurement(psi, p, x, sigma=0.5, lambda_=1.0, g_a=0.0)
    assert math.isfinite(value) and stderr == 0.0 and 0.0 < prob <= 1.0

    config = {
        "grid": {"x_min": -15, "x_max": 15, "n": 128},
        "initial_state": {"kind": "gaussian", "center": 0, "width": 1, "momentum": 0.5},
        "propagator": {"dt": 0.01},
        "duration": 0.5,
        "task": {"kind": "propagate"},
    }
    text = wvlab.normalize_config(json.dumps(config))
    assert json.loads(text)["task"]["kind"] == "propagate"
    try:
        wvlab.normalize_config(json.dumps({**config, "grdi": {}}))
        raise AssertionError("unknown key accepted")
    except ValueError as e:
        assert "grid" in str(e)
    with tempfile.TemporaryDirectory() as out:
        manifest = json.loads(wvlab.run_scenario(text, out))
        assert "density.csv" in manifest["outputs"]

    passed, measured, target, tol = wvlab.validate_criterion(6)
    assert passed, (measured, target, tol)
    assert not wvlab.validate_criterion(6, tolerance_scale=0.0)[0]
    print("wvlab smoke test passed")


if __name__ == "__main__":
    main()
