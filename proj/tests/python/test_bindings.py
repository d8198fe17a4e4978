import json

import numpy as np
import pytest

import roughwave as rw


def acoustic_model(tmp_path, cells=100, t_end=0.2, rho=1.0):
    model = {
        "kind": "acoustic",
        "grid": {"dim": 1, "cells": [cells], "extent": 1.0, "dt": 0.5 / cells, "t_end": t_end},
        "rho": rho,
        "kappa": {"axis": 0, "interface": 0.6, "values": [1.0, 2.0]},
        "boundary": "periodic",
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(model))
    return rw.load_model(str(path))


def test_grid():
    g = rw.build_grid(2, [8, 4], [1.0, 0.5], 0.01, 0.1)
    assert g.num_cells == 32
    assert g.n_steps == 10
    assert g.h[0] == pytest.approx(0.125)
    with pytest.raises(ValueError):
        rw.build_grid(1, [1], [1.0], 0.01, 0.1)


def test_skew_operator_is_antisymmetric(tmp_path):
    sys = acoustic_model(tmp_path).system()
    p = sys.skew_matrix()
    dense = np.zeros(p["shape"])
    dense[p["rows"], p["cols"]] = p["values"]
    assert np.abs(dense + dense.T).max() < 1e-14


def test_energy_is_conserved_without_source(tmp_path):
    model = acoustic_model(tmp_path)
    sys = model.system()
    src = rw.point_source(sys.grid, sys.k, [0.4, 0, 0], wavelet="pulse", width=0.1)
    out = rw.solve(sys, src)
    assert out["states"].shape == (sys.grid.n_steps + 1, sys.size)
    e = np.asarray(out["energy"])
    # The pulse has finished by t = 0.1; energy is constant afterwards.
    late = e[np.asarray(out["times"]) > 0.11]
    assert np.ptp(late) <= 1e-10 * late.max()


def test_forward_is_linear_in_the_source(tmp_path):
    sys = acoustic_model(tmp_path).system()
    s = rw.sampler(sys.grid, sys.k, [[0.3, 0, 0], [0.7, 0, 0]])
    f = rw.point_source(sys.grid, sys.k, [0.4, 0, 0], wavelet="pulse")
    g = rw.point_source(sys.grid, sys.k, [0.5, 0, 0], wavelet="ricker", frequency=8.0, onset=0.1)
    (t, a), (_, b), (_, ab) = rw.forward(sys, [f, g, f + g], s, jobs=2)
    assert a.shape == (2, len(t))
    np.testing.assert_allclose(a + b, ab, atol=1e-12 * np.abs(ab).max())


def test_gradient_is_zero_on_exact_data(tmp_path):
    sys = acoustic_model(tmp_path).system()
    s = rw.sampler(sys.grid, sys.k, [[0.7, 0, 0]])
    f = rw.point_source(sys.grid, sys.k, [0.4, 0, 0], wavelet="pulse")
    ((t, d),) = rw.forward(sys, [f], s)
    g = rw.gradient(sys, f, s, t, d)
    assert g["objective"] == 0.0
    assert not np.any(g["g_a"])

    shifted = acoustic_model(tmp_path, rho=1.1).system()
    g = rw.gradient(shifted, f, s, t, d)
    assert g["objective"] > 0.0
    assert np.abs(g["g_a"]).max() > 0.0


def test_cli_passthrough(tmp_path):
    code, out, err = rw.run_cli(["check"])
    assert code == 2
    assert "config" in err
    acoustic_model(tmp_path)
    cfg = tmp_path / "check.json"
    cfg.write_text(json.dumps({"model": "model.json", "output": "out"}))
    code, out, err = rw.run_cli(["check", "--config", str(cfg)])
    assert code == 0, out + err
    assert "PASS  adjoint_dot_product" in out
