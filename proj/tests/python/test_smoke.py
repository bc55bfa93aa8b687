import json

import numpy as np
import pytest

import canard


@pytest.fixture(scope="module")
def model():
    return canard.load_model()


def test_bundled_model(model):
    assert model.name == "purkinje_reduced"
    assert model.dim == 5
    assert model.state_names == ["V", "n", "h", "c", "M"]
    assert model.slow == ["M"]
    spec = json.loads(model.to_json())
    g = {c["name"]: c["g"] for c in spec["currents"]}
    assert g == {"K": 10.0, "Na": 125.0, "L": 2.0, "Ca": 1.0, "M": 0.75}


def test_expression_precedence():
    assert canard.parse_expr("-V^2").eval(3.0) == -9.0
    assert canard.parse_expr("V^2").derivative().eval(3.0) == pytest.approx(6.0)
    with pytest.raises(canard.ConfigError):
        canard.parse_expr("1 +")


def test_jacobian_matches_differences(model):
    rng = np.random.default_rng(3)
    for _ in range(20):
        y = np.concatenate([[rng.uniform(-90, 30)], rng.uniform(0.05, 0.95, 4)])
        jac = model.jacobian(y, -30.0)
        fd = np.empty_like(jac)
        for k in range(5):
            h = 1e-6 * max(1.0, abs(y[k]))
            e = np.zeros(5)
            e[k] = h
            fd[:, k] = (model.rhs(y + e, -30.0) - model.rhs(y - e, -30.0)) / (2 * h)
        assert np.max(np.abs(jac - fd)) <= 1e-5 * max(1.0, np.max(np.abs(jac)))


def test_simulate_shapes(model):
    r = canard.simulate(model, -23.0, t1=200.0, dt=0.5)
    assert r["t"].shape == (401,)
    assert r["y"].shape == (401, 5)
    assert r["apex"].shape[1] == 6
    assert np.all(np.diff(r["apex"][:, 0]) > 0)
    with pytest.raises(canard.ConfigError):
        canard.simulate(model, -23.0, t1=10.0, y0=np.zeros(3))


def test_regimes(model):
    assert canard.classify(model, -22.0, t1=3000.0)["label"] == "quiescent"
    burst = canard.classify(model, -23.0, t1=3000.0)
    assert burst["label"] == "bursting"
    assert burst["isi_range"][1] > burst["isi_range"][0]


def test_blocked_m_current(model):
    blocked = model.with_conductance("M", 0.0)
    assert canard.classify(blocked, -32.94, t1=4000.0)["label"] == "uniform_spiking"


def test_poincare(model):
    s = canard.poincare(model, -32.94, n=500, transient=100)
    assert s["complete"]
    assert s["V"].shape == (500,)
    assert s["attractor"] == "invariant_circle"


def test_torus_location(model):
    loc = canard.locate_torus(model, -33.0, -32.94)
    assert -33.0 < loc["J_TB"] < -32.94
    assert loc["modulus"] == pytest.approx(1.0, abs=1e-4)


def test_command_line(tmp_path):
    code, out, err = canard.run_command(["sweep", "--J-list", "-22,-23", "--t1", "3000", "--out", str(tmp_path)])
    assert code == 0, err
    assert json.loads(out)["labels"] == ["quiescent", "bursting"]
    code, out, _ = canard.run_command(["manifest", str(tmp_path)])
    assert code == 0
    files = {d["file"] for d in json.loads(out)["datasets"]}
    assert "sweep.csv" in files
    code, _, err = canard.run_command(["ablate", "--J", "-32.94", "--block", "nope"])
    assert code == 2
    assert json.loads(err)["error"] == "config"
