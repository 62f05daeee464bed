import json
import math
import os
import subprocess

import numpy as np
import pytest

carlab = pytest.importorskip("carlab")


def test_synth_counts():
    ds = carlab.synth(k=10, n_max=500, imbalance_factor=100, seed=0)
    assert ds["class_counts"][0] == 500
    assert ds["class_counts"][-1] == 5
    assert ds["features"].shape == (sum(ds["class_counts"]), 2)
    assert carlab.longtail_counts(10, 500, 100) == ds["class_counts"]


def test_power_iteration_matches_oracle():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((12, 12))
    t = carlab.power_iteration(a, 5000, 1e-14)
    assert t["converged"]
    assert abs(t["sigma"] - np.linalg.svd(a, compute_uv=False)[0]) <= 1e-9 * t["sigma"]
    assert abs(carlab.svd_oracle(a)[0] - t["sigma"]) <= 1e-9 * t["sigma"]


def test_spectral_norm_grad_is_rank_one():
    sigma, grad = carlab.spectral_norm_grad(np.diag([3.0, 1.0, 0.5]))
    assert sigma == pytest.approx(3.0)
    assert abs(grad[0, 0]) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.matrix_rank(grad) == 1


def test_soft_confusion_saturates():
    logits = np.array([[50.0, 0.0, -40.0], [0.0, 60.0, 20.0], [-30.0, 25.0, 0.0]])
    labels = [0, 2, 2]
    soft = carlab.soft_confusion(logits, labels, 0.1, 3)
    hard = carlab.hard_margin_confusion(logits, labels, 0.1, 3)
    assert np.max(np.abs(soft - hard)) <= 1e-6
    assert hard[1, 2] == 1.0
    assert hard[0, 0] == 0.0


def test_metrics_identities():
    lambdas = carlab.class_weights([50, 10, 2], 0.2)
    r = carlab.evaluate_predictions([0, 1, 1, 2, 0, 2], [0, 0, 1, 1, 2, 2], 3, lambdas)
    assert r["overall_accuracy"] == pytest.approx(0.5)
    per_class = [lam * e for lam, e in zip(lambdas, r["per_class_error"])]
    assert r["wce"] == pytest.approx(max(per_class), rel=1e-12)


def test_psi_and_complexity():
    assert carlab.psi_identity_network(3, 4) == pytest.approx(27 * 16 * math.log(12), rel=1e-12)
    a = carlab.complexity_term(10, 100, 0.1, 0.05, 2.0, 3)
    b = carlab.complexity_term(10, 200, 0.1, 0.05, 2.0, 3)
    assert b < a
    with pytest.raises(carlab.CarError):
        carlab.complexity_term(10, 80, 0.1, 0.05, 2.0, 3)


def tiny_spec(out):
    return {
        "dataset": {"kind": "synthetic", "k": 3, "n_max": 40, "imbalance_factor": 2,
                    "cluster_spread": 0.2, "test_per_class": 10},
        "model": {"n": 2, "h": 16},
        "train": {"learning_rate": 0.01, "epochs": 30, "batch_size": 16},
        "output": str(out),
    }


def test_run_experiment(tmp_path):
    s = carlab.run_experiment(tiny_spec(tmp_path))
    assert s["regularizer_enabled"] is True
    assert s["train"]["overall_accuracy"] >= 0.95
    assert s == carlab.run_experiment(tiny_spec(tmp_path))


def test_in_process_cli(tmp_path):
    code, _, err = carlab.main(["--quiet", "--out", str(tmp_path), "synth", "--if", "0.5"])
    assert code == 2
    assert "--if" in err
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(tiny_spec(tmp_path / "run")))
    code, _, err = carlab.main(["--quiet", "train", str(spec)])
    assert code == 0, err
    ds = carlab.synth(k=3, n_max=40, imbalance_factor=2, cluster_spread=0.2)
    r = carlab.evaluate_model(tmp_path / "run" / "checkpoint.carm", ds["features"], ds["labels"], 3)
    assert 0.0 <= r["overall_accuracy"] <= 1.0


@pytest.mark.skipif("CAR_BINARY" not in os.environ, reason="car binary location not provided")
def test_binary_synth_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        subprocess.run([os.environ["CAR_BINARY"], "--quiet", "--seed", "4", "--out", str(d),
                        "synth", "--k", "5", "--n-max", "60", "--if", "10"], check=True)
        outs.append((d / "dataset.csv").read_bytes())
    assert outs[0] == outs[1]
    bad = subprocess.run([os.environ["CAR_BINARY"], "bound", str(tmp_path / "x.carm"),
                          str(tmp_path / "a" / "dataset.csv")], capture_output=True)
    assert bad.returncode == 3
