import json

import pytest

from spinlab.cli import EXIT_CONFIG, EXIT_OK, EXIT_TOLERANCE, compare, run
from spinlab.hj import psi1_scalar
from spinlab.model import bipartite_model, sk_model


def read(path):
    return json.loads(path.read_text())


def test_unknown_flag_exits_two(capsys):
    assert run(["mc", "quenched", "--N", "4", "--bogus"]) == EXIT_CONFIG
    assert "usage" in capsys.readouterr().err
    assert run(["nosuchcommand"]) == EXIT_CONFIG


def test_config_errors_exit_two(tmp_path):
    assert run(["mc", "quenched", "--N", "4", "--model", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert run(["mc", "quenched", "--N", "4", "--beta", "0.3", "--t", "0.1"]) == EXIT_CONFIG


def test_quenched_at_zero_temperature_parameter(tmp_path):
    out = tmp_path / "q.json"
    assert run(["mc", "quenched", "--beta", "0", "--N", "6", "--samples", "20", "--out", str(out)]) == EXIT_OK
    rec = read(out)
    assert rec["mean"] == 0.0 and rec["std_error"] == 0.0
    meta = read(tmp_path / "q.json.meta.json")
    assert meta["seed"] == 0 and meta["version"] and meta["params"]["N"] == 6


def test_replay_is_bit_identical(tmp_path):
    out = tmp_path / "sweep.csv"
    assert run(["mc", "enriched", "--t", "0.1", "--h", "0.2", "--N", "6", "--samples", "10",
                "--seed", "4", "--out", str(out)]) == EXIT_OK
    first = out.read_bytes()
    out.unlink()
    assert run(["replay", str(tmp_path / "sweep.csv.meta.json")]) == EXIT_OK
    assert out.read_bytes() == first


def test_hj_and_parisi_artifacts(tmp_path):
    out = tmp_path / "field.csv"
    assert run(["hj", "scalar", "--t-max", "0.1", "--h-max", "1", "--dh", "0.05", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["t", "h"] and len(lines) > 20
    path = tmp_path / "path.json"
    path.write_text(json.dumps({"mesh": [0, 1], "values": [0.5]}))
    p1 = tmp_path / "psi.json"
    assert run(["hj", "psi1", "--path", str(path), "--out", str(p1)]) == EXIT_OK
    assert read(p1)["psi1"] == pytest.approx(psi1_scalar(0.5), abs=1e-6)
    pj = tmp_path / "parisi.json"
    assert run(["parisi", "solve", "--beta", "0.7", "--measure", '{"atoms": [0.0], "weights": [1.0]}',
                "--out", str(pj)]) == EXIT_OK
    assert read(pj)["value"] == pytest.approx(0.245, abs=1e-8)


def test_strict_mode_exit_three(tmp_path):
    argv = ["compare", "--beta", "0.3", "--Ns", "6", "8", "--samples", "20", "--K", "1", "--M", "16",
            "--restarts", "0", "--tol-enum", "1e-12", "--out", str(tmp_path / "c.json")]
    assert run(argv) == EXIT_OK
    assert run(argv + ["--strict"]) == EXIT_TOLERANCE
    meta = read(tmp_path / "c.json.meta.json")
    assert meta["checks"]["enumeration_agree"] is False


def test_compare_beta_zero():
    rep = compare(sk_model(), beta=0.0, Ns=(4, 6), samples=5, K=2, M=16, restarts=0)
    assert set(rep.values) >= {"enumeration", "parisi", "uninverted", "hopf_lax", "hj_scheme"}
    for k, v in rep.values.items():
        assert v == 0.0, k
    assert all(rep.checks.values())


def test_compare_bipartite_gating():
    rep = compare(bipartite_model(), t=0.05, Ns=(8,), samples=10, restarts=0)
    assert "parisi: not applicable (multi-species model)" in rep.notes
    assert "uninverted: not applicable (multi-species model)" in rep.notes
    assert "parisi" not in rep.values and "hj_below_mc" in rep.checks
    assert rep.dictionary["values_convention"] == "enriched"


def test_compare_replica_symmetric_point():
    rep = compare(sk_model(), beta=0.3, Ns=(8, 12, 16), samples=200, restarts=1)
    for k in ("parisi", "uninverted", "hopf_lax"):
        assert abs(rep.values[k] - 0.045) <= 1e-3
    assert abs(rep.values["hj_scheme"] - 0.045) <= 1e-2
    assert abs(rep.values["enumeration"] - 0.045) <= 2e-2
    assert all(rep.checks.values())
    assert rep.dictionary["t"] == pytest.approx(0.045)
