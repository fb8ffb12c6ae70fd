import json
import math

import numpy as np
import pytest

from qrestore import cli
from qrestore.hilbert import random_pure_state
from qrestore.povm import PovmSpec, trine_povm


def run_json(argv, capsys):
    code = cli.main(argv + ["--format", "json"])
    return code, json.loads(capsys.readouterr().out)


def strip_time(text):
    doc = json.loads(text)
    doc.pop("timestamp")
    return json.dumps(doc, sort_keys=True)


def test_restore_trivial_dims(capsys):
    code, rec = run_json(["restore", "--dims", "1x1", "--trials", "50", "--threads", "1"], capsys)
    assert code == 0
    assert rec["aggregate"]["iterations"]["mean"] == 1.0
    assert set(rec) == {"command", "config", "build", "timestamp", "trials", "aggregate"}


def test_restore_bell(capsys):
    code, rec = run_json(["restore", "--bell", "--trials", "20000", "--seed", "3", "--threads", "1"], capsys)
    agg = rec["aggregate"]
    assert code == 0
    assert agg["expected_analytic"] == 4.0
    assert abs(agg["iterations"]["mean"] - 4) < 3 * agg["iterations"]["stderr"]


def test_aggregates_recomputable(capsys):
    _, rec = run_json(["restore", "--dims", "2x3", "--trials", "500", "--seed", "1", "--threads", "1"], capsys)
    iters = [t["iterations"] for t in rec["trials"]]
    assert rec["aggregate"]["iterations"] == cli.summarize(iters)
    assert rec["aggregate"]["iterations"]["mean"] == float(np.mean(np.asarray(iters, dtype=float)))


def test_restore_state_file(tmp_path, capsys):
    path = tmp_path / "s.json"
    random_pure_state(2, 2, 5).dump(path)
    code, rec = run_json(["restore", "--state-file", str(path), "--trials", "100", "--threads", "1"], capsys)
    assert code == 0 and rec["aggregate"]["expected_analytic"] == 4.0


def test_cap_failures_exit_three(capsys):
    code, rec = run_json(["restore", "--figure1", "--trials", "200", "--max-iters", "3", "--threads", "1"], capsys)
    assert code == cli.EXIT_CAP
    assert rec["aggregate"]["cap_failures"] > 0


@pytest.mark.parametrize(
    "argv",
    [
        ["restore", "--dims", "2y2"],
        ["restore", "--dims", "0x2"],
        ["restore", "--trials", "0"],
        ["restore", "--seed", "-1"],
        ["tomography", "--delta", "1.5"],
        ["tomography", "--epsilon", "0"],
        ["tomography", "--method", "xyz"],
        ["povm", "--povm-file", "/nonexistent.json"],
        ["money-attack", "--qubits", "0"],
    ],
)
def test_config_errors_exit_two(argv, capsys):
    assert cli.main(argv) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_invalid_povm_file(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dim": 1, "operators": [[[0.5, 0]]]}))
    assert cli.main(["povm", "--povm-file", str(path)]) == cli.EXIT_CONFIG
    assert "worst violation" in capsys.readouterr().err


def test_fig1_csv(capsys):
    assert cli.main(["fig1", "--k-max", "4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "k,conditional_success,sigma_trace"
    assert lines[1].startswith("1,0.0980002")


def test_fig1_uniform_control(capsys):
    _, rec = run_json(["fig1", "--uniform", "--k-max", "50"], capsys)
    assert all(abs(t["conditional_success"] - 1 / 30) < 1e-14 for t in rec["trials"])


def test_tomography_table(capsys):
    code = cli.main(["tomography", "--dims", "2x2,3x1", "--trials", "3", "--threads", "1", "--format", "csv"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0
    assert lines[0].split(",")[:5] == ["method", "dims", "d", "delta", "epsilon"]
    assert len(lines) == 1 + 2 * 3


def test_tomography_single_outcome_exact(capsys):
    _, rec = run_json(["tomography", "--dims", "3x1", "--trials", "2", "--threads", "1"], capsys)
    assert all(t["max_error"] == 0.0 for t in rec["trials"])


def test_tomography_sweep_values(capsys):
    _, rec = run_json(
        ["tomography", "--bell", "--method", "ap", "--delta", "0.1,0.2", "--epsilon", "0.05,0.1", "--trials", "2", "--threads", "1"],
        capsys,
    )
    assert [(r["delta"], r["epsilon"]) for r in rec["aggregate"]["table"]] == [(0.1, 0.05), (0.1, 0.1), (0.2, 0.05), (0.2, 0.1)]


def test_povm_trine(tmp_path, capsys):
    path = tmp_path / "trine.json"
    trine_povm().dump(path)
    code, rec = run_json(["povm", "--povm-file", str(path), "--trials", "5", "--threads", "1"], capsys)
    assert code == 0
    assert rec["aggregate"]["failure_rate"] == 0.0
    assert rec["aggregate"]["min_fidelity"] >= 1 - 1e-10


def test_povm_identity_exact(tmp_path, capsys):
    path = tmp_path / "id.json"
    PovmSpec((np.eye(2),)).dump(path)
    _, rec = run_json(["povm", "--povm-file", str(path), "--trials", "2", "--threads", "1"], capsys)
    assert all(t["estimates"] == [1.0] for t in rec["trials"])


def test_money_attack(capsys):
    code, rec = run_json(["money-attack", "--qubits", "6", "--trials", "5", "--threads", "1"], capsys)
    assert code == 0
    assert {"mean_calls", "per_qubit_calls_histogram", "fidelities"} <= set(rec)
    assert all(abs(f - 1) < 1e-10 for f in rec["fidelities"])
    assert sum(rec["per_qubit_calls_histogram"].values()) == 30


def test_out_file(tmp_path):
    out = tmp_path / "r.json"
    assert cli.main(["restore", "--bell", "--trials", "10", "--threads", "1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["command"] == "restore"


@pytest.mark.parametrize(
    "argv",
    [
        ["restore", "--bell", "--trials", str(cli.RESTORE_BLOCK + 500), "--seed", "11"],
        ["tomography", "--dims", "2x2", "--trials", "3", "--seed", "5"],
        ["money-attack", "--qubits", "4", "--trials", "4", "--seed", "2"],
    ],
)
def test_records_independent_of_threads(argv, tmp_path):
    texts = []
    for threads in ("1", "2"):
        out = tmp_path / f"t{threads}.json"
        assert cli.main(argv + ["--threads", threads, "--out", str(out)]) == 0
        texts.append(strip_time(out.read_text()))
    assert texts[0] == texts[1]


def test_same_seed_same_record(tmp_path):
    texts = []
    for k in range(2):
        out = tmp_path / f"{k}.json"
        cli.main(["restore", "--dims", "3x3", "--trials", "300", "--seed", "9", "--threads", "1", "--out", str(out)])
        texts.append(strip_time(out.read_text()))
    assert texts[0] == texts[1]


def test_expected_cost_formulas():
    from qrestore.hilbert import bell_state
    from qrestore.tomography import Method

    bell = bell_state()
    assert cli.expected_cost(Method.SR, bell, 0.1, 0.05) == 4 * 220
    assert cli.expected_cost(Method.AP, bell, 0.1, 0.05) == 2 * 2 * 111
    assert cli.expected_cost(Method.PE, bell, 0.1, 0.05) == 2 * 2 * 21 * (2**9 + 1)


def test_summarize():
    s = cli.summarize([1, 2, 3])
    assert s == {"n": 3, "mean": 2.0, "std": 1.0, "stderr": 1 / math.sqrt(3)}
