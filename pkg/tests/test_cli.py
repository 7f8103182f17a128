import json

import pytest

from edml.cli import main
from edml.data import read_csv
from edml.model import load_network
from edml.networks import network_path


def test_sample_hide_learn(tmp_path, capsys):
    full, hidden = tmp_path / "full.csv", tmp_path / "hidden.csv"
    assert main(["sample", "--network", "asia", "--n", "200", "--seed", "1", "--out", str(full)]) == 0
    assert main(["hide", "--network", "asia", "--data", str(full), "--percentage", "0.25",
                 "--seed", "2", "--out", str(hidden)]) == 0
    net, _ = load_network(network_path("asia"))
    assert len(read_csv(hidden, net)) == 200
    trace, params = tmp_path / "t.json", tmp_path / "p.json"
    assert main(["learn", "--network", "asia", "--data", str(hidden), "--algorithm", "hybrid",
                 "--max-iter", "20", "--out", str(trace), "--params-out", str(params)]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("hybrid: ")
    doc = json.loads(trace.read_text())
    assert doc["algorithm"] == "hybrid"
    assert str(len(doc["iterations"]) - 1) in printed
    assert "cpts" in json.loads(params.read_text())


def test_bench_and_tables(tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["bench", "--network", "asia", "--n", "64", "--hiding", "0.25", "--replicates", "1",
                 "--clock", "none", "--out", str(out)]) == 0
    assert (out / "table_iterations.csv").exists()
    assert not (out / "table_time.csv").exists()
    capsys.readouterr()
    assert main(["tables", "--results", str(out), "--no-time"]) == 0
    assert "average" in capsys.readouterr().out


def test_missing_network_fails(tmp_path, capsys):
    assert main(["sample", "--network", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.csv")]) == 1
    assert "edml: error:" in capsys.readouterr().err


def test_bad_dataset_reports_file_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("asia,tub\nyes,no\nyes,perhaps\n")
    assert main(["learn", "--network", "asia", "--data", str(bad)]) == 1
    assert "bad.csv:3" in capsys.readouterr().err


def test_invalid_network_rejected(tmp_path, capsys):
    path = tmp_path / "n.json"
    path.write_text(json.dumps({"variables": [{"id": "A", "states": ["a", "b"]}],
                                "parents": {}, "cpts": {"A": [0.7, 0.7]}}))
    assert main(["sample", "--network", str(path), "--out", str(tmp_path / "x.csv")]) == 1
    assert "invalid network" in capsys.readouterr().err


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["learn", "--network", "asia"])
    assert info.value.code != 0


def test_prior_rejected_for_bench(tmp_path, capsys):
    prior = tmp_path / "prior.json"
    prior.write_text('{"exponents": 2}')
    assert main(["bench", "--network", "asia", "--prior", str(prior), "--out", str(tmp_path / "o")]) == 1
    assert "--prior" in capsys.readouterr().err
