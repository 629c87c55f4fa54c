import json

import jsonschema
import numpy as np
import pytest

from alracv.cli import main
from alracv.data import load_libsvm
from alracv.pipeline import REPORT_SCHEMA


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.svm"
    assert main(["gen", "--family", "poisson", "--n", "80", "--d", "20", "--rank", "6",
                 "--tail-std", "0.05", "--seed", "2", "--out", str(path)]) == 0
    return path


def test_gen_writes_loadable_file(data_file):
    ds = load_libsvm(data_file, family="poisson")
    assert ds.N == 80 and ds.D <= 20


def test_fit_json(data_file, tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert main(["fit", "--family", "poisson", "--input", str(data_file), "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["grad_norm"] <= doc["tol"] and len(doc["theta"]) == doc["D"]


def test_acv_report(data_file, tmp_path):
    out = tmp_path / "acv.json"
    sk = tmp_path / "sk.npz"
    args = ["acv", "--family", "poisson", "--input", str(data_file), "--k", "6", "--err", "squared",
            "--policy", "top:2", "--exact-subset", "5", "--output", str(out), "--sketch-out", str(sk), "--serial"]
    assert main(args) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["K"] == 6 and sk.exists()
    out2 = tmp_path / "acv2.json"
    args2 = ["acv", "--family", "poisson", "--input", str(data_file), "--sketch-in", str(sk),
             "--err", "squared", "--policy", "top:2", "--exact-subset", "5", "--output", str(out2), "--serial"]
    assert main(args2) == 0
    assert json.loads(out2.read_text())["points"] == doc["points"]


def test_bounds_and_exact_cv(data_file, capsys):
    assert main(["bounds", "--family", "poisson", "--input", str(data_file), "--k", "auto",
                 "--policy", "tau:0.5", "--err", "squared"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert "ij" in summary
    assert main(["exact-cv", "--family", "poisson", "--input", str(data_file), "--exact-subset", "3",
                 "--err", "squared"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["predictions"]) == 3
    assert doc["extrapolated_seconds"] == pytest.approx(doc["seconds_per_fold"] * 80)


def test_bench_csv(data_file, tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--family", "poisson", "--input", str(data_file), "--k-grid", "2,6",
                 "--baseline", "neumann", "--S-grid", "1:10:5", "--M", "2", "--neumann-scale", "auto",
                 "--exact-subset", "4", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("method,K,S,M")
    assert sum(",neumann" in l or l.startswith("ij_neumann") for l in lines) == 3


@pytest.mark.parametrize(
    "args, code",
    [
        (["acv", "--family", "poisson", "--input", "{data}"], 2),
        (["acv", "--family", "poisson", "--input", "{missing}", "--k", "3"], 4),
        (["acv", "--family", "logistic", "--input", "{data}", "--k", "3"], 4),
        (["bench", "--family", "poisson", "--input", "{data}", "--k-grid", "a:b"], 2),
        (["gen", "--family", "poisson", "--n", "5", "--d", "3", "--rank", "4", "--out", "{tmp}/x.svm"], 2),
        (["acv", "--family", "poisson", "--input", "{lowrank}", "--k", "8"], 3),
        (["acv", "--family", "poisson", "--input", "{data}", "--k", "3", "--policy", "all"], 2),
    ],
)
def test_exit_codes(args, code, data_file, tmp_path):
    lowrank = tmp_path / "lowrank.svm"
    main(["gen", "--family", "poisson", "--n", "40", "--d", "12", "--rank", "3", "--rotate", "--out", str(lowrank)])
    fill = {"data": str(data_file), "missing": str(tmp_path / "nope.svm"), "tmp": str(tmp_path), "lowrank": str(lowrank)}
    assert main([a.format(**fill) for a in args]) == code
