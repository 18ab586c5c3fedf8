import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import lambertw

from flatcyl.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main, parse_grid
from flatcyl.group import COMPLEX, FactorSpec, GroupSpec, serialize_group_config
from flatcyl.invariants import diag_am

from conftest import CONFIGS

A3 = str(CONFIGS / "a3.json")


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def diag_config(tmp_path):
    a = diag_am(0.8, np.exp(0.3j))
    b = diag_am(0.5, np.exp(1.1j))
    spec = GroupSpec((FactorSpec(COMPLEX),) * 2, ((a, b), (b, a)))
    p = tmp_path / "diag.json"
    p.write_text(serialize_group_config(spec))
    return p


def synthetic_census(path, angles):
    """A census CSV whose psi-counts are floor(e^T / T) exactly for T >= 1."""
    n = np.arange(3, int(np.exp(14.2) / 14.2) + 1, dtype=float)
    ell = np.concatenate([[1.0, 1.0], np.real(-lambertw(-1 / n, -1))])
    th = angles(len(ell))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["word", "length", "lambda_0", "lambda_1", "ell_psi", "hol_0", "hol_1"])
        for v, (t0, t1) in zip(ell, th):
            w.writerow(["0:1", int(v) + 1] + [repr(float(x)) for x in (v / 2, v / 2, v, t0, t1)])


def test_census_small(tmp_path):
    out = tmp_path / "c.csv"
    assert run("census", "--config", A3, "-L", 1, "--out", out) == EXIT_OK
    rows = out.read_text().splitlines()
    assert len(rows) == 5 and rows[0].startswith("word,length,lambda_0,lambda_1,ell_psi,hol_0,hol_1")
    man = json.loads((tmp_path / "c.csv.manifest.json").read_text())
    assert man["command"] == "census" and man["parameters"]["rows"] == 4 and "wall_clock_seconds" in man


def test_census_deterministic_and_shard_independent(tmp_path):
    outs = []
    for i, shards in enumerate([1, 1, 3]):
        out = tmp_path / f"c{i}.csv"
        assert run("census", "--config", A3, "-L", 6, "--shards", shards, "--norm", '{"kind": "lp", "p": 2}', "--out", out) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert sorted(outs[0].splitlines()) == sorted(outs[2].splitlines())


def test_census_errors_leave_no_files(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"factors": [{"kind": "real-special-linear"}], "generators": [[[[2,0],[0,1]]], [[[1,0],[0,1]]]]}')
    out = tmp_path / "c.csv"
    assert run("census", "--config", bad, "-L", 2, "--out", out) == EXIT_CONFIG
    assert "determinant" in capsys.readouterr().err
    assert run("census", "--config", A3, "-L", 2, "--psi", "[1, 2]", "--out", out) == EXIT_CONFIG
    assert run("census", "--config", A3, "-L", 0, "--out", out) == EXIT_CONFIG
    assert list(tmp_path.iterdir()) == [bad]


def test_overflow_is_numeric_error(tmp_path):
    big = diag_am(200.0, 1.0)
    spec = GroupSpec((FactorSpec(COMPLEX),), ((big,), (big,)))
    cfg = tmp_path / "big.json"
    cfg.write_text(serialize_group_config(spec))
    assert run("census", "--config", cfg, "-L", 5, "--out", tmp_path / "o.csv") == EXIT_NUMERIC
    assert not (tmp_path / "o.csv").exists()


def test_verify_empty_checks(tmp_path):
    out = tmp_path / "c.csv"
    run("census", "--config", A3, "-L", 4, "--out", out)
    rep = tmp_path / "r.json"
    assert run("verify", "--config", A3, "--census", out, "--out", rep) == EXIT_OK
    doc = json.loads(rep.read_text())
    assert doc["checks"] == {} and doc["passed"]


def test_verify_synthetic_passes(tmp_path):
    rng = np.random.default_rng(0)
    census = tmp_path / "syn.csv"
    synthetic_census(census, lambda n: rng.uniform(0, 2 * np.pi, size=(n, 2)))
    rep = tmp_path / "r.json"
    code = run("verify", "--config", A3, "--census", census, "--checks", "counting,holonomy,windows", "--out", rep)
    doc = json.loads(rep.read_text())
    assert code == EXIT_OK, doc["checks"]
    assert doc["checks"]["counting"]["delta_fit"] == pytest.approx(1.0, abs=0.02)
    for key in ("ordering", "grid", "counts", "delta_fit", "ratios"):
        assert key in doc["checks"]["counting"]
    assert {"ks", "discrepancy"} <= set(doc["checks"]["holonomy"])


def test_verify_degenerate_angles_fail(tmp_path):
    census = tmp_path / "deg.csv"
    synthetic_census(census, lambda n: np.full((n, 2), 0.7))
    rep = tmp_path / "r.json"
    assert run("verify", "--config", A3, "--census", census, "--checks", "holonomy", "--out", rep) == EXIT_CHECK
    doc = json.loads(rep.read_text())
    assert doc["checks"]["holonomy"]["discrepancy"] > 0.99 and not doc["passed"]


def test_verify_missing_column(tmp_path, capsys):
    census = tmp_path / "c.csv"
    census.write_text("word,length,lambda_0,lambda_1,ell_psi\n0:1,1,1.0,1.0,2.0\n")
    assert run("verify", "--config", A3, "--census", census, "--checks", "holonomy") == EXIT_CONFIG
    assert "hol_0" in capsys.readouterr().err
    assert run("verify", "--config", A3, "--census", census, "--checks", "norm-order") == EXIT_CONFIG
    assert run("verify", "--config", A3, "--census", census, "--checks", "bogus") == EXIT_CONFIG


def test_verify_norm_order(tmp_path):
    out = tmp_path / "c.csv"
    # the default psi is the sum of simple roots, 2 (t_1 + t_2); this norm is psi / 2
    norm = '{"name": "half", "kind": "linear", "coefficients": [0.5, -0.5, 0.5, -0.5], "comparison": 2.0}'
    assert run("census", "--config", A3, "-L", 9, "--norm", norm, "--out", out) == 0
    rep = tmp_path / "r.json"
    assert run("verify", "--config", A3, "--census", out, "--checks", "norm-order", "--norm", norm, "--out", rep) == 0
    assert json.loads(rep.read_text())["checks"]["norm-order"]["half"]["passed"]
    wrong = norm.replace("2.0", "1.5")
    assert run("verify", "--config", A3, "--census", out, "--checks", "norm-order", "--norm", wrong, "--out", rep) == EXIT_CHECK


def test_closing_zero_perturbation(diag_config, tmp_path):
    rep = tmp_path / "k.json"
    assert run("closing", "--config", diag_config, "--word", "a", "--eps", "0.01", "--trials", 1,
               "--spread", 0, "--out", rep) == EXIT_OK
    doc = json.loads(rep.read_text())
    (trial,) = doc["per_trial"]
    assert trial["dist_a"] == 0 and trial["dist_m"] == 0 and trial["box_displacement"] == 0


def test_closing_report_and_determinism(tmp_path):
    texts = []
    for i in range(2):
        rep = tmp_path / f"k{i}.json"
        assert run("closing", "--config", A3, "--word", "a b'", "--eps", "0.04,0.02,0.01", "--grid", "4:12:4",
                   "--trials", 8, "--seed", 5, "--out", rep) == EXIT_OK
        texts.append(rep.read_bytes())
    assert texts[0] == texts[1]
    doc = json.loads(texts[0])
    assert doc["fits"]["r2"] > 0.9
    assert set(doc) >= {"gamma_word", "epsilon", "T_grid", "per_trial", "fits"}


def test_closing_non_loxodromic(tmp_path, capsys):
    rot = np.array([[np.cos(0.4), -np.sin(0.4)], [np.sin(0.4), np.cos(0.4)]], dtype=complex)
    spec = GroupSpec((FactorSpec(COMPLEX),), ((rot,), (diag_am(1.0, 1.0),)))
    cfg = tmp_path / "rot.json"
    cfg.write_text(serialize_group_config(spec))
    assert run("closing", "--config", cfg, "--word", "a", "--trials", 1) == EXIT_CONFIG
    assert "loxodromic" in capsys.readouterr().err


def test_parse_grid():
    assert np.allclose(parse_grid("5:15:5"), [5, 10, 15])
    with pytest.raises(ValueError):
        parse_grid("5:1:1")


def test_console_script(tmp_path):
    out = tmp_path / "c.csv"
    res = subprocess.run([sys.executable, "-m", "flatcyl.cli", "census", "--config", A3, "-L", "2", "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and len(out.read_text().splitlines()) == 1 + 4 + 4
