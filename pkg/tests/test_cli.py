"""Unit tests for the command-line front end."""

import hashlib
import json

import numpy as np
import pytest

from doslab import measures as M
from doslab.cli import run


@pytest.fixture()
def workdir(tmp_path):
    M.save(M.bernoulli(), tmp_path / "bernoulli.msr")
    M.save(M.point_mass(0.0), tmp_path / "delta0.msr")
    (tmp_path / "chain.model").write_text(
        "geometry = cube\nd = 1\nK = 1\nlambda = 1.0\nmeasure = bernoulli.msr\n")
    return tmp_path


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_constants_subcommand(workdir, capsys):
    out = workdir / "c.csv"
    assert run(["constants", "--d", "1", "--N", "1", "--C", "1",
                "--out", str(out)]) == 0
    text = out.read_text()
    assert "lambda0,0.125\n" in text
    assert "lambda0 = 0.125" in capsys.readouterr().out


def test_constants_json_format(workdir):
    out = workdir / "c.json"
    assert run(["constants", "--d", "3", "--N", "1", "--C", "1", "--k", "3",
                "--format", "json", "--out", str(out)]) == 0
    table = json.loads(out.read_text())
    assert "D_L" in table and "gamma_B" in table


def test_metric_subcommand(workdir, capsys):
    out = workdir / "dw.csv"
    rc = run(["metric", "--a", str(workdir / "bernoulli.msr"),
              "--b", str(workdir / "delta0.msr"), "--out", str(out)])
    assert rc == 0
    assert "0.6666667" in capsys.readouterr().out
    assert "dw,0.66666666666666674" in out.read_text()


def test_closed_form_subcommand(workdir):
    out = workdir / "f.csv"
    assert run(["closed-form", "--what", "kesten-dosf", "--k", "3",
                "--grid=-3:3:7", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "E,value"
    assert len(lines) == 8


def test_dos_ids_pipeline(workdir):
    est = workdir / "hist.csv"
    assert run(["dos", "--model", str(workdir / "chain.model"),
                "--method", "histogram", "--side", "256", "--samples", "3",
                "--bins", "64", "--seed", "5", "--out", str(est)]) == 0
    ids_out = workdir / "ids.csv"
    assert run(["ids", "--estimate", str(est), "--grid=-3:3:13",
                "--out", str(ids_out)]) == 0
    rows = ids_out.read_text().splitlines()
    assert rows[0] == "E,value,stderr"
    first = float(rows[1].split(",")[1])
    last = float(rows[-1].split(",")[1])
    assert first == 0.0 and last == 1.0


def test_dos_moments(workdir):
    est = workdir / "mom.csv"
    assert run(["dos", "--model", str(workdir / "chain.model"),
                "--method", "moments", "--degree", "6", "--samples", "10",
                "--seed", "3", "--out", str(est)]) == 0
    assert est.read_text().startswith("# moments,10,3,3\n")


def test_lyapunov_subcommand(workdir):
    out = workdir / "ly.csv"
    assert run(["lyapunov", "--measure", str(workdir / "delta0.msr"),
                "--re-e", "3", "--steps", "5000", "--seed", "2",
                "--out", str(out)]) == 0
    header, row = out.read_text().splitlines()
    assert header == "re_E,im_E,value,stderr,method,steps"
    value = float(row.split(",")[2])
    assert value == pytest.approx(np.log((3 + np.sqrt(5)) / 2), abs=5e-3)


def test_lyapunov_thouless_route(workdir):
    est = workdir / "hist.csv"
    run(["dos", "--model", str(workdir / "chain.model"), "--method",
         "histogram", "--side", "256", "--samples", "3", "--bins", "64",
         "--seed", "5", "--out", str(est)])
    out = workdir / "th.csv"
    assert run(["lyapunov", "--method", "thouless", "--estimate", str(est),
                "--re-e", "4", "--out", str(out)]) == 0
    assert ",thouless," in out.read_text()


def test_lyapunov_strip_route(workdir):
    (workdir / "strip.model").write_text(
        "geometry = strip\nL = 2\nstrip_matrix_1 = 0.7,0,0,-0.7\n"
        "strip_weight_1 = 1\n")
    out = workdir / "st.csv"
    assert run(["lyapunov", "--method", "strip", "--model",
                str(workdir / "strip.model"), "--re-e", "3.5",
                "--steps", "2000", "--seed", "1", "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "re_E,im_E,value,gamma_1,gamma_2,stderr,method,steps"


def test_verify_subcommand(workdir):
    out = workdir / "rep.json"
    assert run(["verify", "--bound", "finite-rank", "--trials", "20",
                "--seed", "7", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["verdict"] == "pass"
    assert payload["bound_id"] == "finite-rank"


def test_verify_with_overrides(workdir):
    out = workdir / "rep.json"
    assert run(["verify", "--bound", "dosm-main",
                "--scenario", "eta=0.5", "bank=2",
                "--estimator", "degree=24", "samples=10",
                "--seed", "1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["verdict"] == "not-applicable"


def test_determinism_hash_identical(workdir):
    a, b = workdir / "a.csv", workdir / "b.csv"
    argv = ["dos", "--model", str(workdir / "chain.model"), "--method",
            "moments", "--degree", "8", "--samples", "25", "--seed", "11"]
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b)]) == 0
    assert _sha(a) == _sha(b)
    c = workdir / "c.csv"
    assert run(argv[:-2] + ["--seed", "12", "--out", str(c)]) == 0
    assert _sha(c) != _sha(a)


def test_config_file_merging(workdir):
    cfg = workdir / "cfg.conf"
    cfg.write_text("samples = 7\ndegree = 5\n")
    out = workdir / "m.csv"
    assert run(["dos", "--model", str(workdir / "chain.model"),
                "--method", "moments", "--seed", "1", "--config", str(cfg),
                "--out", str(out)]) == 0
    assert out.read_text().startswith("# moments,7,1,3\n")  # config applied
    out2 = workdir / "m2.csv"
    assert run(["dos", "--model", str(workdir / "chain.model"),
                "--method", "moments", "--samples", "9", "--seed", "1",
                "--config", str(cfg), "--out", str(out2)]) == 0
    assert out2.read_text().startswith("# moments,9,1,3\n")  # flag wins


def test_config_unknown_key(workdir):
    cfg = workdir / "cfg.conf"
    cfg.write_text("not_a_flag = 3\n")
    with pytest.raises(SystemExit):
        run(["dos", "--model", str(workdir / "chain.model"), "--seed", "1",
             "--config", str(cfg)])


def test_exit_codes(workdir, capsys):
    assert run(["dos", "--model", str(workdir / "missing.model"),
                "--seed", "1"]) == 1
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run(["dos", "--model", str(workdir / "chain.model")])  # no seed
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run(["nonsense"])
    assert exc.value.code == 2


def test_seed_required_for_stochastic_lyapunov(workdir):
    with pytest.raises(SystemExit):
        run(["lyapunov", "--measure", str(workdir / "delta0.msr"),
             "--re-e", "3", "--steps", "2000"])


def test_help_lists_flags_with_units(capsys):
    for cmd in ("constants", "metric", "closed-form", "dos", "ids",
                "lyapunov", "verify"):
        with pytest.raises(SystemExit) as exc:
            run([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "--" in text
        if cmd in ("dos", "lyapunov", "verify"):
            assert "seed" in text
        if cmd == "closed-form":
            assert "units" in text
