import csv
import io
import json

import pytest

from fpa_pos import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_instance_json(capsys):
    code, out, _ = run(["instance", "--eps", "0.1"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["family"] == "independent" and data["eps"] == 0.1


@pytest.mark.parametrize("eps", ["0.5", "0", "-0.1", "1.5"])
def test_bad_eps_exits_2(eps, capsys):
    code, _, err = run(["instance", "--eps", eps], capsys)
    assert code == 2 and "error" in err


def test_equilibrium_export(capsys):
    code, out, _ = run(["equilibrium", "--eps", "0.05", "--grid", "11"], capsys)
    assert code == 0
    data = json.loads(out)
    assert len(data["b"]) == 11
    assert data["B_H"][0] == 0.25


def test_equilibrium_ode(capsys):
    code, out, _ = run(["equilibrium", "--eps", "0.05", "--grid", "5", "--ode", "--ode-grid", "2000"], capsys)
    assert code == 0
    ode = json.loads(out)["ode"]
    assert ode["sup_err_B_H"] <= 1e-8 and ode["sup_err_B_L"] <= 1e-8


def test_ode_needs_independent(capsys):
    code, _, _ = run(["equilibrium", "--family", "correlated", "--ode"], capsys)
    assert code == 2


def test_plot_data(capsys):
    code, out, _ = run(["equilibrium", "plot-data", "--eps", "0.05", "--grid", "21"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["b", "B_H", "B_L", "phi_L", "v_L", "V_L"]
    assert len(rows) == 21
    assert float(rows[0]["B_H"]) == 0.25 and float(rows[0]["phi_L"]) == 0.0
    assert float(rows[-1]["B_H"]) == 1.0 and float(rows[-1]["B_L"]) == 1.0
    b = [float(r["b"]) for r in rows]
    assert b == sorted(b)


def test_plot_data_correlated_rejected(capsys):
    code, _, _ = run(["equilibrium", "plot-data", "--family", "correlated"], capsys)
    assert code == 2


@pytest.mark.parametrize("grid", ["1", "-3"])
def test_bad_plot_grid(grid, capsys):
    code, _, _ = run(["equilibrium", "plot-data", "--grid", grid], capsys)
    assert code == 2


@pytest.mark.parametrize("grids", ["10", "1,100", "a,b", "10,20,30"])
def test_bad_verify_grids(grids, capsys):
    code, _, _ = run(["verify", "--grids", grids], capsys)
    assert code == 2


def test_verify_bne(capsys):
    code, out, _ = run(["verify", "--eps", "0.1", "--grids", "64,512"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["passed"] and data["max_regret"] <= 1e-6


def test_verify_correlated(capsys):
    code, out, _ = run(["verify", "--family", "correlated", "--grids", "32,256", "--delta", "1e-9"], capsys)
    assert code == 0
    assert json.loads(out)["passed"]


def test_verify_universal(capsys):
    code, out, _ = run(
        ["verify", "--kind", "universal", "--eps", "0.05", "--delta", "0.01", "--grids", "64,512"], capsys
    )
    assert code == 0
    assert set(json.loads(out)["per_rule"]) == {"favor_bidder_at_zero", "favor_lowest_index", "uniform_random"}


def test_verify_failure_exits_1(capsys):
    # zero tolerance: the shaded bids leave positive regret
    code, out, _ = run(["verify", "--kind", "bcce", "--delta", "0.0", "--grids", "4,2", "--samples", "500"], capsys)
    assert code == 1
    assert not json.loads(out)["passed"]


def test_verify_bce(capsys):
    code, out, _ = run(["verify", "--kind", "bce", "--delta", "0.01", "--grids", "4,2", "--samples", "2000"], capsys)
    assert code == 0
    assert json.loads(out)["method"] == "monte_carlo"


def test_unknown_rule(capsys):
    code, _, _ = run(["verify", "--kind", "universal", "--delta", "0.01", "--rules", "coin"], capsys)
    assert code == 2


def test_welfare_csv(capsys):
    code, out, _ = run(["welfare", "table", "--eps", "0.1,0.001"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert float(rows[0]["ratio"]) == pytest.approx(0.880091109724, abs=1e-11)
    assert float(rows[1]["ratio"]) == pytest.approx(0.864810297615, abs=1e-11)


def test_welfare_json_and_bce(capsys):
    code, out, _ = run(["welfare", "table", "--family", "bce", "--eps", "0.1", "--samples", "5000", "--format", "json"], capsys)
    assert code == 0
    assert json.loads(out)[0]["ratio"] == 1.0


def test_welfare_empty_eps(capsys):
    code, _, _ = run(["welfare", "table", "--eps", ""], capsys)
    assert code == 2


def test_reruns_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["welfare", "table", "--eps", "0.1", "--samples", "20000", "--seed", "3"]
    assert cli.main(argv + ["-o", str(a)]) == 0
    assert cli.main(argv + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_output_dir_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    assert cli.main(["instance", "-o", "sub/inst.json"]) == 0
    assert json.loads((tmp_path / "sub" / "inst.json").read_text())["family"] == "independent"


def test_output_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(["instance", "-o", str(blocker / "x.json")], capsys)
    assert code == 2 and "error" in err


def test_config_overrides(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"eps": 0.05, "grid": 7}))
    code, out, _ = run(["--config", str(cfg), "equilibrium"], capsys)
    assert code == 0
    data = json.loads(out)
    assert len(data["b"]) == 7 and data["eps"] == 0.05


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    code, _, _ = run(["--config", str(cfg), "instance"], capsys)
    assert code == 2
    code, _, _ = run(["--config", str(tmp_path / "missing.json"), "instance"], capsys)
    assert code == 2


def test_reproduce_single_claim(capsys):
    code, out, _ = run(["reproduce", "--claim", "pos-correlated", "--format", "csv"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["claim"] == "pos-correlated" and rows[0]["passed"] == "True"


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
