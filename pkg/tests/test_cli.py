import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from uncvol.cli import ConfigError, main, parse_config
from uncvol.closed_form import bs_call

BASE = {
    "schema_version": 1,
    "market": {"rate": 0.05, "sigma_low": 0.1, "sigma_high": 0.3, "spot": 100.0, "horizon": 1.0},
    "payoff": {"kind": "call", "strike": 100.0},
    "mc": {"n_paths": 2000, "n_steps": 64, "seed": 1},
}


def config(tmp_path, **overrides):
    doc = json.loads(json.dumps(BASE))
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict) and key != "payoff":
            doc[key].update(value)
        else:
            doc[key] = value
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_price_call(tmp_path, capsys):
    code, out, _ = run(capsys, "price", "--config", config(tmp_path))
    assert code == 0
    d = json.loads(out)
    assert d["h_low"] == pytest.approx(bs_call(100, 100, 0.05, 0.1, 1).price, rel=1e-3)
    assert d["h_up"] == pytest.approx(bs_call(100, 100, 0.05, 0.3, 1).price, rel=1e-3)
    assert d["convexity"] == "convex" and d["collapsed"] is False


def test_price_forward_collapses(tmp_path, capsys):
    code, out, _ = run(capsys, "price", "--config", config(tmp_path, payoff={"kind": "forward", "strike": 100.0}))
    d = json.loads(out)
    assert code == 0 and d["collapsed"] is True and d["convexity"] == "linear"


def test_price_degenerate_band(tmp_path, capsys):
    cfg = config(tmp_path, market={"sigma_low": 0.2, "sigma_high": 0.2})
    d = json.loads(run(capsys, "price", "--config", cfg)[1])
    assert d["h_low"] == d["h_up"]
    assert d["h_up"] == pytest.approx(bs_call(100, 100, 0.05, 0.2, 1).price, rel=5e-4)


def test_price_round_trip_and_determinism(tmp_path, capsys):
    cfg = config(tmp_path)
    _, a, _ = run(capsys, "price", "--config", cfg)
    _, b, _ = run(capsys, "price", "--config", cfg)
    assert a == b
    d = json.loads(a)
    assert json.dumps(d, indent=2) + "\n" == a
    _, c, _ = run(capsys, "price", "--config", cfg, "--format", "csv")
    (row,) = rows(c)
    assert float(row["h_up"]) == d["h_up"] and float(row["h_low"]) == d["h_low"]


def test_surface_csv_controls(tmp_path, capsys):
    code, out, _ = run(capsys, "surface", "--config", config(tmp_path, grid={"n_space": 101, "n_time": 40}),
                       "--format", "csv")
    r = rows(out)
    assert code == 0 and len(r) == 101 * 41
    assert {float(x["control"]) for x in r} == {0.3}
    spread = config(tmp_path, payoff={"kind": "bull_spread", "k_low": 90.0, "k_high": 110.0})
    r = rows(run(capsys, "surface", "--config", spread, "--format", "csv")[1])
    assert {float(x["control"]) for x in r} == {0.1, 0.3}
    fwd = config(tmp_path, payoff={"kind": "forward", "strike": 100.0})
    r = rows(run(capsys, "surface", "--config", fwd, "--format", "csv")[1])
    dollar_gamma = np.array([float(x["gamma"]) * float(x["x"]) ** 2 for x in r])
    assert np.max(np.abs(dollar_gamma)) < 1e-6


def test_surface_json_and_lower_bound(tmp_path, capsys):
    cfg = config(tmp_path, grid={"n_space": 41, "n_time": 8})
    d = json.loads(run(capsys, "surface", "--config", cfg)[1])
    assert len(d["u"]) == 9 and len(d["u"][0]) == 41
    low = json.loads(run(capsys, "surface", "--config", cfg, "--bound", "lower")[1])
    assert low["u"][-1][-1] == -max(d["x"][-1] - 100.0, 0.0)


def test_simulate(tmp_path, capsys):
    cfg = config(tmp_path, payoff={"kind": "bull_spread", "k_low": 90.0, "k_high": 110.0},
                 mc={"n_paths": 20000, "n_steps": 128,
                     "controls": [{"kind": "constant", "sigma": 0.1}, {"kind": "constant", "sigma": 0.3}]})
    code, out, _ = run(capsys, "simulate", "--config", cfg)
    d = json.loads(out)
    assert code == 0 and not d["violations"]
    assert d["maximizer"].startswith("feedback")
    assert d["feedback"]["within_tolerance"]
    assert d["static_family_best"]["control"] == "constant(sigma=0.1)"
    assert all(q["ok"] for q in d["qv"])
    _, out2, _ = run(capsys, "simulate", "--config", cfg)
    assert out == out2
    _, out3, _ = run(capsys, "simulate", "--config", cfg, "--seed", "2")
    assert out3 != out


def test_hedge(tmp_path, capsys):
    cfg = config(tmp_path, mc={"controls": [{"kind": "constant", "sigma": 0.1}, {"kind": "random_steps", "count": 2},
                                            {"kind": "feedback"}]})
    code, out, _ = run(capsys, "hedge", "--config", cfg)
    d = json.loads(out)
    assert code == 0 and len(d["reports"]) == 4 and d["tol"] > 0
    assert all(r["consumption_min_increment"] >= -d["tol"] for r in d["reports"])


def test_hedge_reports_violation(tmp_path, capsys):
    cfg = config(tmp_path, hedge={"tol": 1e-9})
    assert run(capsys, "hedge", "--config", cfg)[0] == 4


def test_arbitrage_refuses_inside_quote(tmp_path, capsys):
    code, _, err = run(capsys, "arbitrage", "--config", config(tmp_path), "--quote", "10", "--side", "above_hup")
    assert code == 2 and "no arbitrage" in err


def test_arbitrage_outside_quote(tmp_path, capsys):
    cfg = config(tmp_path, grid={"n_time": 1024}, mc={"n_paths": 500, "n_steps": 4096})
    code, out, _ = run(capsys, "arbitrage", "--config", cfg, "--quote", "16", "--side", "above_hup")
    d = json.loads(out)
    assert code == 0 and d["banked"] > 1.7
    assert all(o["min_wealth"] > 0 for o in d["outcomes"])


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = config(tmp_path, payoff={"kind": "bull_spread", "k_low": 90.0, "k_high": 110.0},
                 solver={"max_policy_iters": 1})
    code, _, err = run(capsys, "price", "--config", cfg)
    assert code == 3 and "did not converge" in err


@pytest.mark.parametrize("bad", [
    {"schema_version": 2},
    {"extra": 1},
    {"market": {"sigma_low": 0.5}},
    {"market": {"volatility": 0.2}},
    {"payoff": {"kind": "digital", "strike": 1}},
    {"payoff": {"kind": "call", "strike": 100, "notional": 1}},
    {"grid": {"n_space": 4}},
    {"grid": {"dx": 1}},
    {"solver": {"scheme": "explicit"}},
    {"mc": {"n_paths": 1.5}},
    {"mc": {"controls": [{"kind": "constant", "sigma": 0.9}]}},
    {"mc": {"controls": [{"kind": "constant"}]}},
    {"output": {"format": "xml"}},
])
def test_config_errors(tmp_path, capsys, bad):
    code, _, err = run(capsys, "price", "--config", config(tmp_path, **bad))
    assert code == 2 and "config error" in err


def test_missing_and_malformed_config(tmp_path, capsys):
    assert run(capsys, "price", "--config", str(tmp_path / "nope.json"))[0] == 2
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(capsys, "price", "--config", str(p))[0] == 2
    doc = dict(BASE)
    del doc["payoff"]
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_out_flag_and_config_path(tmp_path, capsys):
    out = tmp_path / "price.json"
    code, stdout, _ = run(capsys, "price", "--config", config(tmp_path), "--out", str(out))
    assert code == 0 and stdout == "" and json.loads(out.read_text())["command"] == "price"
    out2 = tmp_path / "p.csv"
    cfg = config(tmp_path, output={"format": "csv", "path": str(out2)})
    assert run(capsys, "price", "--config", cfg)[0] == 0
    assert out2.read_text().startswith("h_low,h_up")


def test_grid_refine(tmp_path, capsys):
    cfg = config(tmp_path, grid={"n_space": 101, "n_time": 50})
    d = json.loads(run(capsys, "price", "--config", cfg, "--grid-refine", "1")[1])
    assert d["diagnostics"]["grid"]["n_space"] == 201 and d["diagnostics"]["grid"]["n_time"] == 100
    assert run(capsys, "price", "--config", cfg, "--grid-refine", "-1")[0] == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "uncvol", "price", "--config", config(tmp_path), "--format", "csv"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("h_low,h_up")
