import csv
import io
import json
from pathlib import Path

import pytest

from alliancegame import cli
from alliancegame.config import ConfigError, dump, load, loads
from alliancegame.decision import EXACT, DecisionEngine
from alliancegame.game import strategy_costs, total_cost

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOY = CONFIGS / "toy.ini"
WORKED = CONFIGS / "worked_example.ini"

BASE = """\
[network]
N = 20

[arrival]
lambda_c = 0.5
lambda_g = 0.25

[observation]
alpha0 = 1
alpha = 1

[cost]
V = 1000
member_cost = 1
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_worked_example_calibration():
    cfg = load(WORKED)
    assert cfg.lambda_c == 50 and cfg.lambda_g == 50
    assert cfg.mean_initial == 3 and cfg.mean_interval == 1
    assert cfg.node_count == 60000 and cfg.eta == 7000 and cfg.rho == 0.7
    assert cfg.token_value == 1e6 and cfg.member_cost == 0.001


def test_round_trip_hash(tmp_path):
    for path in (TOY, WORKED):
        cfg = load(path)
        out = tmp_path / "again.ini"
        dump(cfg, out)
        again = load(out)
        assert again.config_hash == cfg.config_hash
        assert again == cfg


def test_hash_changes_with_content():
    a = loads(BASE)
    b = loads(BASE.replace("V = 1000", "V = 1001"))
    assert a.config_hash != b.config_hash


def test_raw_and_calibration_conflict():
    text = BASE.replace("lambda_g = 0.25", "lambda_g = 0.25\nlambda_c_alpha = 5")
    with pytest.raises(ConfigError, match=r"<string>:7: arrival.lambda_c_alpha: .*not both"):
        loads(text)


def test_line_precise_errors():
    with pytest.raises(ConfigError, match=r":13: cost.V: token_value must be > 0"):
        loads(BASE.replace("V = 1000", "V = -5"))
    with pytest.raises(ConfigError, match=r":2: network.N: expected int"):
        loads(BASE.replace("N = 20", "N = twenty"))
    with pytest.raises(ConfigError, match=r":15: cost.colour: unknown key"):
        loads(BASE + "colour = red\n")
    with pytest.raises(ConfigError, match=r"unknown section"):
        loads(BASE + "[extras]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"missing required section \[cost\]"):
        loads(BASE.split("[cost]")[0])
    with pytest.raises(ConfigError, match=r"alliance.eta"):
        loads(BASE + "[alliance]\neta = 11\n")
    with pytest.raises(ConfigError, match=r"alliance.eta_range"):
        loads(BASE + "[alliance]\neta_range = 0:20:1\n")
    with pytest.raises(ConfigError, match=r"modes.mode"):
        loads(BASE + "[modes]\nmode = fancy\n")


def test_calibration_alpha0_conflict():
    text = BASE.replace("lambda_c = 0.5\nlambda_g = 0.25", "lambda_c_alpha = 2\nlambda_c_alpha0 = 6")
    assert loads(text.replace("alpha0 = 1\n", "")).mean_initial == 3.0
    with pytest.raises(ConfigError, match="conflicts with calibration"):
        loads(text)


def test_exit_code_config_error(tmp_path, capsys):
    bad = write(tmp_path, BASE.replace("alpha = 1", "alpha = 0"))
    assert cli.main(["analyze", "--config", str(bad)]) == 2
    assert "observation.alpha" in capsys.readouterr().err
    assert cli.main(["analyze", "--config", str(tmp_path / "missing.ini")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["analyze", "--config", str(TOY), "--mode", "fast"])
    assert exc.value.code == 2


def test_zero_attacker_rate(tmp_path, capsys):
    path = write(tmp_path, BASE.replace("lambda_c = 0.5", "lambda_c = 0"))
    for mode in ("exact", "paper"):
        assert cli.main(["analyze", "--config", str(path), "--mode", mode]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["decision"]["q0"]["value"] == 0.0
        assert rep["optimization"]["eta_argmin"]["value"] == 0
        assert rep["optimization"]["min_total_cost"]["value"] == 0.0


def test_toy_analyze_equals_library():
    cfg = load(TOY)
    rep = cli.analyze(cfg)
    eng = DecisionEngine(cfg.race, cfg.rho, EXACT)
    lib = eng.report(cfg.eta)
    for key in ("e_nu", "q0", "q1_eta", "p_cminus1", "e_c_nu", "e_t_prev"):
        assert rep["decision"][key]["value"] == getattr(lib, key)
    assert rep["game"]["total_cost"]["value"] == total_cost(cfg.cost, cfg.eta, lib.q0, lib.q1_eta, lib.p_cminus1)


def test_sweep_equals_analyze_calls():
    cfg = load(TOY).with_overrides(eta_range="2:6:2")
    sweep = cli.sweep(cfg)
    assert [r["eta"] for r in sweep["curve"]] == [2, 4, 6]
    for row in sweep["curve"]:
        single = cli.analyze(cfg.with_overrides(eta=row["eta"]))
        assert row["q1_eta"] == single["decision"]["q1_eta"]["value"]
        assert row["s_act"] == single["game"]["s_act"]["value"]
        assert row["total_cost"] == single["game"]["total_cost"]["value"]


def test_sweep_csv_layout(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["sweep", "--config", str(TOY), "--eta-range", "0:10:1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "eta,q1_eta,s_act,total_cost"
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    assert [int(r["eta"]) for r in rows] == list(range(11))
    assert any(l.startswith("# method:") and "exact-dp" in l for l in lines)
    assert any(l.startswith("# summary: argmin_eta=") for l in lines)
    assert any("config_hash=" in l for l in lines)


def test_rho_zero_sweep_nondecreasing():
    cfg = load(TOY).with_overrides(rho=0.0, eta_range="0:10:1")
    costs = [r["total_cost"] for r in cli.sweep(cfg)["curve"]]
    assert all(b >= a for a, b in zip(costs, costs[1:]))


def _all_numbers_tagged(obj, inside_tag=False):
    if isinstance(obj, dict):
        if set(obj) == {"value", "method"}:
            return bool(obj["method"])
        return all(_all_numbers_tagged(v) for k, v in obj.items() if k not in ("provenance", "curve", "columns"))
    if isinstance(obj, list):
        return all(_all_numbers_tagged(v) for v in obj)
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        return True
    return False


def test_every_number_is_tagged():
    cfg = load(TOY)
    assert _all_numbers_tagged(cli.analyze(cfg))
    assert _all_numbers_tagged(cli.optimize(cfg))
    assert _all_numbers_tagged({k: v for k, v in cli.sweep(cfg).items() if k != "curve"})


def test_experimental_mode_is_flagged():
    rep = cli.analyze(load(TOY).with_overrides(mode="experimental"))
    assert rep["experimental"]["e_nu"]["method"] == "closed-form-experimental"
    assert rep["decision"]["e_nu"]["method"] == "exact-dp"
    if not rep["experimental"]["reliable"]:
        assert any("unreliable" in n for n in rep["notes"])


def test_worked_example_report_has_comparison():
    rep = cli.optimize(load(WORKED))
    comp = rep["optimization"]["reference_comparison"]
    assert comp["reference_display"] == "57,400.00 USD at eta = 7,000"
    assert "USD at eta = " in comp["computed_display"]
    assert rep["optimization"]["interior_optimum"]


def test_validate_toy_passes(tmp_path):
    out = tmp_path / "v.json"
    assert cli.main(["validate", "--config", str(TOY), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["passed"] and rep["replications"] == 100_000


def test_validate_perturbation_exit_code(tmp_path):
    out = tmp_path / "v.csv"
    code = cli.main(["validate", "--config", str(TOY), "--replications", "5000", "--perturb", "--format", "csv", "--out", str(out)])
    assert code == 1
    assert "E[nu],exact-dp" in out.read_text() and "FAIL" in out.read_text()


def test_simulate_requires_replications(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(TOY), "--replications", "50"]) == 2
    assert ">= 100" in capsys.readouterr().err


def test_repeat_runs_identical(capsys):
    outputs = []
    for _ in range(2):
        assert cli.main(["analyze", "--config", str(TOY), "--format", "csv"]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
