"""Command line front end: ``alliancegame {analyze,sweep,optimize,simulate,validate}``.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
Output is deterministic for a given config, seed and version.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import List, Optional

from . import __version__
from .config import MODE_NAMES, ConfigError, ScenarioConfig, load
from .core import DomainError
from .decision import EXACT, PAPER, DecisionEngine
from .game import SweepSpec, optimize_eta, strategy_costs, total_cost
from . import sim

MC = "mc"
INPUT = "input"
REFERENCE = "reference"
REFERENCE_OPTIMUM = {"total_cost_usd": 57_400.0, "eta": 7_000}

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def tagged(value, method: str) -> dict:
    return {"value": _num(value), "method": method}


def usd(x: float) -> str:
    return f"{x:,.2f} USD"


def provenance(cfg: ScenarioConfig, command: str) -> dict:
    return {
        "command": command,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "version": __version__,
        "mode": cfg.method,
    }


def build_engine(cfg: ScenarioConfig) -> DecisionEngine:
    mode = PAPER if cfg.mode == "paper" else EXACT
    return DecisionEngine(cfg.race, cfg.rho, mode=mode, experimental=cfg.mode == "experimental")


# ---------------------------------------------------------------------------
# report builders (pure; the tests call these directly)
# ---------------------------------------------------------------------------


def analyze(cfg: ScenarioConfig, engine: Optional[DecisionEngine] = None) -> dict:
    engine = engine or build_engine(cfg)
    m = engine.mode
    rep = engine.report(cfg.eta)
    s_noa, s_act = strategy_costs(cfg.cost, cfg.eta, rep.q0, rep.q1_eta)
    total = total_cost(cfg.cost, cfg.eta, rep.q0, rep.q1_eta, rep.p_cminus1)
    opt = optimize_eta(cfg.cost, engine, cfg.sweep())
    decision = {"eta": tagged(cfg.eta, INPUT), "rho": tagged(cfg.rho, INPUT)}
    for key in ("e_nu", "e_t_prev", "e_c_nu", "e_c_nu_minus_b", "e_c_prev", "q0", "q1_eta", "p_cminus1"):
        decision[key] = tagged(getattr(rep, key), m)
    out = {
        "provenance": provenance(cfg, "analyze"),
        "decision": decision,
        "game": {
            "s_noa": tagged(s_noa, m),
            "s_act": tagged(s_act, m),
            "total_cost": tagged(total, m),
            "total_cost_display": usd(total),
        },
        "optimization": _optimization_block(opt, m, cfg, engine),
        "notes": list(rep.notes) + list(opt.notes),
    }
    if engine.nu.experimental is not None or cfg.mode == "experimental":
        out["experimental"] = {
            "e_nu": tagged(engine.nu.experimental, MODE_NAMES["experimental"]),
            "e_nu_residual_vs_exact": tagged(engine.nu.experimental_residual, MODE_NAMES["experimental"]),
            "reliable": engine.nu.experimental_residual is not None and engine.nu.experimental_residual < 1e-6,
        }
        if not out["experimental"]["reliable"]:
            out["notes"].append("closed-form E[nu] is unreliable for this scenario; exact-dp values are authoritative")
    return out


def _optimization_block(opt, method: str, cfg: ScenarioConfig, engine) -> dict:
    ref_eta = REFERENCE_OPTIMUM["eta"]
    block = {
        "eta_argmin": tagged(opt.eta_argmin, method),
        "min_total_cost": tagged(opt.min_cost, method),
        "min_total_cost_display": usd(opt.min_cost),
        "eta_threshold": tagged(opt.eta_threshold, method),
        "feasible": opt.feasible,
        "feasibility_bound": tagged(opt.feasibility_bound, method),
        "interior_optimum": _interior(opt),
    }
    comparison = {
        "reference_eta": tagged(ref_eta, REFERENCE),
        "reference_total_cost": tagged(REFERENCE_OPTIMUM["total_cost_usd"], REFERENCE),
        "reference_display": f"{usd(REFERENCE_OPTIMUM['total_cost_usd'])} at eta = {ref_eta:,}",
        "computed_display": f"{usd(opt.min_cost)} at eta = {opt.eta_argmin:,}",
    }
    if ref_eta <= -(-cfg.node_count // 2):
        at_ref = total_cost(cfg.cost, ref_eta, engine.q0, engine.q1(ref_eta), engine.p_cminus1)
        comparison["computed_total_cost_at_reference_eta"] = tagged(at_ref, method)
    block["reference_comparison"] = comparison
    return block


def _interior(opt) -> bool:
    etas = [e for e, _ in opt.cost_curve]
    return etas[0] < opt.eta_argmin < etas[-1]


def sweep_rows(cfg: ScenarioConfig, engine: DecisionEngine, spec: SweepSpec) -> List[dict]:
    rows = []
    for eta in spec.values():
        q1 = engine.q1(eta)
        _, s_act = strategy_costs(cfg.cost, eta, engine.q0, q1)
        rows.append({"eta": eta, "q1_eta": q1, "s_act": s_act, "total_cost": total_cost(cfg.cost, eta, engine.q0, q1, engine.p_cminus1)})
    return rows


def sweep(cfg: ScenarioConfig, engine: Optional[DecisionEngine] = None) -> dict:
    engine = engine or build_engine(cfg)
    spec = cfg.sweep()
    opt = optimize_eta(cfg.cost, engine, spec)
    return {
        "provenance": provenance(cfg, "sweep"),
        "method": engine.mode,
        "columns": ["eta", "q1_eta", "s_act", "total_cost"],
        "curve": sweep_rows(cfg, engine, spec),
        "q0": tagged(engine.q0, engine.mode),
        "p_cminus1": tagged(engine.p_cminus1, engine.mode),
        "summary": _optimization_block(opt, engine.mode, cfg, engine),
        "notes": list(opt.notes),
    }


def optimize(cfg: ScenarioConfig, engine: Optional[DecisionEngine] = None) -> dict:
    engine = engine or build_engine(cfg)
    opt = optimize_eta(cfg.cost, engine, cfg.sweep())
    return {
        "provenance": provenance(cfg, "optimize"),
        "q0": tagged(engine.q0, engine.mode),
        "p_cminus1": tagged(engine.p_cminus1, engine.mode),
        "optimization": _optimization_block(opt, engine.mode, cfg, engine),
        "notes": list(opt.notes),
    }


def _run_sim(cfg: ScenarioConfig, jobs: Optional[int], trace: Optional[str]):
    if cfg.replications < 100:
        raise ConfigError(f"sim.replications must be >= 100 for simulate/validate, got {cfg.replications}")
    race, alliance = cfg.race, cfg.alliance
    outcomes = sim.run(race, alliance, cfg.sim_config(jobs))
    if trace:
        sim.write_trace(outcomes, trace)
    return race, alliance, outcomes


def _estimates(outcomes, race) -> dict:
    out = {}
    for s in sim.SELECTORS:
        e = sim.summarize(s, outcomes, race)
        out[s] = {k: _num(v) for k, v in e.as_dict().items()}
        out[s]["method"] = MC
    return out


def simulate(cfg: ScenarioConfig, jobs: Optional[int] = None, trace: Optional[str] = None) -> dict:
    race, alliance, outcomes = _run_sim(cfg, jobs, trace)
    sc = cfg.sim_config(jobs)
    return {
        "provenance": provenance(cfg, "simulate"),
        "generator": "Philox4x64-10, key = (splitmix64(seed), splitmix64(splitmix64(seed) ^ index))",
        "replications": sc.replications,
        "horizon": sc.horizon(race),
        "eta": tagged(alliance.eta, INPUT),
        "rho": tagged(alliance.rho, INPUT),
        "estimates": _estimates(outcomes, race),
    }


def validate(cfg: ScenarioConfig, jobs: Optional[int] = None, trace: Optional[str] = None, perturb: bool = False) -> dict:
    race, alliance, outcomes = _run_sim(cfg, jobs, trace)
    exact = DecisionEngine(race, cfg.rho, EXACT)
    paper = DecisionEngine(race, cfg.rho, PAPER)
    report = sim.validate(exact.report(cfg.eta), paper.report(cfg.eta), outcomes, race, fp=exact.fp, perturb=perturb)
    entries = []
    for e in report.entries:
        d = {k: _num(v) for k, v in e.as_dict().items()}
        d["mc_method"] = MC
        entries.append(d)
    return {
        "provenance": provenance(cfg, "validate"),
        "replications": cfg.replications,
        "eta": tagged(alliance.eta, INPUT),
        "rho": tagged(alliance.rho, INPUT),
        "perturbed": perturb,
        "passed": report.passed,
        "entries": entries,
    }


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_json(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def _csv_text(header, rows, comments=()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _prov_comment(report) -> str:
    p = report["provenance"]
    return " ".join(f"{k}={p[k]}" for k in ("command", "config_hash", "seed", "version", "mode"))


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict) and set(obj) == {"value", "method"}:
        rows.append((prefix, obj["value"], obj["method"]))
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, rows)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, obj, ""))


def render_csv(report: dict) -> str:
    command = report["provenance"]["command"]
    if command == "sweep":
        s = report["summary"]
        ref = s["reference_comparison"]
        comments = [_prov_comment(report), f"method: q1_eta,s_act,total_cost = {report['method']}; costs in USD"]
        curve = [[r[c] for c in report["columns"]] for r in report["curve"]]
        text = _csv_text(report["columns"], curve, comments)
        summary = [
            f"summary: argmin_eta={s['eta_argmin']['value']} min_total_cost={s['min_total_cost']['value']!r} "
            f"eta_threshold={s['eta_threshold']['value']} feasible={s['feasible']} interior_optimum={s['interior_optimum']} "
            f"method={report['method']}",
            f"summary: optimum {ref['computed_display']}; reference {ref['reference_display']}",
        ]
        return text + "".join(f"# {line}\n" for line in summary)
    if command == "validate":
        header = ["quantity", "method", "analytic", "mc_mean", "std_err", "z", "gate", "status"]
        rows = [[e[h] for h in header] for e in report["entries"]]
        return _csv_text(header, rows, [_prov_comment(report), f"passed={report['passed']} perturbed={report['perturbed']}"])
    if command == "simulate":
        header = ["selector", "mean", "std_err", "n", "censored_fraction", "unreliable", "method"]
        rows = [[name] + [e[h] for h in header[1:]] for name, e in report["estimates"].items()]
        return _csv_text(header, rows, [_prov_comment(report), f"replications={report['replications']} horizon={report['horizon']}"])
    rows = []
    body = {k: v for k, v in report.items() if k != "provenance"}
    _flatten("", body, rows)
    return _csv_text(["quantity", "value", "method"], rows, [_prov_comment(report)])


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alliancegame", description="Block race decision and alliance cost analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("analyze", "decision quantities, costs and the optimum"),
        ("sweep", "cost curve over the alliance size range"),
        ("optimize", "optimal alliance size"),
        ("simulate", "Monte Carlo estimates"),
        ("validate", "analytic values against Monte Carlo"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, metavar="PATH")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--replications", type=int, metavar="N")
        sp.add_argument("--eta-range", metavar="A:B:STEP")
        sp.add_argument("--eta", type=int)
        sp.add_argument("--mode", choices=sorted(MODE_NAMES))
        sp.add_argument("--format", choices=("csv", "json"), default="csv" if name == "sweep" else "json")
        sp.add_argument("--out", metavar="PATH")
        if name in ("simulate", "validate"):
            sp.add_argument("--jobs", type=int, default=None, help="worker processes (results do not depend on it)")
            sp.add_argument("--trace", metavar="PATH", help="write one JSON line per replication")
        if name == "validate":
            sp.add_argument("--perturb", action="store_true", help="self-test: shift E[nu] by 10 s.e., must FAIL")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config).with_overrides(
            seed=args.seed, replications=args.replications, eta_range=args.eta_range, eta=args.eta, mode=args.mode
        )
        if args.command == "analyze":
            report = analyze(cfg)
        elif args.command == "sweep":
            report = sweep(cfg)
        elif args.command == "optimize":
            report = optimize(cfg)
        elif args.command == "simulate":
            report = simulate(cfg, args.jobs, args.trace)
        else:
            report = validate(cfg, args.jobs, args.trace, args.perturb)
    except (ConfigError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = render_json(report) if args.format == "json" else render_csv(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.command == "validate" and not report["passed"]:
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
