"""Command line entry point.

    dsaawet run|validate|compare|sweep <scenario> [--out DIR] [--seed S]
            [--jobs J] [--full-trace] [--strict-checks]

``<scenario>`` is a path or the name of a shipped preset. Exit codes:
0 success, 1 validation failure, 2 numeric overflow, 3 diagnostic
violations with ``--strict-checks``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, output
from .baseline import run_baseline
from .engine import RunResult, run
from .scenario import Scenario, ScenarioError, ScenarioModel, list_presets, parse_scenario, resolve
from .topology import union_edge_set, verify_a4

log = logging.getLogger("dsaawet")

EXIT_OK, EXIT_INVALID, EXIT_OVERFLOW, EXIT_VIOLATION = 0, 1, 2, 3
OUT_ENV = "DSAAWET_OUT"
DEFAULT_OUT = "dsaawet-out"


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# -- running ---------------------------------------------------------------------------------

def execute(sc: Scenario, algo: str, seed: int, full_trace: bool = False) -> RunResult:
    cfg = sc.config(seed=seed, full_trace=full_trace or sc.needs_trace)
    x0 = sc.initial_state(seed)
    if algo == "baseline":
        return run_baseline(sc.problem, sc.schedule, cfg, x0)
    return run(sc.problem, sc.schedule, cfg, x0)


def run_checks(sc: Scenario, res: RunResult) -> list[dict]:
    """Enabled diagnostics for one run, as JSON-ready violation records.

    ``lemma41`` mismatches that :func:`diagnostics.explain_lemma41_violation`
    attributes to a newly gained, already-truncated in-neighbour are kept but
    flagged ``explained``; they do not count toward ``--strict-checks``.
    """
    out: list[dict] = []
    if "a4" in sc.checks:
        rep = verify_a4(sc.schedule)
        if not rep.passed:
            out.append({"check": "a4", "k": None, "agent": None, "detail": "; ".join(rep.messages),
                        "explained": False})
    if res.algo != "dsaawet" or res.trace is None:
        return out
    traj = res.trace
    trace = diagnostics.TruncationTrace.from_sigma(traj.sigma, res.events)
    if "lemma41" in sc.checks:
        aux = diagnostics.build_auxiliary_sequences(traj, trace, sc.problem)
        for v in diagnostics.check_lemma41(aux, sc.schedule, traj.gammas, sc.bounds, sc.problem, sc.x_star):
            out.append({**v.as_dict(), "explained": diagnostics.explain_lemma41_violation(v, traj, sc.schedule)})
    if "lemma42" in sc.checks:
        span = sc.schedule.period or sc.schedule.b_window
        g_inf = union_edge_set(sc.schedule, 0, span - 1)
        for v in diagnostics.check_lemma42(trace, g_inf, sc.schedule.b_window):
            out.append({**v.as_dict(), "explained": False})
    if "noise" in sc.checks:
        ps = diagnostics.noise_partial_sum_diag(traj, sc.problem, sc.bounds(int(traj.sigma[-1].max())))
        if ps is not None:
            fl = ps.tail_fluctuation()
            for i in np.flatnonzero(fl > sc.model.noise_tail_bound):
                out.append({"check": "noise", "k": traj.steps, "agent": int(i),
                            "detail": f"tail fluctuation {fl[i]:.3g} above {sc.model.noise_tail_bound:g}",
                            "explained": False})
    return out


def summarize(sc: Scenario, res: RunResult, seed: int) -> dict:
    last = res.records[-1]
    cess = diagnostics.detect_truncation_cessation(res.events, res.horizon, int(res.final.sigma.max()))
    x = res.final.x
    per_agent = [sc.problem.root_distance(xi) for xi in x] if last.root_distance is not None else None
    return {
        "scenario": sc.name,
        "algo": res.algo,
        "seed": seed,
        "horizon": res.horizon,
        "steps_completed": int(res.final.k),
        "overflow_step": res.overflow_step,
        "final_root_distance": last.root_distance,
        "max_agent_root_distance": max(per_agent) if per_agent else None,
        "final_disagreement": last.disagreement,
        "sigma_final": int(res.final.sigma.max()),
        "cessation_step": cess.last_event_step,
        "still_truncating": cess.still_truncating,
        "trunc_events": len(res.events),
        "final_avg_estimate": last.avg_estimate,
        "wall_time": res.wall_time,
    }


def _strict_count(violations: list[dict]) -> int:
    return sum(not v["explained"] for v in violations)


def _write_run(out: Path, sc: Scenario, results: list[RunResult], seed: int, full_trace: bool) -> tuple[int, int]:
    out.mkdir(parents=True, exist_ok=True)
    name = "compare.csv" if len(results) > 1 else "metrics.csv"
    output.write_metrics(out / name, results, sc.l)
    summary = {"scenario": sc.name, "source": sc.source, "seed": seed, "runs": []}
    violations: list[dict] = []
    for res in results:
        if res.algo == "dsaawet":
            output.write_jsonl(out / "events.jsonl", (e.as_dict() for e in res.events))
        v = run_checks(sc, res)
        violations += [{**item, "algo": res.algo} for item in v]
        s = summarize(sc, res, seed)
        s["violations"] = len(v)
        s["unexplained_violations"] = _strict_count(v)
        summary["runs"].append(s)
        if full_trace and res.trace is not None:
            t = res.trace
            np.savez_compressed(out / f"trace_{res.algo}.npz", x=t.x, sigma=t.sigma, obs=t.obs, gammas=t.gammas)
    if sc.checks:
        output.write_jsonl(out / "violations.jsonl", violations)
    output.write_json(out / "summary.json", summary)
    overflowed = sum(res.overflow_step is not None for res in results)
    return overflowed, _strict_count(violations)


def _exit_code(overflowed: int, strict_violations: int, strict: bool) -> int:
    if overflowed:
        return EXIT_OVERFLOW
    if strict and strict_violations:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_run(sc: Scenario, out: Path, seed: int | None = None, full_trace: bool = False,
            strict: bool = False) -> int:
    if sc.algorithm == "compare":
        return cmd_compare(sc, out, seed, full_trace, strict)
    seed = sc.seed if seed is None else seed
    res = execute(sc, sc.algorithm, seed, full_trace)
    overflowed, bad = _write_run(out, sc, [res], seed, full_trace)
    log.info("%s seed %d: %d steps, sigma %d, output in %s", sc.name, seed, res.final.k,
             int(res.final.sigma.max()), out)
    return _exit_code(overflowed, bad, strict)


def cmd_compare(sc: Scenario, out: Path, seed: int | None = None, full_trace: bool = False,
                strict: bool = False) -> int:
    """Truncated and untruncated runs on the same noise streams, written as one paired CSV."""
    seed = sc.seed if seed is None else seed
    results = [execute(sc, "dsaawet", seed, full_trace), execute(sc, "baseline", seed, full_trace)]
    overflowed, bad = _write_run(out, sc, results, seed, full_trace)
    return _exit_code(overflowed, bad, strict)


def validate_report(sc: Scenario) -> dict:
    rep = verify_a4(sc.schedule)
    errs = sc.config().validate()
    return {
        "scenario": sc.name,
        "n_agents": sc.n,
        "dim": sc.l,
        "topology": repr(sc.schedule),
        "a4": rep.as_dict(),
        "config_errors": errs,
        "x_star_norm": float(np.linalg.norm(sc.x_star)),
        "m0": sc.bounds(0),
        "gamma_0": sc.gamma(0),
        "passed": rep.passed and not errs,
    }


def cmd_validate(sc: Scenario, out: Path | None = None) -> int:
    report = validate_report(sc)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        output.write_json(out / "validate.json", report)
    for msg in report["a4"]["messages"] + report["config_errors"]:
        print(f"{sc.name}: {msg}", file=sys.stderr)
    print(f"{sc.name}: {'ok' if report['passed'] else 'FAILED'}")
    return EXIT_OK if report["passed"] else EXIT_INVALID


# -- sweeps ------------------------------------------------------------------------------------

SWEEP_COLUMNS = ["seed", "algo", "steps_completed", "overflow_step", "final_root_distance",
                 "max_agent_root_distance", "final_disagreement", "sigma_final", "cessation_step",
                 "trunc_events", "violations", "unexplained_violations"]
QUANTILES = (0.0, 0.1, 0.5, 0.9, 1.0)


def _sweep_one(model_json: str, source: str, seed: int) -> list[dict]:
    sc = resolve(ScenarioModel.model_validate_json(model_json), source)
    algos = ["dsaawet", "baseline"] if sc.algorithm == "compare" else [sc.algorithm]
    rows = []
    for algo in algos:
        res = execute(sc, algo, seed)
        v = run_checks(sc, res)
        s = summarize(sc, res, seed)
        s["violations"] = len(v)
        s["unexplained_violations"] = _strict_count(v)
        rows.append(s)
    return rows


def parse_seeds(spec: str) -> list[int]:
    """``"0:20"`` (half-open range) or ``"1,4,9"``."""
    spec = spec.strip()
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",") if s.strip()]


def sweep(sc: Scenario, seeds: list[int], jobs: int = 1) -> list[dict]:
    model_json = sc.model.model_dump_json()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            batches = list(ex.map(_sweep_one, [model_json] * len(seeds), [sc.source] * len(seeds), seeds))
    else:
        batches = [_sweep_one(model_json, sc.source, s) for s in seeds]
    rows = [r for b in batches for r in b]
    return sorted(rows, key=lambda r: (r["seed"], r["algo"]))


def aggregate(rows: list[dict]) -> dict:
    agg: dict = {}
    for algo in sorted({r["algo"] for r in rows}):
        sub = [r for r in rows if r["algo"] == algo]
        a = {"runs": len(sub), "overflowed": sum(r["overflow_step"] is not None for r in sub), "quantiles": {}}
        for col in ("final_root_distance", "max_agent_root_distance", "final_disagreement", "sigma_final",
                    "cessation_step", "trunc_events"):
            vals = np.array([r[col] for r in sub if r[col] is not None], dtype=float)
            if vals.size:
                a["quantiles"][col] = {format(q, "g"): float(np.quantile(vals, q)) for q in QUANTILES}
        agg[algo] = a
    return agg


def cmd_sweep(sc: Scenario, out: Path, seeds: list[int], jobs: int = 1, strict: bool = False) -> int:
    rows = sweep(sc, seeds, jobs)
    out.mkdir(parents=True, exist_ok=True)
    output.write_csv(out / "sweep.csv", SWEEP_COLUMNS, [[output.fmt(r[c]) for c in SWEEP_COLUMNS] for r in rows])
    output.write_json(out / "sweep_summary.json", {"scenario": sc.name, "seeds": seeds, "aggregate": aggregate(rows),
                                                   "wall_time": sum(r["wall_time"] for r in rows)})
    overflowed = sum(r["overflow_step"] is not None for r in rows)
    return _exit_code(overflowed, sum(r["unexplained_violations"] for r in rows), strict)


# -- argument handling -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsaawet", description="Distributed stochastic approximation "
                                "with expanding truncations: seeded runs, validation and sweeps.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("run", "run the scenario's algorithm once"),
                        ("validate", "check the topology and configuration without running"),
                        ("compare", "paired truncated and untruncated runs on the same noise"),
                        ("sweep", "one summary row per seed plus quantiles")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("scenario", help=f"scenario file or preset name ({', '.join(list_presets())})")
        s.add_argument("--out", type=Path, default=None, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
        s.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed (sweep: offset added to every seed)")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        s.add_argument("--full-trace", action="store_true", help="keep and save every step's state")
        s.add_argument("--strict-checks", action="store_true", help="exit 3 on unexplained diagnostic violations")
        if name == "sweep":
            s.add_argument("--seeds", default="0:10", help='seed list, "A:B" or "a,b,c" (default 0:10)')
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        sc = parse_scenario(args.scenario)
    except ScenarioError as e:
        for err in e.errors:
            print(f"{args.scenario}: {err}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError:
        print(f"{args.scenario}: no such file or preset", file=sys.stderr)
        return EXIT_INVALID
    out = args.out if args.out is not None else default_out()
    try:
        if args.command == "validate":
            return cmd_validate(sc, args.out)
        if args.command == "run":
            return cmd_run(sc, out, args.seed, args.full_trace, args.strict_checks)
        if args.command == "compare":
            return cmd_compare(sc, out, args.seed, args.full_trace, args.strict_checks)
        seeds = parse_seeds(args.seeds)
        if args.seed is not None:
            seeds = [args.seed + s for s in seeds]
        return cmd_sweep(sc, out, seeds, args.jobs, args.strict_checks)
    except OSError as e:
        print(f"dsaawet: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
