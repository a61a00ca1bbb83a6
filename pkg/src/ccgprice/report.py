"""Command-line front end: scenario files in, CSV tables out.

Exit codes: 0 success, 1 usage or input error, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .market import ConfigurationError, EnergyUser, MarketConfig, revenue
from .oracle import tau_solve
from .sim import (
    SWEEP_AXES,
    GenerationParams,
    Scenario,
    ScenarioFormatError,
    apply_participation,
    generate_scenario,
    grid_comparison,
    load_scenario,
    run_protocol,
    save_scenario,
    sweep,
)
from .solver import ConvergenceError, SolverParams, solve

EXIT_OK, EXIT_USAGE, EXIT_NO_CONVERGENCE = 0, 1, 2
REPRODUCE_TARGETS = ("table1", "table2", "table3", "table4", "table5", "fig3", "fig4")
FIG3_TOL = 1e-3
FIG3_MAX_ITER = 200
REF_FIG3_ITERATIONS = 8

# Two sellers, two price cases: (energy kWh, price cents/kWh) per seller.
TABLE1_CASES = {"case1": ((35, 20), (5, 20)), "case2": ((32, 18), (8, 22))}
TABLE1_REF = {
    "EU1 revenue": (700, 576, -17),
    "EU2 revenue": (100, 176, 76),
    "SFC cost": (800, 752, -6),
}

# Ten sellers whose surplus totals 81 kWh; budget binds and every price
# clears the 8 cents/kWh threshold, so all of them trade.
GRID_FIXTURE_E = (4.5, 5.4, 6.3, 7.2, 8.1, 8.1, 9.0, 9.9, 10.8, 11.7)
GRID_FIXTURE_ALPHA = (2.6, 2.4, 2.2, 2.0, 1.8, 1.6, 1.5, 1.3, 1.2, 1.0)
REF_ENERGY_GAIN = 58.3
REF_GRID_REVENUE = 648
REF_REVENUE_GAIN = 352


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- table output ------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_table(header, rows, fmt: str = "csv") -> str:
    cells = [[_cell(v) for v in r] for r in rows]
    if fmt == "pretty":
        widths = [max(len(str(h)), *(len(r[i]) for r in cells)) if cells else len(str(h))
                  for i, h in enumerate(header)]
        lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        return "\n".join(lines) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
    writer.writerow(header)
    writer.writerows(cells)
    return buf.getvalue()


def read_table(path):
    """Parse a table written by :func:`write_table` (csv or tsv) into dict rows."""
    path = Path(path)
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    delim = "\t" if path.suffix == ".tsv" else ","
    return list(csv.DictReader(lines, delimiter=delim))


_SUFFIX = {"csv": ".csv", "tsv": ".tsv", "pretty": ".txt"}


def write_table(out_dir: Path, stem: str, header, rows, opts) -> Path:
    path = out_dir / (stem + _SUFFIX[opts.format])
    text = format_table(header, rows, opts.format)
    if not opts.deterministic:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        text = f"# generated {stamp}\n" + text
    path.write_text(text)
    return path


# --- helpers -------------------------------------------------------------------

def _params(opts) -> SolverParams:
    kw = {}
    if opts.tol is not None:
        kw["tol"] = opts.tol
    if opts.max_iter is not None:
        kw["max_iter"] = opts.max_iter
    try:
        return SolverParams(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _scenario(opts, required=True) -> Scenario:
    if opts.scenario is not None:
        path = Path(opts.scenario)
        if not path.is_file():
            raise UsageError(f"scenario file not found: {path}")
        sc = load_scenario(path)
    elif required:
        raise UsageError("--scenario is required for this command")
    else:
        sc = generate_scenario(opts.n_eus or 10, opts.seed if opts.seed is not None else 0)
    if opts.budget is not None:
        sc = sc.with_budget(opts.budget)
    if opts.participation is not None:
        sc = replace(sc, participation_mode=opts.participation.replace("-", "_"))
    return sc


def _out_dir(opts) -> Path:
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _allocation_rows(sc: Scenario, outcome):
    a = outcome.allocation
    return [
        (eu.id, eu.surplus_e, float(a.prices[n]), float(a.payments[n]), float(a.benefits[n]), bool(outcome.participants[n]))
        for n, eu in enumerate(sc.eus)
    ]


ALLOCATION_HEADER = ("id", "e", "price", "payment", "benefit", "participant")


def _trace_rows(trace):
    return [(t, r, *map(float, p)) for t, (r, p) in enumerate(zip(trace.residuals, trace.iterates))]


def _trace_header(n):
    return ("iteration", "residual", *(f"p{k}" for k in range(n)))


def _summary_rows(outcome, trace, converged):
    a = outcome.allocation
    return [
        ("tau", a.tau),
        ("complete", a.complete),
        ("converged", converged),
        ("iterations", trace.iterations),
        ("final_residual", trace.residuals[-1]),
        ("participants", outcome.n_participants),
        ("total_payment", outcome.sfc_cost),
        ("energy_bought", outcome.sfc_energy_bought),
        ("mean_benefit", outcome.mean_benefit),
    ]


# --- commands ------------------------------------------------------------------

def cmd_solve(opts) -> int:
    sc = _scenario(opts)
    params = _params(opts)
    out = _out_dir(opts)
    converged = True
    try:
        alloc, trace = solve(sc.problem(), params)
    except ConvergenceError as exc:
        alloc, trace, converged = exc.allocation, exc.trace, False
    # an unfinished iterate is reported for the full population, not cleared
    mode = None if converged else "off"
    outcome = apply_participation(alloc.prices, sc, mode, params, trace.iterations)
    write_table(out, "trace", _trace_header(sc.n_eus), _trace_rows(trace), opts)
    write_table(out, "allocation", ALLOCATION_HEADER, _allocation_rows(sc, outcome), opts)
    write_table(out, "summary", ("key", "value"), _summary_rows(outcome, trace, converged), opts)
    if not converged:
        print(f"no convergence after {trace.iterations} iterations "
              f"(residual {trace.residuals[-1]:.3e} > tol {params.tol:g})", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"converged in {trace.iterations} iterations; tau={alloc.tau:.6g}; "
          f"{outcome.n_participants}/{sc.n_eus} sellers trade; paid {outcome.sfc_cost:.2f} of {sc.config.budget_C:g}")
    return EXIT_OK


def cmd_simulate(opts) -> int:
    sc = _scenario(opts, required=False)
    params = _params(opts)
    out = _out_dir(opts)
    outcome, log = run_protocol(sc, params)
    log.write_jsonl(out / "messages.jsonl")
    if outcome.converged:
        outcome = apply_participation(outcome.allocation.prices, sc, None, params, outcome.rounds)
    write_table(out, "allocation", ALLOCATION_HEADER, _allocation_rows(sc, outcome), opts)
    rows = [("rounds", outcome.rounds), ("messages", len(log)), ("converged", outcome.converged),
            ("participants", outcome.n_participants), ("total_payment", outcome.sfc_cost)]
    write_table(out, "summary", ("key", "value"), rows, opts)
    if not outcome.converged:
        print("protocol did not converge", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    print(f"protocol finished after {outcome.rounds} rounds and {len(log)} messages")
    return EXIT_OK


SWEEP_HEADER = ("axis", "value", "n_eus", "budget", "participants", "mean_benefit",
                "total_payment", "energy_bought", "tau", "iterations")


def _sweep_rows(rows):
    return [tuple(r[k] for k in SWEEP_HEADER) for r in rows]


def cmd_sweep(opts) -> int:
    sc = _scenario(opts, required=False)
    if opts.values is None:
        raise UsageError("--values is required for sweep")
    try:
        values = [float(v) for v in opts.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values: cannot parse {opts.values!r}") from None
    if opts.axis == "n_eus":
        values = [int(v) for v in values]
    out = _out_dir(opts)
    rows = sweep(opts.axis, values, sc, _params(opts))
    path = write_table(out, "sweep", SWEEP_HEADER, _sweep_rows(rows), opts)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_gen_scenario(opts) -> int:
    n = opts.n_eus if opts.n_eus is not None else 10
    seed = opts.seed if opts.seed is not None else 0
    config = MarketConfig(opts.budget if opts.budget is not None else 1000.0)
    sc = generate_scenario(n, seed, GenerationParams(), config)
    if opts.participation is not None:
        sc = replace(sc, participation_mode=opts.participation.replace("-", "_"))
    out = Path(opts.out)
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "scenario.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, out)
    print(f"wrote {out}")
    return EXIT_OK


COMPARE_HEADER = ("budget", "grid_only_energy", "market_energy", "energy_gain",
                  "market_revenue", "grid_revenue", "revenue_gain", "participants")


def _compare_row(cmp, outcome):
    return (cmp.budget, cmp.grid_only_energy, cmp.market_energy, cmp.energy_gain,
            cmp.market_revenue, cmp.grid_revenue, cmp.revenue_gain, outcome.n_participants)


def cmd_compare_grid(opts) -> int:
    sc = _scenario(opts, required=False)
    params = _params(opts)
    out = _out_dir(opts)
    alloc, trace = solve(sc.problem(), params)
    outcome = apply_participation(alloc.prices, sc, None, params, trace.iterations)
    cmp = grid_comparison(outcome, sc.config)
    write_table(out, "compare_grid", COMPARE_HEADER, [_compare_row(cmp, outcome)], opts)
    print(f"sellers supply {cmp.market_energy:.2f} kWh vs {cmp.grid_only_energy:.3f} kWh from the grid; "
          f"they earn {cmp.market_revenue:.2f} vs {cmp.grid_revenue:.2f} cents")
    return EXIT_OK


# --- reproduction targets --------------------------------------------------------

def _trunc_pct(new, old) -> int:
    # the published deltas are truncated toward zero, not rounded
    return int(math.trunc(100.0 * (new - old) / old))


def table1_rows():
    """Two-seller revenue example; pure arithmetic, no solving."""
    c1, c2 = TABLE1_CASES["case1"], TABLE1_CASES["case2"]
    vals = {
        "EU1 revenue": (revenue(c1[0][1], c1[0][0]), revenue(c2[0][1], c2[0][0])),
        "EU2 revenue": (revenue(c1[1][1], c1[1][0]), revenue(c2[1][1], c2[1][0])),
    }
    vals["SFC cost"] = (vals["EU1 revenue"][0] + vals["EU2 revenue"][0],
                        vals["EU1 revenue"][1] + vals["EU2 revenue"][1])
    rows = []
    for item, (a, b) in vals.items():
        ref = TABLE1_REF[item]
        rows.append((item, a, b, _trunc_pct(b, a), (b - a) / a, *ref))
    return rows


TABLE1_HEADER = ("item", "case1", "case2", "delta_pct", "delta_ratio",
                 "ref_case1", "ref_case2", "ref_delta_pct")


def grid_fixture() -> Scenario:
    eus = tuple(EnergyUser(n, e, a, 45.0) for n, (e, a) in enumerate(zip(GRID_FIXTURE_E, GRID_FIXTURE_ALPHA)))
    return Scenario(eus, MarketConfig(1000.0, 44.0, 8.0), None, "grid-fixture-81kWh")


def fig3_rows(seed: int, n_eus: int = 10, budget: float = 1000.0):
    sc = generate_scenario(n_eus, seed, config=MarketConfig(budget))
    prob = sc.problem()
    alloc, trace = solve(prob, SolverParams(tol=FIG3_TOL, max_iter=FIG3_MAX_ITER))
    p_star = tau_solve(prob).prices
    rows = [(t, r, float(np.linalg.norm(p - p_star)), *map(float, p))
            for t, (r, p) in enumerate(zip(trace.residuals, trace.iterates))]
    return sc, trace, rows


def _reproduce(target, opts, out: Path) -> list[str]:
    seed = opts.seed if opts.seed is not None else 0
    params = _params(opts)
    notes = []
    if target == "table1":
        rows = table1_rows()
        write_table(out, "table1", TABLE1_HEADER, rows, opts)
        for r in rows:
            notes.append(f"{r[0]}: {r[1]:g} -> {r[2]:g} ({r[3]:+d}%)")
    elif target in ("table4", "table5"):
        sc = grid_fixture()
        alloc, trace = solve(sc.problem(), params)
        outcome = apply_participation(alloc.prices, sc, None, params, trace.iterations)
        cmp = grid_comparison(outcome, sc.config)
        if target == "table4":
            header = ("budget", "grid_only_energy", "market_energy", "energy_gain", "ref_energy_gain")
            rows = [(cmp.budget, cmp.grid_only_energy, cmp.market_energy, cmp.energy_gain, REF_ENERGY_GAIN)]
            notes.append(f"energy gain {cmp.energy_gain:.2f} kWh (published {REF_ENERGY_GAIN})")
        else:
            header = ("budget", "market_revenue", "grid_revenue", "revenue_gain",
                      "ref_market_revenue", "ref_grid_revenue", "ref_revenue_gain")
            rows = [(cmp.budget, cmp.market_revenue, cmp.grid_revenue, cmp.revenue_gain,
                     1000, REF_GRID_REVENUE, REF_REVENUE_GAIN)]
            notes.append(f"revenue {cmp.market_revenue:.2f} vs grid {cmp.grid_revenue:.2f} "
                         f"(gain {cmp.revenue_gain:.2f}, published {REF_REVENUE_GAIN})")
        write_table(out, target, header, rows, opts)
    elif target == "fig3":
        sc, trace, rows = fig3_rows(seed, opts.n_eus or 10, opts.budget or 1000.0)
        write_table(out, "fig3", ("iteration", "residual", "distance_to_optimum",
                                  *(f"p{k}" for k in range(sc.n_eus))), rows, opts)
        notes.append(f"reached residual <= {FIG3_TOL:g} after {trace.iterations} iterations "
                     f"(published run: {REF_FIG3_ITERATIONS})")
    elif target == "fig4":
        rows = []
        for budget in (1000.0, 1500.0, 2000.0, 2500.0, 3000.0):
            base = generate_scenario(10, seed, config=MarketConfig(budget))
            rows += _sweep_rows(sweep("n_eus", [10, 20, 30, 40], base, params, mode="off"))
        write_table(out, "fig4", SWEEP_HEADER, rows, opts)
        notes.append(f"{len(rows)} (N, C) cells")
    elif target == "table2":
        rows = []
        for budget in (1000.0, 2000.0, 3000.0):
            base = generate_scenario(10, seed, config=MarketConfig(budget))
            for r in sweep("n_eus", [10, 20, 30, 40], base, params, mode="fixed_point"):
                rows.append((budget, r["n_eus"], r["participants"], 100.0 * r["participants"] / r["n_eus"]))
        write_table(out, "table2", ("budget", "n_eus", "participants", "participation_pct"), rows, opts)
        notes.append(f"{len(rows)} (C, N) cells")
    elif target == "table3":
        rows = []
        n = opts.n_eus or 10
        for budget in (1000.0, 2000.0):
            base = generate_scenario(n, seed, config=MarketConfig(budget))
            sw = sweep("common_alpha", [1.0, 1.5, 2.0, 2.5, 3.0], base, params, mode="off")
            ref = sw[0]["mean_benefit"]
            for r in sw:
                rows.append((budget, r["value"], r["mean_benefit"], 100.0 * (1 - r["mean_benefit"] / ref)))
            notes.append(f"C={budget:g}: benefit drop alpha 1->3 {100.0 * (1 - sw[-1]['mean_benefit'] / ref):.1f}%")
        write_table(out, "table3", ("budget", "alpha", "mean_benefit", "drop_vs_alpha1_pct"), rows, opts)
    return notes


def cmd_reproduce(opts) -> int:
    targets = REPRODUCE_TARGETS if opts.target == "all" else (opts.target,)
    out = _out_dir(opts)
    for target in targets:
        for note in _reproduce(target, opts, out):
            print(f"{target}: {note}")
    return EXIT_OK


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--out", default=".", help="output directory (gen-scenario: file or directory)")
    common.add_argument("--seed", type=int)
    common.add_argument("--budget", type=float, help="buyer budget in cents")
    common.add_argument("--n-eus", type=int, dest="n_eus")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--participation", choices=("one-shot", "fixed-point", "off"))
    common.add_argument("--format", choices=("csv", "tsv", "pretty"), default="csv")
    common.add_argument("--deterministic", action="store_true", help="omit the timestamp header line")

    parser = _Parser(prog="ccgprice", description="Budget-sharing price negotiation solver and reports.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="solve a scenario").set_defaults(func=cmd_solve)
    sub.add_parser("simulate", parents=[common], help="run the message-passing protocol").set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep", parents=[common], help="vary budget, population or sensitivity")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("reproduce", parents=[common], help="regenerate a published table or figure")
    p.add_argument("target", choices=REPRODUCE_TARGETS + ("all",))
    p.set_defaults(func=cmd_reproduce)
    sub.add_parser("gen-scenario", parents=[common], help="write a seeded scenario file").set_defaults(func=cmd_gen_scenario)
    sub.add_parser("compare-grid", parents=[common], help="compare against trading with the grid").set_defaults(func=cmd_compare_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    opts = parser.parse_args(argv)
    try:
        return opts.func(opts)
    except (UsageError, ScenarioFormatError, ConfigurationError) as exc:
        print(f"ccgprice {opts.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"ccgprice {opts.command}: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
