"""Command-line entry point.

Exit codes:

==  ==================================================
0   success
1   input or usage error (bad file, parse error, bad flag)
2   model infeasible
3   node budget exhausted before optimality was proven
4   validation found violations
5   numerical failure inside the solver
==  ==================================================
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import __version__
from .model import build_misformulated_model, build_model, model_stats
from .retrieval import (
    DEFAULT_DIM, DEFAULT_K, DEFAULT_OVERLAP, DEFAULT_WINDOW, EmptyCorpus, EmptyIndex, HashingEmbedder,
    RetrievalError, RetrievalIndex, aggregate_context, build_index, chunk_corpus, load_corpus, top_k,
)
from .scenario import Scenario, ScenarioError, load_scenario, structural_violations, validate_scenario
from .schedule import (
    CostReport, Schedule, compare, comparison_csv, cost_of, extract_schedule, scenario_prices, schedule_csv,
    verify_schedule,
)
from .solver import MilpSolution, NumericalBreakdown, SolverOptions, Status, solve_milp
from .timeseries import TimeSeriesError

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_BUDGET = 3
EXIT_VIOLATIONS = 4
EXIT_NUMERICAL = 5

_STATUS_EXIT = {
    Status.OPTIMAL: EXIT_OK,
    Status.INFEASIBLE: EXIT_INFEASIBLE,
    Status.NODE_BUDGET_EXCEEDED: EXIT_BUDGET,
    Status.UNBOUNDED: EXIT_NUMERICAL,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _err(msg: str) -> None:
    print(f"dsmopt: {msg}", file=sys.stderr)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite(x: float):
    return x if x == x and abs(x) != float("inf") else None


# --------------------------------------------------------------------------
# optimize / compare

@dataclass
class _Run:
    scenario: Scenario
    variant: str
    solution: MilpSolution
    schedule: Schedule | None
    cost: CostReport | None
    summary: dict
    exit_code: int


def _load(path: str) -> tuple[Scenario | None, int]:
    try:
        s = load_scenario(path)
    except FileNotFoundError as exc:
        _err(f"{path}: file not found ({exc.filename})")
        return None, EXIT_INPUT
    except (ScenarioError, TimeSeriesError, OSError) as exc:
        _err(f"{path}: {exc}")
        return None, EXIT_INPUT
    violations = validate_scenario(s)
    for v in violations:
        _err(f"{path}: {v.code} [{v.device}] {v.message}")
    if structural_violations(violations):
        return None, EXIT_INPUT
    return s, EXIT_OK


def _run(s: Scenario, args) -> _Run:
    model = build_misformulated_model(s) if args.variant == "misformulated" else build_model(s)
    opts = SolverOptions(max_nodes=args.max_nodes)
    started = time.perf_counter()
    sol = solve_milp(model, opts)
    elapsed = time.perf_counter() - started
    code = _STATUS_EXIT[sol.status]
    summary = {
        "scenario": s.name,
        "scenario_hash": s.digest(),
        "variant": model.variant,
        "status": sol.status.value,
        "model": model_stats(model).as_dict(),
        "solver": {"nodes": sol.node_count, "bound": _finite(sol.bound),
                   "objective": _finite(sol.objective)},
    }
    if not args.no_timestamp:
        summary["solver"]["seconds"] = round(elapsed, 3)
    sch = cost = None
    if sol.status is Status.OPTIMAL:
        sch = extract_schedule(model, sol, s)
        cost = cost_of(sch, scenario_prices(s))
        rep = verify_schedule(sch, s, args.tol)
        summary["cost"] = {"total": cost.total_cost, "import": cost.import_total,
                           "export_revenue": cost.export_total}
        summary["verification"] = rep.as_dict()
    return _Run(s, model.variant, sol, sch, cost, summary, code)


def _stamp(doc: dict, args) -> dict:
    if not args.no_timestamp:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc["version"] = __version__
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_optimize(args) -> int:
    s, code = _load(args.scenario)
    if s is None:
        return code
    try:
        run = _run(s, args)
    except NumericalBreakdown as exc:
        _err(f"solver failed: {exc}")
        return EXIT_NUMERICAL
    out = _out_dir(args)
    stem = f"{Path(args.scenario).stem}.{run.variant}"
    (out / f"{stem}.summary.json").write_text(_dump_json(_stamp(run.summary, args)))
    if run.schedule is not None:
        (out / f"{stem}.schedule.csv").write_text(schedule_csv(run.schedule))
        ok = run.summary["verification"]["pass"]
        print(f"{s.name}: {run.solution.status.value}, cost {run.cost.total_cost:.2f}, "
              f"verification {'pass' if ok else 'FAIL'}")
    else:
        _err(f"{s.name}: {run.solution.status.value}")
    return run.exit_code


def cmd_compare(args) -> int:
    if args.scenario_b is None and args.variant != "misformulated":
        raise UsageError("compare needs a second scenario or --variant misformulated")
    s_a, code = _load(args.scenario_a)
    if s_a is None:
        return code
    if args.scenario_b is None:
        # baseline (a) is the misformulated model, (b) the correct one, same scenario
        s_b = s_a
        variants = ("misformulated", "correct")
    else:
        s_b, code = _load(args.scenario_b)
        if s_b is None:
            return code
        variants = (args.variant, args.variant)
    runs = []
    try:
        for s, variant in zip((s_a, s_b), variants):
            args.variant = variant
            runs.append(_run(s, args))
    except NumericalBreakdown as exc:
        _err(f"solver failed: {exc}")
        return EXIT_NUMERICAL
    for r in runs:
        if r.exit_code != EXIT_OK:
            _err(f"{r.scenario.name} ({r.variant}): {r.solution.status.value}")
            return r.exit_code
    a, b = runs
    rep = compare((a.schedule, a.cost), (b.schedule, b.cost))
    doc = _stamp({"a": a.summary, "b": b.summary, "comparison": rep.as_dict()}, args)
    out = _out_dir(args)
    (out / "comparison.json").write_text(_dump_json(doc))
    (out / "comparison_deltas.csv").write_text(comparison_csv(rep))
    pct = "n/a" if rep.percent_reduction is None else f"{rep.percent_reduction:.2f}%"
    print(f"a: {a.scenario.name} ({a.variant}) cost {rep.cost_a:.2f}")
    print(f"b: {b.scenario.name} ({b.variant}) cost {rep.cost_b:.2f}")
    print(f"delta {rep.cost_delta:.2f}, reduction {pct}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        s = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        _err(f"{args.scenario}: file not found ({exc.filename})")
        return EXIT_INPUT
    except (ScenarioError, TimeSeriesError, OSError) as exc:
        _err(f"{args.scenario}: {exc}")
        return EXIT_INPUT
    violations = validate_scenario(s)
    for v in violations:
        print(json.dumps(v.as_dict(), sort_keys=True))
    return EXIT_VIOLATIONS if violations else EXIT_OK


# --------------------------------------------------------------------------
# retrieval

def cmd_index(args) -> int:
    try:
        docs = load_corpus(args.corpus)
        chunks = chunk_corpus(docs, args.window, args.overlap)
    except (FileNotFoundError, EmptyCorpus, UnicodeDecodeError, ValueError) as exc:
        _err(f"{args.corpus}: {exc}")
        return EXIT_INPUT
    index = build_index(chunks, HashingEmbedder(args.dim))
    out = Path(args.index)
    out.parent.mkdir(parents=True, exist_ok=True)
    index.save(out)
    print(f"indexed {len(docs)} documents as {len(chunks)} chunks into {out}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    try:
        index = RetrievalIndex.load(args.index)
    except (OSError, RetrievalError, ValueError) as exc:
        _err(f"{args.index}: {exc}")
        return EXIT_INPUT
    embedder = HashingEmbedder(index.dim)
    if index.backend_id != embedder.backend_id:
        _err(f"index backend {index.backend_id!r} does not match {embedder.backend_id!r}")
        return EXIT_INPUT
    try:
        hits = top_k(embedder.embed(args.query), index, args.k)
    except (EmptyIndex, RetrievalError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    for rank, (ch, score) in enumerate(hits, 1):
        print(json.dumps({"rank": rank, "chunk_id": ch.id, "doc_id": ch.doc_id, "score": score,
                          "span": list(ch.span)}, sort_keys=True))
    print()
    print(aggregate_context(args.query, hits).context_text)
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--no-timestamp", action="store_true", help="omit wall-clock fields from outputs")

    solve = _Parser(add_help=False)
    solve.add_argument("--out", default=".", help="output directory (default: current directory)")
    solve.add_argument("--variant", choices=("correct", "misformulated"), default="correct")
    solve.add_argument("--tol", type=_positive_float, default=1e-6, help="verification tolerance")
    solve.add_argument("--max-nodes", type=_positive_int, default=SolverOptions().max_nodes)

    p = _Parser(prog="dsmopt", description="Demand-side scheduling optimizer and retrieval tools.")
    p.add_argument("--version", action="version", version=f"dsmopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("optimize", parents=[common, solve], help="solve one scenario")
    q.add_argument("scenario")
    q.set_defaults(func=cmd_optimize)

    q = sub.add_parser("compare", parents=[common, solve],
                       help="compare two scenarios, or the misformulated and correct models")
    q.add_argument("scenario_a")
    q.add_argument("scenario_b", nargs="?")
    q.set_defaults(func=cmd_compare)

    q = sub.add_parser("validate", parents=[common], help="list scenario violations as JSON lines")
    q.add_argument("scenario")
    q.set_defaults(func=cmd_validate)

    q = sub.add_parser("index", parents=[common], help="chunk and embed a text corpus")
    q.add_argument("corpus")
    q.add_argument("index")
    q.add_argument("--window", type=_positive_int, default=DEFAULT_WINDOW)
    q.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP)
    q.add_argument("--dim", type=_positive_int, default=DEFAULT_DIM)
    q.set_defaults(func=cmd_index)

    q = sub.add_parser("retrieve", parents=[common], help="query an index")
    q.add_argument("index")
    q.add_argument("query")
    q.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    q.set_defaults(func=cmd_retrieve)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _err(f"usage error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
