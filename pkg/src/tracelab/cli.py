"""Command-line front end.

Exit codes: 0 success, 1 usage or parse problem, 2 invariant violation (a
verified combinatorial bound failed), 3 horizon exhaustion where completion
was required.
"""
from __future__ import annotations

import argparse
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

from . import __version__
from . import approximations as appr_mod
from . import costs, fuzz
from .errors import HorizonExhausted, InvariantViolation, ScenarioError
from .scenarios import fraction_str, machine_format, run_scenario, table_format


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ScenarioError(message)


def _add_common(parser):
    parser.add_argument("--out", help="write the machine report to this file")
    parser.add_argument(
        "--format", choices=["table", "machine"], default="table", help="stdout format"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="tracelab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"tracelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    box = sub.add_parser("boxpromo", help="promotion-engine scenarios")
    box_sub = box.add_subparsers(dest="action", required=True)
    box_run = box_sub.add_parser("run", help="run one scenario file")
    box_run.add_argument("scenario")
    _add_common(box_run)
    box_fuzz = box_sub.add_parser("fuzz", help="run a randomized batch")
    box_fuzz.add_argument("--count", type=int, default=50)
    box_fuzz.add_argument("--seed", type=int, default=0)
    box_fuzz.add_argument("--horizon", type=int, help="fix every generated horizon")
    _add_common(box_fuzz)

    synth = sub.add_parser("synth", help="cost-synthesis scenarios")
    synth_sub = synth.add_subparsers(dest="action", required=True)
    synth_run = synth_sub.add_parser("run", help="run one scenario file")
    synth_run.add_argument("scenario")
    synth_run.add_argument(
        "--emit-tables", help="write the synthesized table, maps, and cover here"
    )
    _add_common(synth_run)
    synth_fuzz = synth_sub.add_parser("fuzz", help="run a randomized batch")
    synth_fuzz.add_argument("--count", type=int, default=20)
    synth_fuzz.add_argument("--seed", type=int, default=0)
    synth_fuzz.add_argument("--horizon", type=int, default=120)
    _add_common(synth_fuzz)

    cost = sub.add_parser("costfn", help="cost-table calculus")
    cost_sub = cost.add_subparsers(dest="action", required=True)
    markers = cost_sub.add_parser("markers", help="marker scan of a cost table")
    markers.add_argument("table")
    markers.add_argument("--eps", nargs="+", required=True)
    _add_common(markers)
    benign = cost_sub.add_parser("check-benign", help="marker counts against a bound")
    benign.add_argument("table")
    benign.add_argument("--eps", nargs="+", required=True)
    benign.add_argument(
        "--bound", nargs="+", required=True, help="entries eps=count, e.g. 1/4=4"
    )
    _add_common(benign)
    combine = cost_sub.add_parser("sum", help="weighted sum of normalized tables")
    combine.add_argument("tables", nargs="+")
    combine.add_argument("--eps", nargs="+", default=["1/2"])
    _add_common(combine)

    appr = sub.add_parser("approx", help="word-approximation operations")
    appr_sub = appr.add_subparsers(dest="action", required=True)
    cs = appr_sub.add_parser("change-set", help="change set of an approximation")
    cs.add_argument("approximation")
    cs.add_argument("--speedup", nargs="*", type=int, help="strictly increasing stages")
    _add_common(cs)
    sp = appr_sub.add_parser("speedup", help="obedience speed-up search")
    sp.add_argument("cost")
    sp.add_argument("witness_cost")
    sp.add_argument("target")
    sp.add_argument("witness")
    sp.add_argument("--budget", default="1")
    sp.add_argument("--steps", type=int)
    _add_common(sp)

    verify = sub.add_parser("verify", help="built-in verification batteries")
    verify_sub = verify.add_subparsers(dest="action", required=True)
    verify_all = verify_sub.add_parser("all", help="quick cross-module battery")
    verify_all.add_argument("--seed", type=int, default=0)
    _add_common(verify_all)
    return parser


def _emit(report: dict, args, elapsed: float) -> None:
    if args.out:
        Path(args.out).write_text(machine_format(report))
    if args.format == "machine":
        sys.stdout.write(machine_format(report))
    else:
        sys.stdout.write(table_format(report))
        sys.stdout.write(f"elapsed: {elapsed:.2f}s\n")


def _cmd_costfn(args) -> dict:
    if args.action == "markers":
        table = costs.parse_cost_table(Path(args.table).read_text())
        out = {}
        for eps in args.eps:
            seq = costs.marker_sequence(table, Fraction(eps))
            out[eps] = {
                "markers": list(seq.markers),
                "count": seq.count,
                "truncated": seq.truncated,
            }
        return {"kind": "costfn-check", "shape": [table.horizon, table.width],
                "thresholds": {k: dict(v, ok="n/a") for k, v in out.items()}, "ok": True}
    if args.action == "check-benign":
        bound = {}
        for token in args.bound:
            eps_text, _, count = token.partition("=")
            if not count.isdigit():
                raise ScenarioError(f"bad bound entry {token!r}, expected eps=count")
            bound[eps_text] = int(count)
        return run_scenario(
            {
                "kind": "costfn-check",
                "cost_table": Path(args.table).read_text(),
                "eps": args.eps,
                "bound": bound,
            }
        )
    tables = [
        costs.parse_cost_table(Path(p).read_text(), normalized=True) for p in args.tables
    ]
    parts = [
        (t, {Fraction(e) / 4: costs.marker_sequence(t, Fraction(e) / 4).count for e in args.eps})
        for t in tables
    ]
    combined, bound = costs.sum_benign(parts)
    thresholds = {}
    for eps in args.eps:
        seq = costs.marker_sequence(combined, Fraction(eps))
        thresholds[eps] = {
            "count": seq.count,
            "bound": bound(Fraction(eps)),
            "ok": seq.count <= bound(Fraction(eps)),
            "truncated": seq.truncated,
        }
    return {
        "kind": "costfn-sum",
        "parts": len(parts),
        "shape": [combined.horizon, combined.width],
        "thresholds": thresholds,
        "ok": all(v["ok"] for v in thresholds.values()),
    }


def _cmd_approx(args) -> dict:
    if args.action == "change-set":
        block = appr_mod.parse_word_approx(Path(args.approximation).read_text())
        cs = appr_mod.change_set(block, args.speedup if args.speedup else None)
        decoded = appr_mod.decode(cs, block.rows[0])
        final = (
            block.rows[-1]
            if not args.speedup
            else appr_mod.compose_rows(block, args.speedup)[-1]
        )
        return {
            "kind": "change-set",
            "pairs": sorted([x, n, at] for (x, n), at in cs.pairs.items()),
            "decoded": decoded,
            "matches_final_row": decoded == final,
        }
    cost = costs.parse_cost_table(Path(args.cost).read_text())
    witness_cost = costs.parse_cost_table(Path(args.witness_cost).read_text())
    target = appr_mod.parse_word_approx(Path(args.target).read_text())
    witness = appr_mod.parse_word_approx(Path(args.witness).read_text())
    result = appr_mod.obedience_speedup(
        cost, witness_cost, target, witness, budget=Fraction(args.budget), steps=args.steps
    )
    return {
        "kind": "speedup",
        "pairs": [[s.index, s.stage, s.position] for s in result.steps],
        "map": list(result.speedup),
        "omitted": result.omitted,
        "tail_sum": fraction_str(result.tail_sum),
        "full_sum": fraction_str(result.full_sum),
        "ok": result.tail_sum <= Fraction(args.budget),
    }


def _cmd_verify(args) -> dict:
    rng = random.Random(args.seed)
    checks = {}
    # Exhaustive change-set dominance and decoding on tiny shapes.
    from itertools import product

    table = costs.static_table(costs.dyadic_decay_row(6), 6, normalized=True)
    ok = True
    for S in (2, 3):
        for X in (1, 2):
            for bits in product("01", repeat=S * X):
                rows = tuple(
                    "".join(bits[i * X : (i + 1) * X]) for i in range(S)
                )
                block = appr_mod.WordApproximation(rows)
                cs = appr_mod.change_set(block)
                lhs = appr_mod.changeset_obedience(table, cs)
                rhs = costs.obedience_sum(table, rows)
                ok = ok and lhs <= rhs and appr_mod.decode(cs, rows[0]) == rows[-1]
    checks["change_set_dominance_small"] = ok
    checks["boxpromo_fuzz"] = fuzz.fuzz("boxpromo", 10, rng.randrange(2**30))["ok"]
    checks["synth_fuzz"] = fuzz.fuzz("synth", 5, rng.randrange(2**30), horizon=60)["ok"]
    totalize_ok = True
    for _ in range(20):
        cells = []
        for u in range(5):
            row = []
            for x in range(5):
                roll = rng.random()
                if roll < 0.1:
                    row.append(None)
                elif roll < 0.2:
                    row.append((Fraction(2), 0))
                else:
                    row.append((Fraction(1, 2 ** (x + 1)), rng.randrange(3)))
            cells.append(tuple(row))
        table_out = costs.totalize(costs.PartialCostTable(tuple(cells)), horizon=8, width=6)
        totalize_ok = totalize_ok and table_out.horizon == 8
    checks["totalize_total"] = totalize_ok
    return {"kind": "verify", "checks": checks, "ok": all(checks.values()), "runs": len(checks)}


def main(argv=None) -> int:
    parser = build_parser()
    started = time.monotonic()
    try:
        args = parser.parse_args(argv)
        if args.command == "boxpromo" and args.action == "run":
            report = run_scenario(args.scenario)
        elif args.command == "boxpromo":
            report = fuzz.fuzz("boxpromo", args.count, args.seed, horizon=args.horizon)
        elif args.command == "synth" and args.action == "run":
            from .scenarios import load_scenario, run_synth

            report = run_synth(load_scenario(args.scenario), artifacts_dir=args.emit_tables)
        elif args.command == "synth":
            report = fuzz.fuzz("synth", args.count, args.seed, horizon=args.horizon)
        elif args.command == "costfn":
            report = _cmd_costfn(args)
        elif args.command == "approx":
            report = _cmd_approx(args)
        else:
            report = _cmd_verify(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except HorizonExhausted as exc:
        print(f"horizon exhausted: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _emit(report, args, time.monotonic() - started)
    if report.get("ok", True) is False:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
