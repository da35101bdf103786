"""Scenario files (JSON wrapping the plain-text table formats), batch
execution, and machine-readable reports.

Machine reports are plain JSON-compatible dicts; serialize with sorted keys
and they are byte-stable for a fixed scenario and seed.  Wall-clock timings
never enter machine reports, only the human-readable table output.
"""
from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import approximations as appr_mod
from . import costs
from .errors import ScenarioError
from .promotion import PromotionEngine
from .synthesis import (
    PartialStageMap,
    Requirement,
    SynthesisRun,
    audit_requirement,
)
from .tracer import HonestPolicy, RandomPolicy, ScriptedPolicy


def fraction_str(value: Fraction) -> str:
    value = Fraction(value)
    return f"{value.numerator}/{value.denominator}"


def text_block(value) -> str:
    if isinstance(value, list):
        return "\n".join(str(line) for line in value)
    if isinstance(value, str):
        return value
    raise ScenarioError("expected a text block (string or list of lines)")


def parse_script(text: str) -> list[tuple[int, str, str]]:
    """Lines of 'stage box value'; blank lines and #-comments are skipped."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3 or not parts[0].isdigit():
            raise ScenarioError(f"line {lineno}: expected 'stage box value', got {line!r}")
        entries.append((int(parts[0]), parts[1], parts[2]))
    return entries


def load_scenario(source) -> dict:
    if isinstance(source, dict):
        payload = source
    else:
        path = Path(source)
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(payload, dict) or "kind" not in payload:
        raise ScenarioError("scenario must be an object with a 'kind' field")
    if payload["kind"] not in ("boxpromo", "synth", "costfn-check"):
        raise ScenarioError(f"unknown scenario kind {payload['kind']!r}")
    return payload


# ---- box-promotion scenarios ------------------------------------------------


def _build_policy(spec: dict, layout, ground_truth: Optional[str]):
    name = spec.get("policy")
    if name == "honest":
        if ground_truth is None:
            raise ScenarioError("honest oracle needs a ground truth word")
        return HonestPolicy(delay=int(spec.get("delay", 1)))
    if name == "scripted":
        return ScriptedPolicy(parse_script(text_block(spec.get("script", ""))), layout)
    if name == "random":
        return RandomPolicy(
            seed=int(spec.get("seed", 0)),
            activate_rate=float(spec.get("activate_rate", 0.5)),
            feed_rate=float(spec.get("feed_rate", 0.8)),
            junk_rate=float(spec.get("junk_rate", 0.2)),
        )
    raise ScenarioError(f"unknown oracle policy {name!r}")


def build_promotion_engine(payload: dict) -> PromotionEngine:
    horizon = int(payload.get("horizon", 0))
    if horizon < 2:
        raise ScenarioError("boxpromo scenario needs a horizon of at least 2")
    overhead = int(payload.get("overhead", 1))
    top_level = int(payload.get("top_level", 3))
    cost = costs.parse_cost_table(
        text_block(payload["cost_table"]), normalized=bool(payload.get("normalized", True))
    )
    ground_truth = payload.get("ground_truth")
    if ground_truth is None and "approximation" in payload:
        block = appr_mod.parse_word_approx(text_block(payload["approximation"]))
        ground_truth = block.rows[-1]
    slack = None
    if "slack" in payload:
        slack = {int(k): int(v) for k, v in payload["slack"].items()}
    from .promotion import marker_table, slack_from_markers  # local to avoid cycles

    layout_slack = slack or slack_from_markers(marker_table(cost, top_level), top_level)
    from .tracer import BoxLayout

    layout = BoxLayout(overhead, layout_slack, top_level)
    policy = _build_policy(payload.get("oracle", {"policy": "honest"}), layout, ground_truth)
    return PromotionEngine(
        cost=cost,
        overhead=overhead,
        top_level=top_level,
        horizon=horizon,
        policy=policy,
        ground_truth=ground_truth,
        slack=layout_slack,
        family_cap=int(payload.get("family_cap", 20000)),
    )


def run_boxpromo(payload: dict) -> dict:
    engine = build_promotion_engine(payload)
    engine.run()
    report = {
        "kind": "boxpromo",
        "parameters": {
            "overhead": engine.overhead,
            "top_level": engine.top_level,
            "horizon": engine.horizon,
            "oracle": payload.get("oracle", {}).get("policy", "honest"),
        },
        "stages": engine.stage_log,
        "levels": {
            str(n): {
                "lengths": list(state.lengths),
                "added": list(state.added),
                "lengths_capacity": engine.layout.lengths_capacity(n),
                "trace_capacity": engine.layout.trace_capacity(n),
                "conflicts": {
                    str(slot): {"stage": first, "pair": list(pair)}
                    for slot, (first, pair) in sorted(state.conflicts.items())
                },
                "candidates": {
                    str(slot): [c.word for c in cands]
                    for slot, cands in sorted(state.listed.items())
                },
                "dropped_promotions": state.dropped_promotions,
            }
            for n, state in sorted(engine.levels.items())
        },
        "witness_audits": [
            {
                "level": a.level,
                "stage": a.stage,
                "conflicted": list(a.conflicted),
                "box": a.pattern,
                "chain_sizes": list(a.chain_sizes),
                "deficits": list(a.deficits),
                "trace_members": a.trace_members,
                "trace_size": a.trace_size,
            }
            for a in engine.witness_audits
        ],
        "tallies": {
            "conflicts": sum(len(s.conflicts) for s in engine.levels.values()),
            "max_trace": engine.max_trace_seen,
            "class_family": {
                str(n): len(engine.env.classes.get(n, {})) for n in sorted(engine.levels)
            },
        },
    }
    is_honest = getattr(engine.policy, "kind", "") == "honest"
    if is_honest and engine.env.ground_truth is not None:
        extraction = engine.extract_approximation()
        if extraction.anchor and extraction.anchor_stage < engine.horizon:
            engine.uniqueness_sweep(extraction.anchor, extraction.anchor_stage)
        report["extraction"] = {
            "anchor": extraction.anchor,
            "anchor_stage": extraction.anchor_stage,
            "truncated_at": extraction.truncated_at,
            "steps": [
                {
                    "index": s.index,
                    "stage": s.stage,
                    "word": s.word,
                    "change_at": s.change_at,
                    "cost": fraction_str(s.cost),
                }
                for s in extraction.steps
            ],
            "expensive_counts": {
                str(n): len(hits) for n, hits in sorted(extraction.expensive.items())
            },
            "total_cost": fraction_str(extraction.total_cost),
            "layered_bound": fraction_str(extraction.layered_bound),
        }
    else:
        report["extraction"] = {"skipped": "extraction needs an honest oracle over a ground truth"}
    return report


# ---- synthesis scenarios -----------------------------------------------------


def build_synthesis_run(payload: dict) -> SynthesisRun:
    horizon = int(payload.get("horizon", 0))
    approximation = appr_mod.parse_word_approx(text_block(payload["approximation"]))
    requirements = []
    for block in payload.get("requirements", []):
        table = costs.parse_cost_table(
            text_block(block["cost_table"]), normalized=True, listed_form=True
        )
        stage_map = PartialStageMap([tuple(entry) for entry in block["stage_map"]])
        requirements.append(Requirement(table, stage_map))
    return SynthesisRun(
        approximation,
        int(payload.get("budget_exp", 0)),
        requirements,
        horizon,
        width=payload.get("width"),
    )


def write_synth_artifacts(outputs, directory) -> list[str]:
    """Emit the synthesized table, the stage maps, and the cover as files."""
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    (target / "c.table").write_text(costs.format_cost_table(outputs.cost_table))
    (target / "speedup.map").write_text(
        "".join(f"{i} {v}\n" for i, v in enumerate(outputs.speedup))
    )
    written = ["c.table", "speedup.map"]
    for e, checkpoints in enumerate(outputs.checkpoints):
        name = f"checkpoints-{e}.map"
        (target / name).write_text(
            "".join(f"{i} {v}\n" for i, v in enumerate(checkpoints))
        )
        written.append(name)
    (target / "cover.pairs").write_text(
        "".join(
            f"{x} {n} {at}\n"
            for x, n, at in sorted((x, n, at) for (x, n), at in outputs.cover.pairs.items())
        )
    )
    written.append("cover.pairs")
    return written


def run_synth(payload: dict, artifacts_dir=None) -> dict:
    run = build_synthesis_run(payload)
    outputs = run.run()
    eps_list = [Fraction(e) for e in payload.get("eps", ["1/2", "1/4", "1/8"])]
    benign = {}
    for eps in eps_list:
        seq = costs.marker_sequence(outputs.cost_table, eps)
        bound = outputs.bound(eps)
        benign[fraction_str(eps)] = {
            "count": seq.count,
            "bound": bound,
            "ok": seq.count <= bound,
        }
    audits = []
    if payload.get("audit", True):
        for e in range(len(outputs.requirements)):
            if outputs.activity[e] <= 1:
                audit = audit_requirement(outputs, e)
                audits.append(
                    {
                        "requirement": e,
                        "charges": [
                            {
                                "index": c.index,
                                "code": c.code,
                                "position": c.position,
                                "amount": fraction_str(c.amount),
                                "case": c.case,
                            }
                            for c in audit.charges
                        ],
                        "persistent_total": fraction_str(audit.persistent_total),
                        "transient_total": fraction_str(audit.transient_total),
                    }
                )
            else:
                audits.append({"requirement": e, "skipped": "activity sum above 1"})
    report = {
        "kind": "synth",
        "parameters": {
            "budget_exp": outputs.budget_exp,
            "horizon": run.horizon,
            "requirements": len(outputs.requirements),
        },
        "halted_at": outputs.halted_at,
        "measured": fraction_str(outputs.measured),
        "speedup": list(outputs.speedup),
        "checkpoints": [list(c) for c in outputs.checkpoints],
        "first_seen": list(outputs.first_seen),
        "activity": [fraction_str(a) for a in outputs.activity],
        "doubling_stages": [list(d) for d in outputs.doubling_stages],
        "worried": [list(w) for w in outputs.worried_log],
        "benign": benign,
        "cover": sorted(
            [x, n, at] for (x, n), at in outputs.cover.pairs.items()
        ),
        "audits": audits,
        "totality": {
            "speedup_frontier": outputs.frontier,
            "checkpoint_frontiers": [len(c) - 1 for c in outputs.checkpoints],
        },
        "cost_table_shape": [outputs.cost_table.horizon, outputs.cost_table.width],
    }
    if artifacts_dir is not None:
        report["artifacts"] = write_synth_artifacts(outputs, artifacts_dir)
    return report


def run_costfn_check(payload: dict) -> dict:
    table = costs.parse_cost_table(
        text_block(payload["cost_table"]),
        normalized=bool(payload.get("normalized", False)),
    )
    eps_list = [Fraction(e) for e in payload.get("eps", ["1/2"])]
    bound = {Fraction(k): int(v) for k, v in payload.get("bound", {}).items()}
    entries = {}
    all_ok = True
    for eps in eps_list:
        seq = costs.marker_sequence(table, eps)
        entry = {
            "markers": list(seq.markers),
            "count": seq.count,
            "truncated": seq.truncated,
        }
        if eps in bound:
            entry["bound"] = bound[eps]
            entry["ok"] = seq.count <= bound[eps]
            all_ok = all_ok and entry["ok"]
        entries[fraction_str(eps)] = entry
    # The vanishing-tail condition is observed and reported, never enforced:
    # tables with a fat tail are legitimate inputs elsewhere.
    tail = table.value(table.horizon - 1, table.width - 1)
    tail_threshold = Fraction(payload.get("limit_threshold", "1/8"))
    return {
        "kind": "costfn-check",
        "shape": [table.horizon, table.width],
        "thresholds": entries,
        "limit_tail": {
            "value": fraction_str(tail),
            "threshold": fraction_str(tail_threshold),
            "below": tail <= tail_threshold,
        },
        "ok": all_ok,
    }


def run_scenario(source) -> dict:
    payload = load_scenario(source)
    if payload["kind"] == "boxpromo":
        return run_boxpromo(payload)
    if payload["kind"] == "synth":
        return run_synth(payload)
    return run_costfn_check(payload)


def machine_format(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def table_format(report: dict) -> str:
    """Compact human-readable summary; details stay in the machine format."""
    lines = [f"kind: {report.get('kind')}"]
    if report.get("kind") == "boxpromo":
        tallies = report["tallies"]
        lines.append(f"conflicts: {tallies['conflicts']}  max-trace: {tallies['max_trace']}")
        lines.append(f"witness audits: {len(report['witness_audits'])}")
        extraction = report.get("extraction", {})
        if "steps" in extraction:
            lines.append(
                f"extraction: {len(extraction['steps'])} steps, "
                f"total cost {extraction['total_cost']}"
            )
        else:
            lines.append(f"extraction: {extraction.get('skipped', 'n/a')}")
    elif report.get("kind") == "synth":
        lines.append(f"halted_at: {report['halted_at']}  measured: {report['measured']}")
        lines.append(f"speedup frontier: {report['totality']['speedup_frontier']}")
        for eps, entry in sorted(report["benign"].items()):
            lines.append(
                f"benign @{eps}: count {entry['count']} <= bound {entry['bound']}: {entry['ok']}"
            )
    elif report.get("kind") == "costfn-check":
        for eps, entry in sorted(report["thresholds"].items()):
            verdict = entry.get("ok", "n/a")
            lines.append(f"@{eps}: count {entry['count']} truncated={entry['truncated']} ok={verdict}")
    elif "runs" in report:
        lines.append(f"runs: {report['runs']}  ok: {report.get('ok')}")
        for key, value in sorted(report.get("tallies", {}).items()):
            lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"
