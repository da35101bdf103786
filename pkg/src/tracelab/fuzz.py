"""Randomized scenario generators and batch drivers.

Every generated scenario is a plain payload dict, so a failing case can be
dumped and replayed through the CLI unchanged.  A batch fails loudly: any
engine invariant alarm propagates out of the batch runner.
"""
from __future__ import annotations

import random
from fractions import Fraction

from . import costs
from .errors import ScenarioError
from .scenarios import run_boxpromo, run_synth


def random_word(rng: random.Random, length: int) -> str:
    return "".join(rng.choice("01") for _ in range(length))


def fuzz_cost_table(rng: random.Random, horizon: int) -> costs.CostTable:
    """Small family of genuinely decaying monotone tables."""
    width = horizon
    flavor = rng.randrange(4)
    if flavor == 0:
        row = costs.dyadic_decay_row(width)
        rows = [row] * horizon
    elif flavor == 1:
        scale = rng.choice([Fraction(1, 2), Fraction(3, 4)])
        row = costs.dyadic_decay_row(width, scale=scale)
        rows = [row] * horizon
    elif flavor == 2:
        start = rng.randrange(2, 7)
        zero = tuple(Fraction(0) for _ in range(width))
        row = costs.dyadic_decay_row(width)
        rows = [zero] * min(start, horizon) + [row] * max(0, horizon - start)
    else:
        start = rng.randrange(2, 7)
        low = costs.dyadic_decay_row(width, scale=Fraction(1, 2))
        high = costs.dyadic_decay_row(width)
        rows = [low] * min(start, horizon) + [high] * max(0, horizon - start)
    return costs.CostTable(tuple(rows), normalized=True)


CANNED_SCRIPT = [
    "4 I2.2 000",
    "4 I2.2 001",
    "5 M2.2:1 0000",
    "5 M2.2:2 0010",
    "5 M2.2:1+2 0000",
    "5 M2.2:1+2 0010",
]


def canned_scripted_payload(horizon: int = 14) -> dict:
    """Deterministic conflict scenario: two same-length candidates agreeing
    below the previous tested length, fed on every class their success check
    inspects."""
    table = costs.static_table(costs.dyadic_decay_row(horizon), horizon, normalized=True)
    return {
        "kind": "boxpromo",
        "horizon": horizon,
        "overhead": 1,
        "top_level": 2,
        "cost_table": costs.format_cost_table(table),
        "oracle": {"policy": "scripted", "script": list(CANNED_SCRIPT)},
    }


def boxpromo_payload(rng: random.Random, index: int, horizon: int | None = None) -> dict:
    if index % 5 == 4:
        return canned_scripted_payload(horizon=max(14, horizon or 14))
    overhead = rng.choice([1, 2])
    top_level = rng.randint(max(2, overhead), 4)
    horizon = horizon or rng.randint(18, 34)
    table = fuzz_cost_table(rng, horizon)
    payload = {
        "kind": "boxpromo",
        "horizon": horizon,
        "overhead": overhead,
        "top_level": top_level,
        "cost_table": costs.format_cost_table(table),
        "ground_truth": random_word(rng, horizon),
    }
    if index % 5 in (0, 1):
        payload["oracle"] = {"policy": "honest", "delay": rng.randint(0, 2)}
    else:
        payload["oracle"] = {
            "policy": "random",
            "seed": rng.randrange(2**30),
            "activate_rate": rng.choice([0.4, 0.6, 0.8]),
            "feed_rate": rng.choice([0.7, 0.9]),
            "junk_rate": rng.choice([0.1, 0.3]),
        }
    return payload


def _flip(word: str, position: int) -> str:
    bit = "1" if word[position] == "0" else "0"
    return word[: position] + bit + word[position + 1 :]


def synth_approximation(
    rng: random.Random,
    horizon: int,
    flips: list[tuple[int, int]],
    schedule: dict | None = None,
) -> str:
    """Text block for an approximation that starts random and applies the
    given (stage, position) flips."""
    width = horizon
    word = random_word(rng, width)
    rows = [word]
    flip_map: dict[int, list[int]] = {}
    for stage, position in flips:
        flip_map.setdefault(stage, []).append(position)
    for stage in range(1, horizon):
        for position in flip_map.get(stage, ()):
            word = _flip(word, position)
        rows.append(word)
    lines = [f"{horizon} {width}"] + rows
    for (s, x), wall in sorted((schedule or {}).items()):
        lines.append(f"({s},{x},{'∞' if wall is None else wall})")
    return "\n".join(lines)


def listed_cost_block(rng: random.Random, horizon: int, flavor: str | None = None) -> str:
    """Listed-form requirement tables; flat and slowly-decaying rows dominate
    the synthesized initial costs, which is what makes a requirement worry."""
    flavor = flavor or rng.choice(["flat", "flat", "slow", "dyadic"])
    if flavor == "flat":
        scale = rng.choice([Fraction(1), Fraction(1, 2)])
        base = tuple(scale for _ in range(horizon))
    elif flavor == "slow":
        base = tuple(Fraction(1, 2 ** (x // 4)) for x in range(horizon))
    else:
        base = costs.dyadic_decay_row(horizon, shift=rng.randint(1, 3))
    rows = tuple(
        tuple(v if x < s else Fraction(0) for x, v in enumerate(base))
        for s in range(horizon)
    )
    table = costs.CostTable(rows, normalized=True, listed_form=True)
    return costs.format_cost_table(table)


def synth_payload(
    rng: random.Random,
    index: int,
    horizon: int = 120,
    settle_by: int | None = None,
    min_flip_position: int = 4,
    max_flips: int = 2,
    slow_maps: bool = False,
    requirement_flavor: str | None = None,
) -> dict:
    requirements = []
    delays = []
    for r in range(rng.randint(1, 2)):
        delay = rng.randint(8, 20) if slow_maps else rng.randint(0, 2)
        delays.append(delay)
        stage_map = [[i, i, i + delay] for i in range(horizon)]
        requirements.append(
            {
                "cost_table": listed_cost_block(rng, horizon, flavor=requirement_flavor),
                "stage_map": stage_map,
            }
        )
    settle = settle_by if settle_by is not None else max(4, horizon // 3)
    flips = []
    for _ in range(rng.randint(0, max_flips)):
        if slow_maps:
            # A change only worries a requirement when it lands after the
            # checkpoint frontier has crawled past its position; put flips
            # in that window.
            lo = max(delays) + min_flip_position + 6
            stage = rng.randint(min(lo, horizon - 10), max(min(lo, horizon - 10) + 1, horizon - 8))
        else:
            stage = rng.randint(2, max(3, settle - 1))
        position = rng.randint(min_flip_position, max(min_flip_position + 1, min(horizon // 2, 10)))
        flips.append((stage, position))
        if slow_maps and rng.random() < 0.5 and stage + 4 < horizon - 4:
            # Undo the change shortly afterwards: a transient the cover
            # records but the limit forgets.
            flips.append((stage + rng.randint(2, 4), position))
    return {
        "kind": "synth",
        "horizon": horizon,
        "budget_exp": rng.choice([0, 1, 2]),
        "approximation": synth_approximation(rng, horizon, flips),
        "requirements": requirements,
        "eps": ["1/2", "1/4", "1/8"],
    }


def fuzz(kind: str, count: int, seed: int, **params) -> dict:
    if count < 1:
        raise ScenarioError("fuzz batch needs a positive count")
    rng = random.Random(seed)
    if kind == "boxpromo":
        return _fuzz_boxpromo(rng, count, **params)
    if kind == "synth":
        return _fuzz_synth(rng, count, **params)
    raise ScenarioError(f"unknown fuzz kind {kind!r}")


def _fuzz_boxpromo(rng: random.Random, count: int, horizon: int | None = None) -> dict:
    conflicts = 0
    witness_stages = 0
    max_trace = 0
    extractions = 0
    oracles: dict[str, int] = {}
    for index in range(count):
        payload = boxpromo_payload(rng, index, horizon=horizon)
        report = run_boxpromo(payload)
        policy = payload["oracle"]["policy"]
        oracles[policy] = oracles.get(policy, 0) + 1
        conflicts += report["tallies"]["conflicts"]
        witness_stages += len(report["witness_audits"])
        max_trace = max(max_trace, report["tallies"]["max_trace"])
        if "steps" in report.get("extraction", {}):
            extractions += 1
    return {
        "kind": "boxpromo-fuzz",
        "runs": count,
        "ok": True,
        "tallies": {
            "conflicts": conflicts,
            "witness_audited_stages": witness_stages,
            "max_trace": max_trace,
            "extractions": extractions,
            "oracles": oracles,
        },
    }


def _fuzz_synth(rng: random.Random, count: int, horizon: int = 120, slow_share: float = 0.3) -> dict:
    halted = 0
    doubled = 0
    benign_checked = 0
    for index in range(count):
        payload = synth_payload(
            rng,
            index,
            horizon=horizon,
            slow_maps=rng.random() < slow_share,
            min_flip_position=2 if rng.random() < 0.5 else 4,
            max_flips=3,
        )
        report = run_synth(payload)
        if report["halted_at"] is not None:
            halted += 1
        doubled += len(report["doubling_stages"])
        for entry in report["benign"].values():
            benign_checked += 1
            if not entry["ok"]:
                raise ScenarioError("benignity bound failed in a fuzz run")
    return {
        "kind": "synth-fuzz",
        "runs": count,
        "ok": True,
        "tallies": {
            "halted": halted,
            "doubling_stages": doubled,
            "benign_checks": benign_checked,
        },
    }
