"""Stagewise 0/1 word approximations with explicit convergence schedules,
change sets, change-set decoding, and the obedience speed-up construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .costs import CostTable, ZERO, first_difference
from .errors import HorizonExhausted, ScenarioError
from .words import check_word


def pair_code(x: int, n: int) -> int:
    """Diagonal pairing; satisfies x <= pair_code(x, n)."""
    return (x + n) * (x + n + 1) // 2 + n


def unpair(code: int) -> tuple[int, int]:
    diag = 0
    while (diag + 1) * (diag + 2) // 2 <= code:
        diag += 1
    n = code - diag * (diag + 1) // 2
    return diag - n, n


def _pairing_self_test() -> None:
    seen = {}
    for x in range(12):
        for n in range(12):
            code = pair_code(x, n)
            if code < x:
                raise AssertionError(f"pairing lost monotonicity at ({x},{n})")
            if code in seen:
                raise AssertionError(f"pairing collision at ({x},{n}) and {seen[code]}")
            seen[code] = (x, n)
            if unpair(code) != (x, n):
                raise AssertionError(f"unpair mismatch at ({x},{n})")


_pairing_self_test()


@dataclass(frozen=True)
class WordApproximation:
    """Rows A_s over positions 0..width-1 plus a readability schedule.

    `schedule` maps (stage, position) to the wall stage at which the cell
    becomes readable (None = never); cells not listed are readable from their
    own stage on.  `limit` optionally records the intended limit word.
    """

    rows: tuple[str, ...]
    schedule: dict[tuple[int, int], Optional[int]] = field(default_factory=dict)
    limit: Optional[str] = None

    def __post_init__(self):
        if not self.rows:
            raise ScenarioError("approximation needs at least one row")
        width = len(self.rows[0])
        for s, row in enumerate(self.rows):
            check_word(row)
            if len(row) != width:
                raise ScenarioError(f"row {s} has width {len(row)}, expected {width}")
        for (s, x), wall in self.schedule.items():
            if not (0 <= s < len(self.rows) and 0 <= x < width):
                raise ScenarioError(f"schedule entry ({s},{x}) outside the table")
            if wall is not None and wall < s:
                raise ScenarioError(f"schedule entry ({s},{x}) readable before its stage")
        if self.limit is not None:
            check_word(self.limit)
            if len(self.limit) != width:
                raise ScenarioError("limit width differs from table width")
            if self.rows[-1] != self.limit:
                raise ScenarioError("limit never reached within the horizon")

    @property
    def horizon(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def readable(self, stage: int, position: int, wall: int) -> bool:
        if stage >= self.horizon or position >= self.width:
            return False
        ready = self.schedule.get((stage, position), stage)
        return ready is not None and ready <= wall


def readable_depth(appr: WordApproximation, stage: int) -> int:
    """Greatest b < stage with every cell (u, x), u, x <= b readable at wall
    `stage`; 0 when no such b exists."""
    if stage < 1:
        raise ScenarioError("readable_depth needs a stage >= 1")
    top = min(stage - 1, appr.horizon - 1, appr.width - 1)
    for b in range(top, -1, -1):
        if all(appr.readable(u, x, stage) for u in range(b + 1) for x in range(b + 1)):
            return b
    return 0


@dataclass(frozen=True)
class ChangeSet:
    """Pairs (position, n) recording that the position changed at least n
    times, with the stage index at which each pair was enumerated."""

    pairs: dict[tuple[int, int], int]

    def __post_init__(self):
        for (x, n), stage in self.pairs.items():
            if n < 1:
                raise ScenarioError(f"change count below 1 in pair ({x},{n})")
            if n > 1 and (x, n - 1) not in self.pairs:
                raise ScenarioError(f"pair ({x},{n}) present without ({x},{n - 1})")

    def max_changes(self, position: int) -> int:
        n = 0
        while (position, n + 1) in self.pairs:
            n += 1
        return n

    def codes_by_stage(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for (x, n), stage in self.pairs.items():
            out.setdefault(stage, []).append(pair_code(x, n))
        for codes in out.values():
            codes.sort()
        return out

    def word_at(self, stage: int, width: int) -> str:
        bits = ["0"] * width
        for (x, n), enum_stage in self.pairs.items():
            code = pair_code(x, n)
            if enum_stage <= stage and code < width:
                bits[code] = "1"
        return "".join(bits)


def compose_rows(appr: WordApproximation, speedup: Optional[Sequence[int]]) -> list[str]:
    if speedup is None:
        return list(appr.rows)
    rows = []
    previous = None
    for value in speedup:
        if previous is not None and value <= previous:
            raise ScenarioError("speed-up map must be strictly increasing")
        previous = value
        if value >= appr.horizon:
            break  # beyond-horizon stages are clipped
        rows.append(appr.rows[value])
    return rows


def change_set(appr: WordApproximation, speedup: Optional[Sequence[int]] = None) -> ChangeSet:
    """Change set of the (optionally sped-up) approximation.

    A pair (x, n) is enumerated at the first stage by which position x has
    changed n times; stage indices refer to the composed sequence.
    """
    rows = compose_rows(appr, speedup)
    pairs: dict[tuple[int, int], int] = {}
    counts = [0] * appr.width
    for s in range(1, len(rows)):
        if rows[s] == rows[s - 1]:
            continue
        for x in range(appr.width):
            if rows[s][x] != rows[s - 1][x]:
                counts[x] += 1
                pairs[(x, counts[x])] = s
    return ChangeSet(pairs)


def decode(cs: ChangeSet, base_row: str) -> str:
    """Limit word from a complete change set: flip each position whose total
    change count is odd."""
    bits = list(check_word(base_row))
    for x in range(len(bits)):
        if cs.max_changes(x) % 2 == 1:
            bits[x] = "1" if bits[x] == "0" else "0"
    return "".join(bits)


def changeset_obedience(table: CostTable, cs: ChangeSet) -> Fraction:
    """Total change cost of the change-set enumeration itself, with pairs
    living at their diagonal pair codes."""
    total = ZERO
    for stage, codes in sorted(cs.codes_by_stage().items()):
        total += table.value(stage, min(codes))
    return total


@dataclass(frozen=True)
class SpeedupStep:
    index: int
    stage: int
    position: int
    target: Fraction
    value_found: Fraction


@dataclass(frozen=True)
class SpeedupResult:
    steps: tuple[SpeedupStep, ...]
    speedup: tuple[int, ...]  # the map h, h(s) = stage of step s+1
    stage_costs: tuple[Fraction, ...]  # cost charged at each h-index >= 1
    omitted: int  # initial h-indices excluded from the tail
    tail_sum: Fraction
    full_sum: Fraction


def obedience_speedup(
    cost: CostTable,
    witness_cost: CostTable,
    target: WordApproximation,
    witness: WordApproximation,
    budget=Fraction(1),
    steps: Optional[int] = None,
) -> SpeedupResult:
    """Speed-up of `target` along which its change cost under `cost` has a
    tail bounded by `budget`.

    Searches for stage/position pairs where the cost has dropped below a
    halving target, `target` and `witness` agree on a growing prefix, and
    twice the witness cost dominates the cost on the settled prefix; the
    witness approximation is expected to change cheaply under `witness_cost`.
    Raises HorizonExhausted when `steps` search steps were demanded but the
    tables end first.
    """
    budget = Fraction(budget)
    horizon = min(target.horizon, witness.horizon, cost.horizon, witness_cost.horizon)
    found: list[SpeedupStep] = []
    prev_stage, prev_pos = 1, 1
    index = 0
    while steps is None or len(found) < steps:
        threshold = Fraction(1, 2 ** (index + 1))
        hit = None
        for t in range(prev_stage + 1, horizon):
            if any(
                2 * witness_cost.value(t, y) < cost.value(t, y) for y in range(prev_pos)
            ):
                continue
            agree = first_difference(target.rows[t], witness.rows[t])
            agree_len = target.width if agree is None else agree
            for x in range(prev_pos + 1, min(agree_len, target.width) + 1):
                if cost.value(t, x) < threshold:
                    hit = SpeedupStep(index, t, x, threshold, cost.value(t, x))
                    break
            if hit:
                break
        if hit is None:
            if steps is not None:
                raise HorizonExhausted(
                    f"search step {index} found no admissible stage/position pair "
                    f"within horizon {horizon}"
                )
            break
        found.append(hit)
        prev_stage, prev_pos = hit.stage, hit.position
        index += 1

    speedup = tuple(found[i + 1].stage for i in range(len(found) - 1))
    costs: list[Fraction] = []
    for s in range(1, len(speedup)):
        a, b = target.rows[speedup[s]], target.rows[speedup[s - 1]]
        if a == b:
            costs.append(ZERO)
        else:
            costs.append(cost.value(s, first_difference(a, b)))
    full = sum(costs, ZERO)
    omitted = 0
    tail = full
    while tail > budget and omitted < len(costs):
        tail -= costs[omitted]
        omitted += 1
    if tail > budget:
        raise HorizonExhausted(
            f"tail cost {tail} still above budget {budget} after omitting every stage"
        )
    return SpeedupResult(tuple(found), speedup, tuple(costs), omitted, tail, full)


# --- text format: "S X" header, S bit rows, optional "(s,x,wall)" schedule ---


def format_word_approx(appr: WordApproximation) -> str:
    lines = [f"{appr.horizon} {appr.width}"]
    lines.extend(appr.rows)
    for (s, x), wall in sorted(appr.schedule.items()):
        lines.append(f"({s},{x},{'∞' if wall is None else wall})")
    return "\n".join(lines) + "\n"


def parse_word_approx(text: str, limit: Optional[str] = None) -> WordApproximation:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ScenarioError("line 1: empty approximation")
    header = lines[0].split()
    if len(header) != 2 or not all(tok.isdigit() for tok in header):
        raise ScenarioError(f"line 1: expected header 'S X', got {lines[0]!r}")
    S, X = int(header[0]), int(header[1])
    if len(lines) < 1 + S:
        raise ScenarioError(f"line 1: header promises {S} rows, found {len(lines) - 1}")
    rows = []
    for i, line in enumerate(lines[1 : 1 + S], start=2):
        if len(line) != X or any(ch not in "01" for ch in line):
            raise ScenarioError(f"line {i}: expected {X} bits, got {line!r}")
        rows.append(line)
    schedule: dict[tuple[int, int], Optional[int]] = {}
    for i, line in enumerate(lines[1 + S :], start=2 + S):
        if not (line.startswith("(") and line.endswith(")")):
            raise ScenarioError(f"line {i}: expected schedule triple, got {line!r}")
        parts = [p.strip() for p in line[1:-1].split(",")]
        if len(parts) != 3:
            raise ScenarioError(f"line {i}: expected three fields in {line!r}")
        s, x = int(parts[0]), int(parts[1])
        wall = None if parts[2] in ("∞", "inf") else int(parts[2])
        schedule[(s, x)] = wall
    return WordApproximation(tuple(rows), schedule, limit)
