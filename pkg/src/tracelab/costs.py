"""Cost tables with exact rational entries, marker scans, benignity checks,
weighted sums, obedience sums, and totalization of partial tables.

A cost table holds q(s, x) for stages 0 <= s < horizon and positions
0 <= x < width.  Rows are non-increasing in x, columns non-decreasing in s.
Positions at or beyond the width read as 0; facts that depend on stages beyond
the horizon are reported with an explicit `truncated` flag rather than
silently treated as final.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .errors import ScenarioError

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True)
class CostTable:
    rows: tuple[tuple[Fraction, ...], ...]
    normalized: bool = False
    listed_form: bool = False

    def __post_init__(self):
        if not self.rows:
            raise ScenarioError("cost table needs at least one stage row")
        width = len(self.rows[0])
        checked_rows: set[int] = set()
        for s, row in enumerate(self.rows):
            if len(row) != width:
                raise ScenarioError(f"row {s} has width {len(row)}, expected {width}")
            if id(row) not in checked_rows:
                checked_rows.add(id(row))
                for x, value in enumerate(row):
                    if value < 0:
                        raise ScenarioError(f"negative cost at ({s},{x})")
                    if x > 0 and row[x - 1] < value:
                        raise ScenarioError(f"row {s} increases at position {x}")
                    if self.normalized and value > 1:
                        raise ScenarioError(f"value above 1 at ({s},{x}) in normalized table")
            if self.listed_form and s < width and any(v != 0 for v in row[s:]):
                raise ScenarioError(f"nonzero tail value in listed-form row {s}")
            if s > 0 and self.rows[s - 1] is not row:
                previous = self.rows[s - 1]
                for x in range(width):
                    p, v = previous[x], row[x]
                    if p is not v and p > v:
                        raise ScenarioError(f"column {x} decreases at stage {s}")

    @property
    def horizon(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def value(self, stage: int, position: int) -> Fraction:
        """Table entry; positions beyond the width read as 0."""
        if position >= self.width:
            return ZERO
        return self.rows[stage][position]


@dataclass(frozen=True)
class MarkerSequence:
    """Stages where the approximation's value at the previous marker first
    reaches the threshold.  `truncated` means a longer horizon could extend
    the sequence, so `count` is only a lower bound on the true count."""

    epsilon: Fraction
    markers: tuple[int, ...]
    truncated: bool

    @property
    def count(self) -> int:
        return len(self.markers)


def marker_sequence(table: CostTable, epsilon) -> MarkerSequence:
    eps = Fraction(epsilon)
    if eps <= 0:
        raise ScenarioError("threshold must be positive")
    marks = [0]
    while True:
        prev = marks[-1]
        found = None
        for s in range(prev + 1, table.horizon):
            if table.value(s, prev) >= eps:
                found = s
                break
        if found is None:
            break
        marks.append(found)
    # The scan ends because no in-horizon stage reaches eps at the last
    # marker.  Columns are non-decreasing, so a later stage still could,
    # unless the table's cap already rules it out.
    truncated = not (table.normalized and eps > ONE)
    return MarkerSequence(eps, tuple(marks), truncated)


def first_difference(a: str, b: str) -> Optional[int]:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def obedience_sum(table: CostTable, rows, first_stage: int = 1) -> Fraction:
    """Total change cost of the approximation given by `rows` (a sequence of
    bit words, or any object carrying one as `.rows`).

    Stage s >= first_stage contributes q(s, x_s) when rows[s] != rows[s-1],
    where x_s is the least position of disagreement; change-free stages
    contribute nothing.
    """
    rows = getattr(rows, "rows", rows)
    total = ZERO
    last = min(len(rows), table.horizon)
    for s in range(max(1, first_stage), last):
        if rows[s] != rows[s - 1]:
            x = first_difference(rows[s], rows[s - 1])
            total += table.value(s, x)
    return total


BoundFn = Callable[[Fraction], int]


def _as_bound_fn(bound) -> BoundFn:
    if callable(bound):
        return lambda eps: int(bound(Fraction(eps)))
    if isinstance(bound, Mapping):
        table = {Fraction(k): int(v) for k, v in bound.items()}

        def lookup(eps: Fraction) -> int:
            eps = Fraction(eps)
            if eps not in table:
                raise ScenarioError(f"no bound recorded for threshold {eps}")
            return table[eps]

        return lookup
    raise ScenarioError("bound must be callable or a mapping")


def halving_exponent(epsilon) -> int:
    """Least j >= 0 with 2**-j <= epsilon."""
    eps = Fraction(epsilon)
    if eps <= 0:
        raise ScenarioError("threshold must be positive")
    j = 0
    while Fraction(1, 2**j) > eps:
        j += 1
    return j


def sum_benign(
    parts: Sequence[tuple[CostTable, object]],
    horizon: Optional[int] = None,
    width: Optional[int] = None,
) -> tuple[CostTable, BoundFn]:
    """Weighted sum of the given normalized tables, part k scaled by 2**-k and
    entering only from stage k+1 on.

    Returns the combined table and the certified bound
    eps -> sum over k <= ceil(-log2 eps) + 1 of g_k(eps/4).
    """
    if not parts:
        raise ScenarioError("need at least one part")
    tables = [p[0] for p in parts]
    bounds = [_as_bound_fn(p[1]) for p in parts]
    for idx, t in enumerate(tables):
        if any(v > 1 for row in t.rows for v in row):
            raise ScenarioError(f"part {idx} is not bounded by 1")
    S = horizon if horizon is not None else min(t.horizon for t in tables)
    X = width if width is not None else min(t.width for t in tables)
    rows = []
    for s in range(S):
        row = []
        for x in range(X):
            acc = ZERO
            for k in range(min(s, len(tables))):
                acc += Fraction(1, 2**k) * tables[k].value(s, x)
            row.append(acc)
        rows.append(tuple(row))
    combined = CostTable(tuple(rows))

    def certified(eps: Fraction) -> int:
        eps = Fraction(eps)
        cutoff = halving_exponent(eps) + 1
        quarter = eps / 4
        return sum(bounds[k](quarter) for k in range(min(cutoff + 1, len(bounds))))

    return combined, certified


@dataclass(frozen=True)
class BenignityEntry:
    epsilon: Fraction
    count: int
    bound: int
    truncated: bool

    @property
    def verdict(self) -> bool:
        return self.count <= self.bound


@dataclass(frozen=True)
class BenignityCertificate:
    entries: tuple[BenignityEntry, ...]

    @property
    def verdict(self) -> bool:
        return all(e.verdict for e in self.entries)


def check_benign(table: CostTable, bound, eps_list: Iterable) -> BenignityCertificate:
    bound_fn = _as_bound_fn(bound)
    entries = []
    for eps in eps_list:
        seq = marker_sequence(table, eps)
        entries.append(
            BenignityEntry(Fraction(eps), seq.count, bound_fn(Fraction(eps)), seq.truncated)
        )
    return BenignityCertificate(tuple(entries))


# A cell of a partial table is None (never converges) or (value, delay):
# the value becomes readable once the per-cell step budget reaches `delay`.
PartialCell = Optional[tuple[Fraction, int]]


@dataclass(frozen=True)
class PartialCostTable:
    cells: tuple[tuple[PartialCell, ...], ...]

    @classmethod
    def from_values(cls, rows: Sequence[Sequence]) -> "PartialCostTable":
        return cls(tuple(tuple((Fraction(v), 0) for v in row) for row in rows))

    @property
    def stages(self) -> int:
        return len(self.cells)

    @property
    def width(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    def cell(self, u: int, x: int) -> PartialCell:
        if u >= self.stages or x >= self.width:
            return None
        return self.cells[u][x]


def _square_certified(partial: PartialCostTable, t: int, budget: int) -> bool:
    for u in range(t + 1):
        for x in range(t + 1):
            cell = partial.cell(u, x)
            if cell is None:
                return False
            value, delay = cell
            if delay > budget or value > 1:
                return False
            if x > 0 and partial.cell(u, x - 1)[0] < value:
                return False
            if u > 0 and partial.cell(u - 1, x)[0] > value:
                return False
    return True


def totalize(
    partial: PartialCostTable, horizon: Optional[int] = None, width: Optional[int] = None
) -> CostTable:
    """Total, always-valid cost table from an arbitrary partial one.

    Row s copies the largest certified square prefix reachable with a
    per-cell step budget of s (cells scanned stage-major, positions
    ascending), and is 0 elsewhere.  Where the input is a genuine monotone
    approximation bounded by 1, the output agrees with it on the certified
    prefix.
    """
    S = horizon if horizon is not None else max(partial.stages, 1)
    X = width if width is not None else max(partial.width, 1)
    rows = []
    certified = -1  # largest certified square so far; grows with the budget
    for s in range(S):
        while certified + 1 <= s and _square_certified(partial, certified + 1, s):
            certified += 1
        frontier = min(certified, s)
        row = tuple(
            partial.cell(frontier, x)[0] if frontier >= 0 and x <= frontier else ZERO
            for x in range(X)
        )
        rows.append(row)
    return CostTable(tuple(rows), normalized=True)


# --- plain-text matrix format: first line "S X", then S rows of X rationals ---


def format_cost_table(table: CostTable) -> str:
    lines = [f"{table.horizon} {table.width}"]
    for row in table.rows:
        lines.append(" ".join(f"{v.numerator}/{v.denominator}" for v in row))
    return "\n".join(lines) + "\n"


def _parse_fraction(token: str, lineno: int) -> Fraction:
    try:
        return Fraction(token)
    except (ValueError, ZeroDivisionError) as exc:
        raise ScenarioError(f"line {lineno}: bad rational {token!r}") from exc


def parse_cost_table(text: str, normalized: bool = False, listed_form: bool = False) -> CostTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ScenarioError("line 1: empty cost table")
    header = lines[0].split()
    if len(header) != 2 or not all(tok.isdigit() for tok in header):
        raise ScenarioError(f"line 1: expected header 'S X', got {lines[0]!r}")
    S, X = int(header[0]), int(header[1])
    if len(lines) - 1 != S:
        raise ScenarioError(f"line 1: header promises {S} rows, found {len(lines) - 1}")
    rows = []
    token_memo: dict[str, Fraction] = {}
    line_memo: dict[str, tuple[Fraction, ...]] = {}
    for i, line in enumerate(lines[1:], start=2):
        cached = line_memo.get(line)
        if cached is not None:
            rows.append(cached)
            continue
        tokens = line.split()
        if len(tokens) != X:
            raise ScenarioError(f"line {i}: expected {X} values, found {len(tokens)}")
        row = tuple(
            token_memo.setdefault(tok, _parse_fraction(tok, i)) for tok in tokens
        )
        line_memo[line] = row
        rows.append(row)
    return CostTable(tuple(rows), normalized=normalized, listed_form=listed_form)


def parse_partial_table(text: str) -> PartialCostTable:
    """Rows of cells: 'p/q' (instant), 'p/q@d' (readable at budget d), '?' (never)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ScenarioError("line 1: empty partial table")
    rows = []
    for i, line in enumerate(lines, start=1):
        row: list[PartialCell] = []
        for token in line.split():
            if token == "?":
                row.append(None)
            elif "@" in token:
                value, _, delay = token.partition("@")
                if not delay.isdigit():
                    raise ScenarioError(f"line {i}: bad delay in {token!r}")
                row.append((_parse_fraction(value, i), int(delay)))
            else:
                row.append((_parse_fraction(token, i), 0))
        rows.append(tuple(row))
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ScenarioError("line 1: ragged partial table")
    return PartialCostTable(tuple(rows))


def to_listed_form(table: CostTable) -> CostTable:
    """Zero out positions x >= s; preserves both monotonicity directions."""
    rows = tuple(
        tuple(v if x < s else ZERO for x, v in enumerate(row))
        for s, row in enumerate(table.rows)
    )
    return CostTable(rows, normalized=table.normalized, listed_form=True)


def static_table(base_row: Sequence, horizon: int, normalized: bool = False) -> CostTable:
    row = tuple(Fraction(v) for v in base_row)
    return CostTable(tuple(row for _ in range(horizon)), normalized=normalized)


def dyadic_decay_row(width: int, shift: int = 0, scale=ONE) -> tuple[Fraction, ...]:
    return tuple(Fraction(scale) * Fraction(1, 2 ** (x + shift)) for x in range(width))
