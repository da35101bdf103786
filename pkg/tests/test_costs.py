from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tracelab.costs import (
    CostTable,
    PartialCostTable,
    check_benign,
    dyadic_decay_row,
    format_cost_table,
    halving_exponent,
    marker_sequence,
    obedience_sum,
    parse_cost_table,
    parse_partial_table,
    static_table,
    sum_benign,
    to_listed_form,
    totalize,
)
from tracelab.errors import ScenarioError

F = Fraction


def decay_table(horizon=8, width=8):
    return static_table(dyadic_decay_row(width), horizon, normalized=True)


def zero_table(horizon=8, width=8):
    return CostTable(tuple(tuple(F(0) for _ in range(width)) for _ in range(horizon)))


# ---- marker scans ------------------------------------------------------------


def test_markers_on_dyadic_decay():
    seq = marker_sequence(decay_table(), F(1, 4))
    assert seq.markers == (0, 1, 2, 3)
    assert seq.count == 4


def test_markers_on_zero_table():
    seq = marker_sequence(zero_table(), F(1, 2))
    assert seq.markers == (0,)
    assert seq.count == 1


def test_markers_above_the_cap_are_final():
    seq = marker_sequence(decay_table(), F(2))
    assert seq.count == 1
    assert not seq.truncated  # normalized cap 1 cannot ever reach 2


def test_markers_within_cap_stay_truncated():
    assert marker_sequence(decay_table(), F(1, 4)).truncated


def test_markers_reject_nonpositive_threshold():
    with pytest.raises(ScenarioError):
        marker_sequence(decay_table(), F(0))


def random_monotone_table(rng, horizon, width, cap=1):
    grid = [[F(rng.randint(0, 8), 8) * cap for _ in range(width)] for _ in range(horizon)]
    for x in range(width):
        column = sorted(grid[s][x] for s in range(horizon))
        for s in range(horizon):
            grid[s][x] = column[s]
    for s in range(horizon):
        for x in range(1, width):
            grid[s][x] = min(grid[s][x], grid[s][x - 1])
    return CostTable(tuple(tuple(row) for row in grid))


def test_marker_scan_matches_independent_rescan():
    import random

    rng = random.Random(0)
    for _ in range(25):
        table = random_monotone_table(rng, 6, 6)
        eps = F(rng.randint(1, 8), 8)
        seq = marker_sequence(table, eps)
        assert seq.markers[0] == 0
        for prev, nxt in zip(seq.markers, seq.markers[1:]):
            assert prev < nxt
            assert table.value(nxt, prev) >= eps
            for s in range(prev + 1, nxt):
                assert table.value(s, prev) < eps
        last = seq.markers[-1]
        for s in range(last + 1, table.horizon):
            assert table.value(s, last) < eps


# ---- obedience sums ----------------------------------------------------------


def test_obedience_sum_constant_rows():
    assert obedience_sum(decay_table(), ["0101"] * 5) == 0


def test_obedience_sum_single_change():
    rows = ["000", "000", "100", "100", "100"]
    assert obedience_sum(decay_table(), rows) == 1


def test_obedience_sum_two_changes():
    rows = ["000", "010", "010", "110"]
    assert obedience_sum(decay_table(), rows) == F(1, 2) + 1


@given(st.lists(st.sampled_from(["000", "001", "010", "100"]), min_size=1, max_size=6))
def test_obedience_sum_ignores_appended_stable_stages(rows):
    table = decay_table()
    assert obedience_sum(table, rows) == obedience_sum(table, rows + [rows[-1]] * 3)


# ---- weighted sums -----------------------------------------------------------


def test_sum_benign_two_identical_parts():
    part = decay_table()
    combined, _ = sum_benign([(part, lambda e: 1), (part, lambda e: 1)])
    for s in range(2, combined.horizon):
        for x in range(combined.width):
            assert combined.value(s, x) == F(3, 2) * F(1, 2**x)
    assert combined.value(1, 0) == 1  # only the first part has entered
    assert combined.value(0, 0) == 0


def test_sum_benign_certified_bound_example():
    parts = [(decay_table(), lambda e: 4) for _ in range(3)]
    _, bound = sum_benign(parts)
    assert bound(F(1, 2)) == 12


def test_sum_benign_rejects_unnormalized_part():
    bad = static_table([F(2), F(1)], 4)
    with pytest.raises(ScenarioError):
        sum_benign([(bad, lambda e: 1)])


def test_sum_benign_output_is_monotone_for_random_parts():
    import random

    rng = random.Random(1)
    for _ in range(10):
        parts = [
            (random_monotone_table(rng, 5, 5), lambda e: 5)
            for _ in range(rng.randint(1, 4))
        ]
        combined, _ = sum_benign(parts)  # CostTable validates both directions
        assert combined.horizon == 5


def test_halving_exponent():
    assert halving_exponent(F(1, 2)) == 1
    assert halving_exponent(F(1, 3)) == 2
    assert halving_exponent(F(5)) == 0


# ---- benignity verdicts -------------------------------------------------------


def test_check_benign_verdicts():
    table = decay_table()
    good = check_benign(table, {F(1, 4): 4}, [F(1, 4)])
    assert good.verdict and good.entries[0].count == 4
    bad = check_benign(table, {F(1, 4): 3}, [F(1, 4)])
    assert not bad.verdict


def test_check_benign_zero_table():
    cert = check_benign(zero_table(), lambda e: 1, [F(1, 2), F(1, 7)])
    assert cert.verdict


# ---- totalization -------------------------------------------------------------


def test_totalize_instant_total_input():
    partial = PartialCostTable.from_values(
        [[F(1, 2**(x + 1)) for x in range(5)] for _ in range(5)]
    )
    out = totalize(partial, horizon=6, width=6)
    for s in range(6):
        frontier = min(s, 4)
        for x in range(6):
            expected = F(1, 2**(x + 1)) if x <= frontier else F(0)
            assert out.value(s, x) == expected


def test_totalize_divergent_origin_gives_zero_table():
    cells = [[None, (F(1), 0)], [(F(1), 0), (F(1), 0)]]
    out = totalize(PartialCostTable(tuple(tuple(r) for r in cells)), horizon=4, width=3)
    assert all(v == 0 for row in out.rows for v in row)


def test_totalize_freezes_before_bound_violation():
    cells = [
        [(F(1, 2), 0), (F(1, 4), 0)],
        [(F(1, 2), 0), (F(2), 0)],  # value above 1 poisons every square past 0
    ]
    out = totalize(PartialCostTable(tuple(tuple(r) for r in cells)), horizon=4, width=3)
    for s in range(4):  # square 0 certifies instantly; nothing ever grows past it
        assert tuple(out.rows[s]) == (F(1, 2), F(0), F(0))


def test_totalize_respects_cell_delays():
    cells = [[(F(1, 2), 3)]]
    out = totalize(PartialCostTable(tuple(tuple(r) for r in cells)), horizon=5, width=2)
    assert out.value(2, 0) == 0
    assert out.value(3, 0) == F(1, 2)


def certified_prefix(partial: PartialCostTable, budget: int) -> int:
    """Independent reference for the largest usable square."""
    best = -1
    for t in range(min(budget + 1, partial.stages, partial.width)):
        ok = True
        for u in range(t + 1):
            for x in range(t + 1):
                cell = partial.cell(u, x)
                if cell is None or cell[1] > budget or cell[0] > 1:
                    ok = False
                if ok and x > 0 and partial.cell(u, x - 1)[0] < cell[0]:
                    ok = False
                if ok and u > 0 and partial.cell(u - 1, x)[0] > cell[0]:
                    ok = False
        if ok:
            best = t
        else:
            break
    return best


def test_totalize_agrees_with_reference_on_random_partials():
    import random

    rng = random.Random(7)
    for _ in range(60):
        stages, width = rng.randint(1, 5), rng.randint(1, 5)
        cells = []
        for u in range(stages):
            row = []
            for x in range(width):
                roll = rng.random()
                if roll < 0.15:
                    row.append(None)
                elif roll < 0.25:
                    row.append((F(rng.randint(9, 12), 8), 0))  # above the unit cap
                else:
                    row.append((F(rng.randint(0, 8), 8 + x), rng.randint(0, 3)))
            cells.append(tuple(row))
        partial = PartialCostTable(tuple(cells))
        out = totalize(partial, horizon=7, width=6)  # constructor re-validates
        for s in range(7):
            frontier = certified_prefix(partial, s)
            frontier = min(frontier, s)
            for x in range(6):
                expected = partial.cell(frontier, x)[0] if 0 <= x <= frontier else F(0)
                assert out.value(s, x) == expected


# ---- text format ---------------------------------------------------------------


def test_cost_table_round_trip():
    table = decay_table(4, 3)
    again = parse_cost_table(format_cost_table(table), normalized=True)
    assert again.rows == table.rows


def test_parse_cost_table_reports_line_numbers():
    with pytest.raises(ScenarioError, match="line 1"):
        parse_cost_table("nonsense\n")
    with pytest.raises(ScenarioError, match="line 3"):
        parse_cost_table("2 2\n1/2 1/4\n1/2\n")
    with pytest.raises(ScenarioError, match="line 2"):
        parse_cost_table("1 2\n1/2 x\n")


def test_parse_partial_table_tokens():
    partial = parse_partial_table("1/2 1/4@3 ?\n1/2 1/4 ?\n")
    assert partial.cell(0, 0) == (F(1, 2), 0)
    assert partial.cell(0, 1) == (F(1, 4), 3)
    assert partial.cell(0, 2) is None


def test_to_listed_form_zeroes_the_diagonal_tail():
    listed = to_listed_form(decay_table(4, 4))
    assert listed.listed_form
    for s in range(4):
        for x in range(s, 4):
            assert listed.value(s, x) == 0


def test_cost_table_validation_catches_bad_monotonicity():
    with pytest.raises(ScenarioError):
        CostTable(((F(0), F(1)),))  # row increases
    with pytest.raises(ScenarioError):
        CostTable(((F(1), F(1)), (F(0), F(0))))  # column decreases


def test_sum_benign_single_part_reproduces_it_from_stage_one():
    part = decay_table()
    combined, _ = sum_benign([(part, lambda e: 4)])
    assert all(v == 0 for v in combined.rows[0])
    for s in range(1, combined.horizon):
        assert combined.rows[s] == part.rows[s]
