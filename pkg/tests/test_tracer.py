import random

import pytest

from tracelab.errors import InvariantViolation, ScenarioError
from tracelab.tracer import (
    BoxLayout,
    Environment,
    Functional,
    HonestPolicy,
    RandomPolicy,
    ScriptedPolicy,
    oracle_step,
    pair_subset_count,
    parse_box_level,
    resolve_box_spec,
    subsets_up_to_pairs,
)
from tracelab.words import Antichain, comparable


def small_layout(overhead=1, top=3):
    return BoxLayout(overhead, {n: 3 for n in range(1, top + 1)}, top)


# ---- layout ---------------------------------------------------------------------


def test_pair_subset_count_small_values():
    assert pair_subset_count(1) == 2
    assert pair_subset_count(2) == 4
    assert pair_subset_count(3) == 7


def test_subset_enumeration_is_canonical():
    assert subsets_up_to_pairs(2) == [(), (1,), (2,), (1, 2)]


def test_cube_box_is_deterministic_and_injective():
    layout = small_layout()
    a = layout.cube_box(2, {1: (1,)})
    b = layout.cube_box(2, [(1, (1,))])
    assert a == b
    c = layout.cube_box(2, {1: (2,)})
    assert a != c
    assert layout.address(a) != layout.address(c)


def test_cube_box_rejects_oversized_coordinate_values():
    layout = small_layout()
    with pytest.raises(ScenarioError):
        layout.cube_box(2, {1: (1, 2, 3)})
    with pytest.raises(ScenarioError):
        layout.cube_box(2, {1: (3,)})  # index above the level


def test_interval_sizes_match_the_layout():
    layout = small_layout()
    for n in (1, 2, 3):
        assert layout.cube_size(n) == pair_subset_count(n) ** (n + 3)
        assert layout.initial_interval_size(n) == n + 3


def test_order_function_is_positive_and_nondecreasing():
    layout = small_layout()
    previous = 0
    probes = list(range(0, 40)) + [layout.total - 1]
    assert layout.order_value(0) == 1
    for address in probes:
        level = layout.order_value(address)
        assert level >= previous or address == layout.total - 1
        previous = max(previous, level)


def test_addresses_land_in_their_level():
    layout = small_layout()
    box = layout.initial_box(2, 1)
    assert layout.level_of(layout.address(box)) == 2
    cube = layout.cube_box(3, {1: (1, 2)})
    assert layout.level_of(layout.address(cube)) == 3


# ---- the functional ---------------------------------------------------------------


def materialized_antichain_holds(functional, box):
    tested = functional.materialize(box)
    Antichain(tested)  # raises when two tested strings are comparable
    return tested


def test_event_membership_matches_materialization():
    rng = random.Random(0)
    layout = small_layout()
    for trial in range(30):
        functional = Functional()
        box = layout.cube_box(2, {1: (1,)})
        base = ""
        for depth in sorted(rng.sample(range(1, 8), rng.randint(1, 3))):
            base = "".join(rng.choice("01") for _ in range(rng.randint(0, depth)))
            functional.add_event(box, base, depth, depth)
        tested = materialized_antichain_holds(functional, box)
        for length in range(8):
            for tail in range(2**length):
                word = bin(tail)[2:].zfill(length) if length else ""
                assert functional.member(box, word) == (word in tested)


def test_tested_set_covers_the_tested_string():
    functional = Functional()
    layout = small_layout()
    box = layout.cube_box(2, {1: (1,)})
    functional.add_event(box, "01", 4, 4)
    for tail in range(4):
        assert functional.covers(box, "01" + bin(tail)[2:].zfill(2))
    functional.add_event(box, "0", 5, 5)
    tested = materialized_antichain_holds(functional, box)
    # Everything below "01" at depth 5 is reachable through one tested string.
    for tail in range(16):
        assert functional.covers(box, "0" + bin(tail)[2:].zfill(4))


def test_single_valuedness_via_antichain_on_random_event_histories():
    rng = random.Random(4)
    layout = small_layout()
    for trial in range(40):
        functional = Functional()
        box = layout.cube_box(2, {1: (1, 2)})
        for depth in sorted(rng.sample(range(1, 9), rng.randint(1, 4))):
            base = "".join(rng.choice("01") for _ in range(rng.randint(0, depth)))
            functional.add_event(box, base, depth, depth)
        materialized_antichain_holds(functional, box)


# ---- environment and capacity -------------------------------------------------------


def test_enumerate_value_respects_capacity():
    layout = small_layout()
    env = Environment(layout)
    box = layout.initial_box(2, 1)
    env.add_initial_test(2, 1, 2, 1)
    assert env.enumerate_value(box, "00", 1) is not None
    assert env.enumerate_value(box, "01", 1) is not None
    with pytest.raises(InvariantViolation):
        env.enumerate_value(box, "10", 1)
    assert env.enumerate_value(box, "10", 1, clamp=True) is None
    assert env.trace_values(box) == ["00", "01"]


def test_enumerate_value_deduplicates():
    layout = small_layout()
    env = Environment(layout)
    box = layout.initial_box(2, 1)
    env.add_initial_test(2, 1, 2, 1)
    assert env.enumerate_value(box, "00", 1) is not None
    assert env.enumerate_value(box, "00", 2) is None
    assert len(env.trace_values(box)) == 1


def test_activation_spawns_every_containing_class_and_inherits_content():
    layout = small_layout()
    env = Environment(layout)
    env.ensure_level(2)
    spawned = env.activate_pair(2, 1, 1, "00", 3)
    assert [cls.pattern for cls in spawned] == [((1, (1,)),)]
    root = layout.cube_box(2, ())
    env.enumerate_value(spawned[0].box, "000", 4)
    second = env.activate_pair(2, 1, 2, "01", 5)
    patterns = sorted(cls.pattern for cls in second)
    assert patterns == [((1, (1, 2)),), ((1, (2,)),)]
    merged = next(cls for cls in second if cls.pattern == ((1, (1, 2)),))
    assert env.trace_values(merged.box) == ["000"]  # inherited from the parent


def test_activation_rejects_duplicate_pairs():
    layout = small_layout()
    env = Environment(layout)
    env.ensure_level(2)
    env.activate_pair(2, 1, 1, "00", 3)
    with pytest.raises(InvariantViolation):
        env.activate_pair(2, 1, 1, "00", 4)


# ---- oracle policies -----------------------------------------------------------------


def test_honest_policy_traces_the_ground_truth_immediately_at_delay_zero():
    layout = small_layout()
    env = Environment(layout, ground_truth="0110110")
    env.add_initial_test(2, 1, 3, 2)
    records = oracle_step(env, HonestPolicy(delay=0), 2)
    assert [(str(r.box), r.value) for r in records] == [("I2.1", "011")]
    assert records[0].member


def test_honest_policy_waits_for_its_delay():
    layout = small_layout()
    env = Environment(layout, ground_truth="0110110")
    env.add_initial_test(2, 1, 3, 2)
    assert oracle_step(env, HonestPolicy(delay=2), 3) == []
    records = oracle_step(env, HonestPolicy(delay=2), 4)
    assert [r.value for r in records] == ["011"]


def test_honest_policy_feeds_cube_classes_from_their_event_stage():
    layout = small_layout()
    env = Environment(layout, ground_truth="0110110")
    env.add_initial_test(2, 1, 2, 1)
    env.activate_pair(2, 1, 1, "01", 3)
    records = oracle_step(env, HonestPolicy(delay=1), 4)
    by_box = {str(r.box): r.value for r in records}
    assert by_box["I2.1"] == "01"
    assert by_box["M2.1:1"] == "011"  # truth restricted to the event depth (stage 3)


def test_scripted_policy_validates_capacity_at_load():
    layout = small_layout()
    entries = [(1, "I2.1", "00"), (2, "I2.1", "01"), (3, "I2.1", "10")]
    with pytest.raises(ScenarioError):
        ScriptedPolicy(entries, layout)


def test_scripted_policy_replays_entries():
    layout = small_layout()
    env = Environment(layout)
    env.add_initial_test(2, 1, 2, 1)
    policy = ScriptedPolicy([(3, "I2.1", "00")], layout)
    assert oracle_step(env, policy, 2) == []
    records = oracle_step(env, policy, 3)
    assert [r.value for r in records] == ["00"]


def test_scripted_policy_rejects_inactive_class_targets():
    layout = small_layout()
    env = Environment(layout)
    policy = ScriptedPolicy([(2, "M2.1:1", "000")], layout)
    with pytest.raises(ScenarioError):
        oracle_step(env, policy, 2)


def test_box_spec_parsing():
    assert parse_box_level("I2.1") == 2
    assert parse_box_level("M3.1:1+2.2:1") == 3
    with pytest.raises(ScenarioError):
        parse_box_level("Q1.1")
    layout = small_layout()
    env = Environment(layout)
    env.ensure_level(3)
    env.activate_pair(3, 1, 1, "0", 2)
    env.activate_pair(3, 1, 2, "1", 2)
    box = resolve_box_spec(env, "M3.1:1+2")
    assert box.pattern == ((1, (1, 2)),)


def test_random_policy_respects_capacity_by_clamping():
    layout = small_layout()
    env = Environment(layout, ground_truth="01101100")
    env.add_initial_test(2, 1, 2, 1)
    policy = RandomPolicy(seed=9, activate_rate=1.0, feed_rate=1.0, junk_rate=1.0)
    for stage in range(2, 30):
        oracle_step(env, policy, stage)
    for box, size, cap in env.capacity_report():
        assert size <= cap


def test_random_policy_is_deterministic_per_seed():
    def run(seed):
        layout = small_layout()
        env = Environment(layout, ground_truth="01101100")
        env.add_initial_test(2, 1, 2, 1)
        policy = RandomPolicy(seed=seed)
        out = []
        for stage in range(2, 12):
            out.extend((str(r.box), r.value, r.stage) for r in oracle_step(env, policy, stage))
        return out

    assert run(5) == run(5)
    assert run(5) != run(6) or run(5) == []  # different seeds usually diverge


def test_first_test_on_a_fresh_box_is_the_string_itself():
    functional = Functional()
    layout = small_layout()
    box = layout.cube_box(2, {1: (1,)})
    functional.add_event(box, "01", 2, 2)
    assert functional.materialize(box) == ["01"]


def test_testing_around_a_blocked_branch_adds_the_free_extensions():
    functional = Functional()
    layout = small_layout()
    box = layout.cube_box(2, {1: (1, 2)})
    functional.add_event(box, "00", 2, 2)
    functional.add_event(box, "0", 2, 2)
    assert functional.materialize(box) == ["00", "01"]


def test_retesting_a_covered_string_changes_nothing():
    functional = Functional()
    layout = small_layout()
    box = layout.cube_box(2, {1: (1,)})
    functional.add_event(box, "00", 2, 2)
    functional.add_event(box, "00", 3, 3)
    assert functional.materialize(box) == ["00"]
    assert functional.covers(box, "00")
