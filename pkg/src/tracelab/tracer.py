"""Box layouts indexed by an order function, the tested-string functional,
and pluggable trace oracles.

Hypercube boxes are handled as equivalence classes over the pairs of
candidate strings actually enumerated: a class stands for every concrete box
whose coordinate choices agree on those pairs.  Test events carry their
original stage, classes spawned by a new pair inherit the content of their
parent class, and tested sets are never materialized beyond the event lists;
this keeps the per-box combinatorics exact while the nominal cube size
explodes.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Optional

from .errors import HorizonExhausted, InvariantViolation, ScenarioError
from .words import check_word, comparable, extensions_avoiding, is_prefix

Pattern = tuple[tuple[int, tuple[int, ...]], ...]


def pair_subset_count(n: int) -> int:
    """Number of subsets of {1..n} of size at most 2."""
    if n < 1:
        raise ScenarioError("levels start at 1")
    return 1 + n + n * (n - 1) // 2


def subsets_up_to_pairs(n: int) -> list[tuple[int, ...]]:
    """Canonical enumeration of those subsets: by size, then lexicographic."""
    out: list[tuple[int, ...]] = [()]
    out.extend((i,) for i in range(1, n + 1))
    out.extend(tuple(c) for c in combinations(range(1, n + 1), 2))
    return out


@dataclass(frozen=True)
class BoxId:
    kind: str  # "I" (initial testing) or "M" (hypercube class)
    level: int
    slot: int = 0  # length index, for I-boxes
    pattern: Pattern = ()  # pairs (k, (i, ...)), for M-boxes

    def __str__(self) -> str:
        if self.kind == "I":
            return f"I{self.level}.{self.slot}"
        if not self.pattern:
            return f"M{self.level}.root"
        coords = ".".join(f"{k}:{'+'.join(map(str, idx))}" for k, idx in self.pattern)
        return f"M{self.level}.{coords}"


class BoxLayout:
    """Partition of an initial segment of the naturals into hypercube and
    initial-testing intervals, one pair per level, with the order function
    constant on each level's stretch."""

    def __init__(self, overhead: int, slack: dict[int, int], top_level: int):
        if overhead < 1:
            raise ScenarioError("overhead constant must be at least 1")
        if top_level < overhead:
            raise ScenarioError("top level below the overhead constant")
        for n in range(1, top_level + 1):
            if slack.get(n, 0) < 1:
                raise ScenarioError(f"slack table must be >= 1 at level {n}")
        self.overhead = overhead
        self.slack = dict(slack)
        self.top_level = top_level
        self._starts: dict[int, tuple[int, int]] = {}
        offset = 0
        for n in range(1, top_level + 1):
            cube = pair_subset_count(n) ** (n + self.slack[n])
            self._starts[n] = (offset, offset + cube)
            offset += cube + (n + self.slack[n])
        self.total = offset

    def lengths_capacity(self, level: int) -> int:
        return level + self.slack[level]

    def trace_capacity(self, level: int) -> int:
        return max(level, self.overhead)

    def cube_size(self, level: int) -> int:
        return pair_subset_count(level) ** (level + self.slack[level])

    def initial_interval_size(self, level: int) -> int:
        return level + self.slack[level]

    def initial_box(self, level: int, slot: int) -> BoxId:
        if not (1 <= slot <= self.lengths_capacity(level)):
            raise ScenarioError(f"slot {slot} outside the initial interval of level {level}")
        return BoxId("I", level, slot=slot)

    def cube_box(self, level: int, pattern) -> BoxId:
        canon = self.canonical_pattern(level, pattern)
        return BoxId("M", level, pattern=canon)

    def canonical_pattern(self, level: int, pattern) -> Pattern:
        if isinstance(pattern, dict):
            items = pattern.items()
        else:
            items = pattern
        cleaned = []
        for k, idx in items:
            idx = tuple(sorted(set(idx)))
            if not idx:
                continue
            if not (1 <= k <= self.lengths_capacity(level)):
                raise ScenarioError(f"coordinate {k} outside the cube directions of level {level}")
            if len(idx) > 2 or any(not (1 <= i <= level) for i in idx):
                raise ScenarioError(f"coordinate value {idx} not an index set of size <= 2 at level {level}")
            cleaned.append((k, idx))
        cleaned.sort()
        return tuple(cleaned)

    def address(self, box: BoxId) -> int:
        """Numeric position of the box (for M-classes: of the representative
        whose unlisted coordinates are empty)."""
        m_start, i_start = self._starts[box.level]
        if box.kind == "I":
            return i_start + (box.slot - 1)
        digits = {k: idx for k, idx in box.pattern}
        enumeration = {s: d for d, s in enumerate(subsets_up_to_pairs(box.level))}
        base = pair_subset_count(box.level)
        value = 0
        for k in range(self.lengths_capacity(box.level), 0, -1):
            value = value * base + enumeration[digits.get(k, ())]
        return m_start + value

    def level_of(self, address: int) -> int:
        if not (0 <= address < self.total):
            raise ScenarioError(f"address {address} outside the layout")
        for n in range(1, self.top_level + 1):
            m_start, i_start = self._starts[n]
            if address < i_start + self.initial_interval_size(n):
                return n
        raise ScenarioError(f"address {address} outside the layout")

    def order_value(self, address: int) -> int:
        """The order function: the level owning the address."""
        return self.level_of(address)


@dataclass(frozen=True)
class TestEvent:
    base: str
    depth: int
    stage: int


class Functional:
    """Per-box tested sets, kept as event lists.

    An event (base, depth, stage) tests every length-`depth` extension of
    `base` that does not extend a string tested by an earlier event on the
    same box; the tested set of a box is therefore always an antichain.
    """

    def __init__(self):
        self.events: dict[BoxId, list[TestEvent]] = {}
        self._member_cache: dict[tuple, bool] = {}

    def boxes(self) -> Iterable[BoxId]:
        return self.events.keys()

    def add_event(self, box: BoxId, base: str, depth: int, stage: int) -> TestEvent:
        if depth < len(base):
            raise ScenarioError(f"test depth {depth} below base length {len(base)}")
        event = TestEvent(base, depth, stage)
        self.events.setdefault(box, []).append(event)
        return event

    def copy_events(self, source: BoxId, target: BoxId) -> None:
        self.events[target] = list(self.events.get(source, []))

    def _added_before(self, box: BoxId, word: str, upto: int) -> bool:
        """Is `word` in the tested set after the first `upto` events?"""
        key = (box, word, upto)
        cached = self._member_cache.get(key)
        if cached is not None:
            return cached
        events = self.events.get(box, [])
        result = False
        for j in range(upto):
            ev = events[j]
            if len(word) != ev.depth or not word.startswith(ev.base):
                continue
            blocked = any(
                self._added_before(box, word[:cut], j) for cut in range(len(word) + 1)
            )
            if not blocked:
                result = True
                break
        self._member_cache[key] = result
        return result

    def member(self, box: BoxId, word: str) -> bool:
        return self._added_before(box, word, len(self.events.get(box, [])))

    def covers(self, box: BoxId, word: str) -> bool:
        """Is every deep extension of `word` tested (some tested prefix)?"""
        return any(self.member(box, word[:cut]) for cut in range(len(word) + 1))

    def materialize(self, box: BoxId, ordered: bool = False) -> list[str]:
        """Explicit tested set; exponential in event depths, for small-depth
        reference checks only."""
        tested: list[str] = []
        for ev in self.events.get(box, []):
            tested.extend(extensions_avoiding(ev.base, ev.depth, tested))
        return tested if ordered else sorted(tested)


@dataclass
class EnumRecord:
    box: BoxId
    value: str
    stage: int
    member: bool


@dataclass
class ClassBox:
    box: BoxId
    pattern: Pattern
    parent: Optional[BoxId]
    created: int


class Environment:
    """One level-indexed world of boxes, tested sets, and trace content."""

    def __init__(
        self,
        layout: BoxLayout,
        ground_truth: Optional[str] = None,
        family_cap: int = 20000,
    ):
        self.layout = layout
        self.functional = Functional()
        self.ground_truth = check_word(ground_truth) if ground_truth is not None else None
        self.family_cap = family_cap
        self.content: dict[BoxId, list[tuple[str, int]]] = {}
        self.classes: dict[int, dict[Pattern, ClassBox]] = {}
        self.initial_boxes: dict[tuple[int, int], tuple[int, int]] = {}  # (n, slot) -> (length, stage)
        self.pair_sigma: dict[tuple[int, int, int], str] = {}  # (n, k, i) -> candidate string
        self._honest_due: dict[BoxId, tuple[int, str]] = {}

    # ---- structure -------------------------------------------------------

    def ensure_level(self, level: int) -> None:
        if level in self.classes:
            return
        root = self.layout.cube_box(level, ())
        self.classes[level] = {(): ClassBox(root, (), None, 0)}
        self.content.setdefault(root, [])
        self.functional.events.setdefault(root, [])

    def add_initial_test(self, level: int, slot: int, length: int, stage: int) -> BoxId:
        box = self.layout.initial_box(level, slot)
        if self.functional.events.get(box):
            raise InvariantViolation(f"initial box {box} tested twice")
        self.functional.add_event(box, "", length, stage)
        self.content.setdefault(box, [])
        self.initial_boxes[(level, slot)] = (length, stage)
        return box

    def activate_pair(self, level: int, slot: int, index: int, sigma: str, stage: int) -> list[ClassBox]:
        """Record candidate `sigma` for (slot, index) and spawn every class
        containing the new pair, inheriting parent content."""
        self.ensure_level(level)
        key = (level, slot, index)
        if key in self.pair_sigma:
            raise InvariantViolation(f"pair {key} activated twice")
        self.pair_sigma[key] = sigma
        family = self.classes[level]
        spawned: list[ClassBox] = []
        for parent in list(family.values()):
            existing = dict(parent.pattern).get(slot, ())
            if len(existing) >= 2 or index in existing:
                continue
            child_pattern = self.layout.canonical_pattern(
                level, dict(parent.pattern) | {slot: existing + (index,)}
            )
            if child_pattern in family:
                raise InvariantViolation(f"class {child_pattern} spawned twice")
            if len(family) + len(spawned) >= self.family_cap:
                raise HorizonExhausted(
                    f"class family at level {level} exceeded the cap {self.family_cap}"
                )
            child_box = self.layout.cube_box(level, child_pattern)
            self.functional.copy_events(parent.box, child_box)
            self.functional.add_event(child_box, sigma, stage, stage)
            self.content[child_box] = list(self.content.get(parent.box, ()))
            child = ClassBox(child_box, child_pattern, parent.box, stage)
            spawned.append(child)
        for child in spawned:
            family[child.pattern] = child
        return spawned

    def classes_at(self, level: int) -> list[ClassBox]:
        self.ensure_level(level)
        return list(self.classes[level].values())

    def classes_containing(self, level: int, slot: int, index: int) -> list[ClassBox]:
        out = []
        for cls in self.classes_at(level):
            coords = dict(cls.pattern)
            if index in coords.get(slot, ()):
                out.append(cls)
        return out

    # ---- trace content ---------------------------------------------------

    def trace(self, box: BoxId) -> list[tuple[str, int]]:
        return self.content.get(box, [])

    def trace_values(self, box: BoxId) -> list[str]:
        return [v for v, _ in self.content.get(box, ())]

    def enumerate_value(
        self, box: BoxId, value: str, stage: int, clamp: bool = False
    ) -> Optional[EnumRecord]:
        check_word(value)
        bucket = self.content.setdefault(box, [])
        if any(v == value for v, _ in bucket):
            return None  # trace components are sets; re-enumeration is a no-op
        capacity = self.layout.trace_capacity(box.level)
        if len(bucket) >= capacity:
            if clamp:
                return None
            raise InvariantViolation(
                f"trace capacity {capacity} exceeded on box {box} at stage {stage}"
            )
        bucket.append((value, stage))
        return EnumRecord(box, value, stage, self.functional.member(box, value))

    def capacity_report(self) -> list[tuple[str, int, int]]:
        out = []
        for box, bucket in self.content.items():
            out.append((str(box), len(bucket), self.layout.trace_capacity(box.level)))
        return out

    # ---- honest bookkeeping ----------------------------------------------

    def honest_value(self, box: BoxId) -> Optional[tuple[int, str]]:
        """(due event stage, traced value) when the ground truth lands in the
        box's tested cylinder; None otherwise.  Cached per box: event lists of
        existing boxes never change."""
        if self.ground_truth is None:
            return None
        cached = self._honest_due.get(box)
        if cached is not None:
            return cached
        for ev in self.functional.events.get(box, ()):
            if is_prefix(ev.base, self.ground_truth) and ev.depth <= len(self.ground_truth):
                value = self.ground_truth[: ev.depth]
                self._honest_due[box] = (ev.stage, value)
                return self._honest_due[box]
        return None


class HonestPolicy:
    """Enumerates the functional's value on the ground truth into every box
    whose tested cylinder captures it, a fixed delay after the capturing test."""

    kind = "honest"

    def __init__(self, delay: int = 1):
        if delay < 0:
            raise ScenarioError("delay must be nonnegative")
        self.delay = delay

    def step(self, env: Environment, stage: int) -> list[tuple[BoxId, str]]:
        if env.ground_truth is None:
            raise ScenarioError("honest policy needs a ground truth")
        moves = []
        for (level, slot), (length, added) in sorted(env.initial_boxes.items()):
            if added + self.delay <= stage and length <= len(env.ground_truth):
                box = env.layout.initial_box(level, slot)
                value = env.ground_truth[:length]
                if value not in env.trace_values(box):
                    moves.append((box, value))
        for level in sorted(env.classes):
            for cls in env.classes_at(level):
                due = env.honest_value(cls.box)
                if due is None:
                    continue
                due_stage, value = due
                if due_stage + self.delay <= stage and value not in env.trace_values(cls.box):
                    moves.append((cls.box, value))
        return moves


class ScriptedPolicy:
    """Replays an explicit list of (stage, box spec, value) enumerations."""

    kind = "scripted"

    def __init__(self, entries: list[tuple[int, str, str]], layout: BoxLayout):
        self.by_stage: dict[int, list[tuple[str, str]]] = {}
        per_box: dict[str, int] = {}
        for stage, spec, value in entries:
            check_word(value)
            level = parse_box_level(spec)
            per_box[spec] = per_box.get(spec, 0) + 1
            if per_box[spec] > layout.trace_capacity(level):
                raise ScenarioError(
                    f"script enumerates {per_box[spec]} values into {spec}, "
                    f"capacity is {layout.trace_capacity(level)}"
                )
            self.by_stage.setdefault(stage, []).append((spec, value))

    def step(self, env: Environment, stage: int) -> list[tuple[BoxId, str]]:
        moves = []
        for spec, value in self.by_stage.get(stage, ()):
            moves.append((resolve_box_spec(env, spec), value))
        return moves


class RandomPolicy:
    """Seeded adversary: activates candidate pairs, feeds the classes their
    success checks look at (sometimes engineering genuine conflicts), and
    sprinkles junk, always within trace capacity."""

    kind = "random"

    def __init__(
        self,
        seed: int,
        activate_rate: float = 0.5,
        feed_rate: float = 0.8,
        junk_rate: float = 0.2,
    ):
        self.rng = random.Random(seed)
        self.activate_rate = activate_rate
        self.feed_rate = feed_rate
        self.junk_rate = junk_rate

    def _candidate_value(self, env: Environment, level: int, slot: int, stage: int) -> Optional[str]:
        length, _ = env.initial_boxes[(level, slot)]
        box = env.layout.initial_box(level, slot)
        members = [v for v in env.trace_values(box) if len(v) == length]
        previous = [
            env.initial_boxes[(level, s)][0]
            for s in range(1, slot)
            if (level, s) in env.initial_boxes
        ]
        floor = max(previous, default=0)
        if members and floor < length:
            # Agree with an existing candidate below the previous tested
            # length: raw material for a conflict.
            stem = members[0][:floor]
        else:
            stem = ""
        suffix = "".join(self.rng.choice("01") for _ in range(length - len(stem)))
        value = stem + suffix
        if value in members:
            flipped = value[:-1] + ("1" if value[-1] == "0" else "0") if value else value
            value = flipped
        return value if len(value) == length and value not in members else None

    def _feed_pair(self, env: Environment, level: int, slot: int, index: int, moves) -> None:
        sigma = env.pair_sigma.get((level, slot, index))
        if sigma is None:
            return
        for cls in env.classes_containing(level, slot, index):
            values = env.trace_values(cls.box)
            if any(
                env.functional.member(cls.box, v) and comparable(v, sigma) for v in values
            ):
                continue
            event = next(
                (
                    ev
                    for ev in env.functional.events.get(cls.box, ())
                    if ev.base == sigma
                ),
                None,
            )
            if event is None:
                continue
            for _ in range(8):
                tail = "".join(
                    self.rng.choice("01") for _ in range(event.depth - len(sigma))
                )
                candidate = sigma + tail
                if env.functional.member(cls.box, candidate) and candidate not in values:
                    moves.append((cls.box, candidate))
                    break

    def step(self, env: Environment, stage: int) -> list[tuple[BoxId, str]]:
        moves: list[tuple[BoxId, str]] = []
        slots = sorted(env.initial_boxes)
        if slots and self.rng.random() < self.activate_rate:
            level, slot = self.rng.choice(slots)
            value = self._candidate_value(env, level, slot, stage)
            if value is not None:
                moves.append((env.layout.initial_box(level, slot), value))
        listed = sorted(env.pair_sigma)
        if listed and self.rng.random() < self.feed_rate:
            level, slot, index = self.rng.choice(listed)
            self._feed_pair(env, level, slot, index, moves)
            sibling = (level, slot, index - 1) if index > 1 else (level, slot, index + 1)
            if sibling in env.pair_sigma:
                self._feed_pair(env, level, slot, sibling[2], moves)
        if slots and self.rng.random() < self.junk_rate:
            level, slot = self.rng.choice(slots)
            length = self.rng.randrange(1, max(2, stage + 1))
            junk = "".join(self.rng.choice("01") for _ in range(length))
            moves.append((env.layout.initial_box(level, slot), junk))
        return moves


def oracle_step(env: Environment, policy, stage: int) -> list[EnumRecord]:
    """Apply one stage of the oracle: collect the policy's moves, enforce
    capacity (clamping only for the random adversary), record enumerations."""
    moves = policy.step(env, stage)
    clamp = getattr(policy, "kind", "") == "random"
    records = []
    for box, value in sorted(moves, key=lambda m: (str(m[0]), m[1])):
        record = env.enumerate_value(box, value, stage, clamp=clamp)
        if record is not None:
            records.append(record)
    return records


# ---- box spec grammar: "I<n>.<k>" and "M<n>.<k>:<i>[+<i>][.<k>:<i>...]" ----


def parse_box_level(spec: str) -> int:
    if not spec or spec[0] not in "IM":
        raise ScenarioError(f"bad box spec {spec!r}")
    head = spec[1:].split(".", 1)[0]
    if not head.isdigit():
        raise ScenarioError(f"bad box spec {spec!r}")
    return int(head)


def resolve_box_spec(env: Environment, spec: str) -> BoxId:
    level = parse_box_level(spec)
    rest = spec[1 + len(str(level)) :]
    if spec[0] == "I":
        if not (rest.startswith(".") and rest[1:].isdigit()):
            raise ScenarioError(f"bad initial-box spec {spec!r}")
        return env.layout.initial_box(level, int(rest[1:]))
    if rest in ("", ".root"):
        env.ensure_level(level)
        return env.layout.cube_box(level, ())
    coords = {}
    for part in rest.lstrip(".").split("."):
        slot_text, _, idx_text = part.partition(":")
        if not slot_text.isdigit() or not idx_text:
            raise ScenarioError(f"bad cube-box spec {spec!r}")
        coords[int(slot_text)] = tuple(int(tok) for tok in idx_text.split("+"))
    pattern = env.layout.canonical_pattern(level, coords)
    env.ensure_level(level)
    if pattern not in env.classes[level]:
        raise ScenarioError(f"box {spec!r} names a class that is not active yet")
    return env.layout.cube_box(level, pattern)
