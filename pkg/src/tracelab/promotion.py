"""Level-indexed promotion engine: candidate lengths, initial and hypercube
testing, conflicts, promotions, the certified conflict-bound audit, and the
extracted approximation with its exact cost ledger.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .costs import (
    CostTable,
    MarkerSequence,
    ZERO,
    first_difference,
    halving_exponent,
    marker_sequence,
)
from .errors import InvariantViolation, ScenarioError
from .tracer import BoxId, BoxLayout, Environment, oracle_step
from .words import comparable, is_prefix, restrict


def marker_table(cost: CostTable, top_level: int) -> dict[int, MarkerSequence]:
    return {r: marker_sequence(cost, Fraction(1, 2**r)) for r in range(top_level + 1)}


def slack_from_markers(markers: dict[int, MarkerSequence], top_level: int) -> dict[int, int]:
    """Per-level bound on how many distinct coherent lengths can appear."""
    return {
        n: 1 + sum(markers[r].count for r in range(n + 1))
        for n in range(1, top_level + 1)
    }


def length_for_level(
    level: int,
    stage: int,
    markers: dict[int, MarkerSequence],
    cost: CostTable,
) -> int:
    """Largest marker at thresholds 2^-r, r <= level, seen by `stage` (at
    least `level`); the cost at the result is certified below 2^-level.

    The certificate has one provable exception: when `stage` is itself the
    newest 2^-level marker, the cost there may still sit at the threshold.
    Any other failure means the marker table does not belong to the cost
    table.
    """
    best = level
    for r in range(level + 1):
        for m in markers[r].markers:
            if m <= stage and m > best:
                best = m
    if not (level <= best <= max(level, stage)):
        raise InvariantViolation(f"coherent length {best} escaped its bracket at ({level},{stage})")
    if cost.value(stage, best) >= Fraction(1, 2**level):
        newest = max((m for m in markers[level].markers if m <= stage), default=0)
        if stage != newest:
            raise InvariantViolation(
                f"marker table inconsistent with the cost table at level {level}, stage {stage}"
            )
    return best


@dataclass
class Candidate:
    word: str
    appeared: int


@dataclass
class LevelState:
    level: int
    lengths: list[int] = field(default_factory=list)
    added: list[int] = field(default_factory=list)  # stage each length was added
    listed: dict[int, list[Candidate]] = field(default_factory=dict)  # slot -> candidates
    success_since: dict[tuple[int, int], int] = field(default_factory=dict)
    pending: dict[tuple[int, int], int] = field(default_factory=dict)
    lacking: dict[BoxId, set[tuple[int, int]]] = field(default_factory=dict)
    conflicts: dict[int, tuple[int, tuple[int, int]]] = field(default_factory=dict)
    dropped_promotions: list[tuple[int, int]] = field(default_factory=list)  # (length, stage)

    def top_length(self, stage: Optional[int] = None) -> Optional[int]:
        if stage is None:
            return self.lengths[-1] if self.lengths else None
        best = None
        for length, added in zip(self.lengths, self.added):
            if added <= stage:
                best = length
        return best

    def slots_by(self, stage: int) -> int:
        return sum(1 for a in self.added if a <= stage)

    def successful_at(self, slot: int, index: int, stage: int) -> bool:
        since = self.success_since.get((slot, index))
        return since is not None and since <= stage


@dataclass
class WitnessAudit:
    level: int
    stage: int
    conflicted: tuple[int, ...]
    pattern: str
    chain_sizes: tuple[int, ...]
    deficits: tuple[int, ...]
    trace_members: int
    trace_size: int


@dataclass
class ExtractionStep:
    index: int
    stage: int
    word: str
    change_at: Optional[int]
    cost: Fraction


@dataclass
class Extraction:
    anchor: str
    anchor_stage: int
    steps: list[ExtractionStep]
    expensive: dict[int, list[int]]  # threshold exponent -> extraction indices
    truncated_at: Optional[int]
    total_cost: Fraction
    layered_bound: Fraction


class PromotionEngine:
    """Runs the construction against one oracle and audits its lemmas."""

    def __init__(
        self,
        *,
        cost: CostTable,
        overhead: int,
        top_level: int,
        horizon: int,
        policy,
        ground_truth: Optional[str] = None,
        slack: Optional[dict[int, int]] = None,
        family_cap: int = 20000,
    ):
        if cost.horizon < horizon:
            raise ScenarioError("cost table must cover the run horizon")
        if ground_truth is not None and len(ground_truth) < horizon:
            raise ScenarioError("ground truth must be at least horizon bits long")
        self.cost = cost
        self.horizon = horizon
        self.markers = marker_table(cost, top_level)
        self.layout = BoxLayout(
            overhead, slack or slack_from_markers(self.markers, top_level), top_level
        )
        self.env = Environment(self.layout, ground_truth, family_cap=family_cap)
        self.policy = policy
        self.levels = {
            n: LevelState(n) for n in range(overhead, top_level + 1)
        }
        self.overhead = overhead
        self.top_level = top_level
        self.witness_audits: list[WitnessAudit] = []
        self.stage_log: list[dict] = []
        self.max_trace_seen = 0

    # ---- per-stage actions -------------------------------------------------

    def run(self) -> "PromotionEngine":
        for stage in range(self.overhead, self.horizon):
            self._stage(stage)
        return self

    def _stage(self, stage: int) -> None:
        records = oracle_step(self.env, self.policy, stage)
        events: dict = {
            "stage": stage,
            "enumerations": [
                {"box": str(r.box), "value": r.value, "member": r.member} for r in records
            ],
            "new_lengths": [],
            "new_candidates": [],
            "new_successes": [],
            "new_conflicts": [],
            "promotions": [],
            "dropped": [],
        }
        promoted_down: dict[int, list[int]] = {}
        for level in range(min(stage, self.top_level), self.overhead - 1, -1):
            state = self.levels[level]
            self._extend_lengths(state, promoted_down.get(level, []), stage, events)
            self._absorb_enumerations(state, records, stage, events)
            self._settle_conflicts(state, stage, events, promoted_down)
        self._check_chain(stage)
        for _, size, cap in self.env.capacity_report():
            self.max_trace_seen = max(self.max_trace_seen, size)
            if size > cap:
                raise InvariantViolation("trace capacity sweep failed")
        self.stage_log.append(events)

    def _extend_lengths(self, state, promoted: list[int], stage: int, events) -> None:
        level = state.level
        incoming = sorted(set(promoted))
        coherent = length_for_level(level, stage, self.markers, self.cost)
        for source, length in [("promoted", ln) for ln in incoming] + [("coherent", coherent)]:
            current_top = state.lengths[-1] if state.lengths else 0
            if length <= current_top:
                if source == "promoted":
                    state.dropped_promotions.append((length, stage))
                    events["dropped"].append({"level": level, "length": length})
                continue
            if len(state.lengths) >= self.layout.lengths_capacity(level):
                raise InvariantViolation(
                    f"level {level} exceeded its length capacity "
                    f"{self.layout.lengths_capacity(level)} at stage {stage}"
                )
            state.lengths.append(length)
            state.added.append(stage)
            slot = len(state.lengths)
            state.listed[slot] = []
            box = self.env.add_initial_test(level, slot, length, stage)
            events["new_lengths"].append({"level": level, "slot": slot, "length": length})
            # Trace values that arrived before the box was tested become
            # certified candidates the moment the test exists.
            for value, _ in list(self.env.trace(box)):
                if len(value) == length:
                    self._list_candidate(state, slot, value, stage, events)

    def _absorb_enumerations(self, state, records, stage: int, events) -> None:
        level = state.level
        for record in records:
            if record.box.level != level:
                continue
            if record.box.kind == "M":
                lack = state.lacking.get(record.box)
                if not lack or not record.member:
                    continue
                for pair in sorted(lack):
                    sigma = self.env.pair_sigma[(level, pair[0], pair[1])]
                    if comparable(record.value, sigma):
                        lack.discard(pair)
                        state.pending[pair] -= 1
                        if state.pending[pair] == 0:
                            appeared = state.listed[pair[0]][pair[1] - 1].appeared
                            state.success_since[pair] = max(stage, appeared + 1)
                            events["new_successes"].append(
                                {"level": level, "slot": pair[0], "index": pair[1]}
                            )
            else:
                slot = record.box.slot
                if slot > len(state.lengths):
                    continue  # enumeration into a still-unused initial box
                length = state.lengths[slot - 1]
                if len(record.value) != length:
                    continue  # stray trace value; counts toward capacity only
                self._list_candidate(state, slot, record.value, stage, events)

    def _list_candidate(self, state, slot: int, value: str, stage: int, events) -> None:
        if any(c.word == value for c in state.listed[slot]):
            return
        state.listed[slot].append(Candidate(value, stage))
        index = len(state.listed[slot])
        events["new_candidates"].append(
            {"level": state.level, "slot": slot, "index": index, "word": value}
        )
        self._activate(state, slot, index, value, stage, events)

    def _activate(self, state, slot: int, index: int, sigma: str, stage: int, events) -> None:
        level = state.level
        spawned = self.env.activate_pair(level, slot, index, sigma, stage)
        pair = (slot, index)
        state.pending[pair] = 0
        for child in spawned:
            lack: set[tuple[int, int]] = set()
            values = self.env.trace(child.box)
            for k, indices in child.pattern:
                for i in indices:
                    word = self.env.pair_sigma[(level, k, i)]
                    satisfied = any(
                        self.env.functional.member(child.box, v) and comparable(v, word)
                        for v, _ in values
                    )
                    if satisfied:
                        continue
                    if (k, i) != pair and (k, i) in state.success_since:
                        raise InvariantViolation(
                            f"successful pair {(level, k, i)} lost its witness on spawn"
                        )
                    lack.add((k, i))
            state.lacking[child.box] = lack
            for entry in lack:
                state.pending[entry] = state.pending.get(entry, 0) + 1
        if state.pending[pair] == 0:
            state.success_since[pair] = stage + 1
            events["new_successes"].append({"level": level, "slot": slot, "index": index})

    def _settle_conflicts(self, state, stage: int, events, promoted_down) -> None:
        level = state.level
        fresh = []
        for slot in range(1, len(state.lengths) + 1):
            if slot in state.conflicts:
                continue
            floor = state.lengths[slot - 2] if slot >= 2 else 0
            candidates = state.listed.get(slot, [])
            hit = None
            for i in range(1, len(candidates) + 1):
                for j in range(i + 1, len(candidates) + 1):
                    if not (
                        state.successful_at(slot, i, stage)
                        and state.successful_at(slot, j, stage)
                    ):
                        continue
                    if restrict(candidates[i - 1].word, floor) == restrict(
                        candidates[j - 1].word, floor
                    ):
                        hit = (i, j)
                        break
                if hit:
                    break
            if hit:
                state.conflicts[slot] = (stage, hit)
                fresh.append(slot)
                events["new_conflicts"].append({"level": level, "slot": slot})
        for slot, (first, pair) in state.conflicts.items():
            i, j = pair
            if not (
                state.successful_at(slot, i, stage) and state.successful_at(slot, j, stage)
            ):
                raise InvariantViolation(
                    f"latched conflict at level {level} slot {slot} lost its pair"
                )
        count = len(state.conflicts)
        if count > level - 1:
            raise InvariantViolation(
                f"{count} conflicted lengths at level {level}, stage {stage}; "
                f"the promotion budget allows {level - 1}"
            )
        if count >= 1:
            self.witness_audits.append(self._build_witness(state, stage))
        # A conflicted length is offered downward once; the level below only
        # ever grows, so a length it cannot absorb now stays unabsorbable.
        if level > self.overhead and fresh:
            outgoing = [state.lengths[slot - 1] for slot in sorted(fresh)]
            below = promoted_down.setdefault(level - 1, [])
            below.extend(outgoing)
            events["promotions"].append({"from": level, "lengths": sorted(outgoing)})

    # ---- audits ------------------------------------------------------------

    def build_witness(self, level: int, stage: int) -> WitnessAudit:
        return self._build_witness(self.levels[level], stage)

    def _build_witness(self, state, stage: int) -> WitnessAudit:
        level = state.level
        slots = len(state.lengths)
        conflicted = tuple(sorted(k for k, (first, _) in state.conflicts.items() if first <= stage))
        chain: dict[int, list[tuple[str, int, int]]] = {slots + 1: []}
        for slot in range(slots, 0, -1):
            current = list(chain[slot + 1])
            if slot in conflicted:
                first, (i, j) = state.conflicts[slot]
                for index in (i, j):
                    word = state.listed[slot][index - 1].word
                    if all(not comparable(word, other) for other, _, _ in current):
                        current.append((word, slot, index))
            chain[slot] = current
        sizes = []
        deficits = []
        for slot in range(1, slots + 2):
            members = chain[slot]
            floor = state.lengths[slot - 2] if slot >= 2 else 0
            stumps = {restrict(word, floor) for word, _, _ in members}
            sizes.append(len(members))
            deficits.append(len(members) - len(stumps))
        for slot in range(1, slots + 1):
            if deficits[slot - 1] < deficits[slot]:
                raise InvariantViolation(
                    f"deficit chain increased at level {level} slot {slot}"
                )
            if slot in conflicted and deficits[slot - 1] <= deficits[slot]:
                raise InvariantViolation(
                    f"deficit chain flat across conflicted slot {slot} at level {level}"
                )
        antichain_members = chain[1]
        pattern = {}
        for word, slot, index in antichain_members:
            pattern.setdefault(slot, []).append(index)
        box = self.layout.cube_box(level, {k: tuple(v) for k, v in pattern.items()})
        if box.pattern not in self.env.classes.get(level, {}):
            raise InvariantViolation(f"witness class {box} was never spawned")
        values = self.env.trace(box)
        member_values = [
            v for v, _ in values if self.env.functional.member(box, v)
        ]
        for value in member_values:
            owners = [w for w, _, _ in antichain_members if is_prefix(w, value)]
            if len(owners) != 1:
                raise InvariantViolation(
                    f"trace value {value} on witness {box} extends {len(owners)} chain members"
                )
        if antichain_members:
            if sizes[0] != deficits[0] + 1:
                raise InvariantViolation("nonempty witness antichain is not a near-tree")
            if len(member_values) < sizes[0]:
                raise InvariantViolation(
                    f"witness {box} carries {len(member_values)} certified values, "
                    f"needs {sizes[0]}"
                )
        if len(member_values) < len(conflicted) + 1 and conflicted:
            raise InvariantViolation(
                f"witness {box} carries {len(member_values)} values for "
                f"{len(conflicted)} conflicts"
            )
        return WitnessAudit(
            level,
            stage,
            conflicted,
            str(box),
            tuple(sizes),
            tuple(deficits),
            len(member_values),
            len(values),
        )

    def _check_chain(self, stage: int) -> None:
        tops = []
        for level in range(self.overhead, min(stage, self.top_level) + 1):
            top = self.levels[level].top_length()
            if top is None:
                continue
            if stage >= level and top < level:
                raise InvariantViolation(f"level {level} top length below the level at stage {stage}")
            tops.append(top)
        for a, b in zip(tops, tops[1:]):
            if a > b:
                raise InvariantViolation(f"length chain out of order at stage {stage}")

    # ---- believability and extraction ---------------------------------------

    def conflict_is_active(self, level: int, slot: int, stage: int) -> bool:
        entry = self.levels[level].conflicts.get(slot)
        return entry is not None and entry[0] <= stage

    def believable(self, level: int, stage: int, anchor: str) -> Optional[str]:
        state = self.levels[level]
        slots = state.slots_by(stage)
        if slots == 0:
            return None
        matches = []
        for index in range(1, len(state.listed[slots]) + 1):
            candidate = state.listed[slots][index - 1]
            if candidate.appeared > stage or not is_prefix(anchor, candidate.word):
                continue
            if self._believable_chain_ok(candidate.word, level, stage):
                matches.append(candidate.word)
        if len(matches) > 1:
            raise InvariantViolation(
                f"two credible words at level {level}, stage {stage}: {matches}"
            )
        return matches[0] if matches else None

    def _believable_chain_ok(self, word: str, level: int, stage: int) -> bool:
        for m in range(self.overhead, level + 1):
            mstate = self.levels[m]
            for slot in range(1, mstate.slots_by(stage) + 1):
                stump = restrict(word, mstate.lengths[slot - 1])
                index = next(
                    (
                        i
                        for i, cand in enumerate(mstate.listed[slot], start=1)
                        if cand.word == stump and cand.appeared <= stage
                    ),
                    None,
                )
                if index is None or not mstate.successful_at(slot, index, stage):
                    return False
        return True

    def extract_approximation(self, pad_width: Optional[int] = None) -> Extraction:
        if self.env.ground_truth is None:
            raise ScenarioError("extraction needs a ground-truth word")
        truth = self.env.ground_truth
        base = self.levels[self.overhead]
        if not base.lengths:
            return Extraction("", self.horizon, [], {}, self.overhead, ZERO, ZERO)
        anchor = truth[: base.lengths[-1]]
        anchor_stage = None
        for stage in range(max(self.overhead + 1, base.added[-1]), self.horizon):
            if all(
                any(
                    cand.word == truth[: base.lengths[slot - 1]]
                    and base.successful_at(slot, i, stage)
                    for i, cand in enumerate(base.listed[slot], start=1)
                )
                for slot in range(1, len(base.lengths) + 1)
            ):
                anchor_stage = stage
                break
        if anchor_stage is None:
            return Extraction(anchor, self.horizon, [], {}, self.overhead, ZERO, ZERO)

        width = pad_width or self.horizon
        steps: list[ExtractionStep] = []
        previous_word = anchor.ljust(width, "0")
        previous_stage = anchor_stage
        truncated_at = None
        exponents = set(range(self.top_level + 1))
        for index in range(self.overhead + 1, self.top_level + 1):
            found = None
            for stage in range(previous_stage + 1, self.horizon):
                word = self.believable(index, stage, anchor)
                if word is not None:
                    found = (stage, word)
                    break
            if found is None:
                truncated_at = index
                break
            stage, word = found
            padded = word.ljust(width, "0")
            change = first_difference(padded, previous_word)
            cost = self.cost.value(index, change) if change is not None else ZERO
            if cost > 0:
                exponents.add(halving_exponent(cost))
            steps.append(ExtractionStep(index, stage, word, change, cost))
            previous_word, previous_stage = padded, stage
        top = max(exponents, default=self.top_level)
        expensive: dict[int, list[int]] = {n: [] for n in range(top + 1)}
        for step in steps:
            for n in range(top + 1):
                if step.cost >= Fraction(1, 2**n):
                    expensive[n].append(step.index)
        for n, hits in expensive.items():
            if len(hits) > n + n * (n - 1) // 2:
                raise InvariantViolation(
                    f"{len(hits)} expensive extraction steps at threshold 2^-{n}, "
                    f"allowed {n + n * (n - 1) // 2}"
                )
        total = sum((s.cost for s in steps), ZERO)
        layered = sum(
            (len(hits) * Fraction(2) ** (1 - n) for n, hits in expensive.items()),
            ZERO,
        )
        if total > layered:
            raise InvariantViolation("layered cost bound failed on the extraction")
        return Extraction(anchor, anchor_stage, steps, expensive, truncated_at, total, layered)

    def uniqueness_sweep(self, anchor: str, from_stage: int) -> None:
        for level in range(self.overhead, self.top_level + 1):
            for stage in range(from_stage, self.horizon):
                self.believable(level, stage, anchor)  # raises on duplicates
