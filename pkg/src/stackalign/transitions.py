"""Stack transition system for aligning two (or more) discrete sequences.

State is a set of input stacks (stack 0 holds clip indices, stack 1 holds
sentence indices; extra stacks are allowed), a history of executed actions,
and a stack of matched elements.  Actions:

  PC        pop the top clip, leaving it unmatched
  PS        pop the top sentence, leaving it unmatched
  M         match the two tops, pop both, push a new matched element
  MRC       match the two tops, pop the sentence only (clip is retained
            and can match again); always pushes a new element
  MRS       match the two tops, pop the clip only (sentence is retained);
            consecutive MRS on the same sentence grow one element
  MR:mask   match the tops of every masked stack, popping nothing
  MWH:q     pop the top clip and add it to matched element q, counting
            from the bottom of the matched stack (non-monotone matching)

States are immutable; ``apply_action`` returns a new state.  The matched
stack keeps its newest element last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PC = "PC"
PS = "PS"
M = "M"
MRC = "MRC"
MRS = "MRS"
MR = "MR"
MWH = "MWH"

KIND_ORDER = (PC, PS, M, MRC, MRS, MR, MWH)

MODES = ("one_to_one", "one_to_many_sentence", "monotone", "non_monotonic", "multi_sequence")


class IllegalAction(ValueError):
    """Action preconditions do not hold in the given state."""


class OracleError(ValueError):
    """Alignment cannot be expressed by the configured action subset."""


@dataclass(frozen=True)
class Action:
    kind: str
    mask: tuple[int, ...] | None = None  # MR only: one bit per input stack
    q: int | None = None                 # MWH only: matched-stack index from the bottom

    def __post_init__(self):
        if self.kind not in KIND_ORDER:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == MR:
            if self.mask is None or sum(self.mask) < 2 or any(b not in (0, 1) for b in self.mask):
                raise ValueError(f"MR needs a 0/1 mask with at least two set bits, got {self.mask}")
        elif self.mask is not None:
            raise ValueError(f"{self.kind} takes no mask")
        if self.kind == MWH:
            if self.q is None or self.q < 0:
                raise ValueError(f"MWH needs a matched-stack index q >= 0, got {self.q}")
        elif self.q is not None:
            raise ValueError(f"{self.kind} takes no pointer index")

    def token(self) -> str:
        if self.kind == MR:
            return "MR:" + "".join(str(b) for b in self.mask)
        if self.kind == MWH:
            return f"MWH:{self.q}"
        return self.kind


@dataclass(frozen=True)
class MatchedElement:
    """One matched group: for each input stack, the items it contributed
    (in match order).  For clip/sentence alignment, ``members[0]`` is the
    ordered clip tuple and ``members[1]`` the single sentence."""

    members: tuple[tuple[int, ...], ...]

    @property
    def clips(self) -> tuple[int, ...]:
        return self.members[0]

    @property
    def sentence(self) -> int:
        return self.members[1][0]


@dataclass(frozen=True)
class AlignmentState:
    stacks: tuple[tuple[int, ...], ...]
    history: tuple[Action, ...] = ()
    matched: tuple[MatchedElement, ...] = ()

    @property
    def video(self) -> tuple[int, ...]:
        return self.stacks[0]

    @property
    def text(self) -> tuple[int, ...]:
        return self.stacks[1]

    def is_terminal(self) -> bool:
        return all(len(s) == 0 for s in self.stacks)

    def summary(self) -> str:
        stacks = " ".join(f"s{k}={list(s)}" for k, s in enumerate(self.stacks))
        matched = [f"{list(e.members[0])}->{e.members[1]}" for e in self.matched]
        return f"{stacks} matched={matched} steps={len(self.history)}"


def initial_state(n_clips: int, n_sentences: int) -> AlignmentState:
    return AlignmentState((tuple(range(n_clips)), tuple(range(n_sentences))))


def initial_state_multi(lengths: Sequence[int]) -> AlignmentState:
    return AlignmentState(tuple(tuple(range(n)) for n in lengths))


@dataclass(frozen=True)
class ActionSet:
    """Enabled action kinds plus the matching mode they must support."""

    kinds: frozenset[str]
    mode: str
    n_sequences: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        k = self.kinds
        need = {
            "one_to_one": {PC, M} <= k,
            "one_to_many_sentence": {PC, PS, MRS} <= k and M not in k,
            "monotone": {PC, PS} <= k and ({M, MRS} & k),
            "non_monotonic": {PC, PS, M, MWH} <= k,
            "multi_sequence": MR in k and self.n_sequences >= 2,
        }[self.mode]
        if not need:
            raise ValueError(f"action kinds {sorted(k)} cannot express mode {self.mode!r}")
        if self.mode != "multi_sequence" and self.n_sequences != 2:
            raise ValueError(f"mode {self.mode!r} is defined for exactly two sequences")


TWO_ACTION = ActionSet(frozenset({PC, M}), "one_to_one")
THREE_ACTION = ActionSet(frozenset({PC, PS, MRS}), "one_to_many_sentence")
FIVE_ACTION = ActionSet(frozenset({PC, PS, M, MRC, MRS}), "monotone")
NON_MONOTONIC = ActionSet(frozenset({PC, PS, M, MWH}), "non_monotonic")


def multi_sequence(n_sequences: int) -> ActionSet:
    return ActionSet(frozenset({PC, PS, MR}), "multi_sequence", n_sequences)


# ---------------------------------------------------------------------------
# semantics


def _preconditions_hold(state: AlignmentState, action: Action) -> bool:
    video_ok = len(state.stacks[0]) > 0
    text_ok = len(state.stacks[1]) > 0
    if action.kind == PC:
        return video_ok
    if action.kind == PS:
        return text_ok
    if action.kind in (M, MRC, MRS):
        return video_ok and text_ok
    if action.kind == MR:
        if action.mask is None or len(action.mask) != len(state.stacks):
            return False
        return all(len(state.stacks[k]) > 0 for k, b in enumerate(action.mask) if b)
    if action.kind == MWH:
        return video_ok and action.q is not None and action.q < len(state.matched)
    return False


def apply_action(state: AlignmentState, action: Action,
                 action_set: ActionSet | None = None) -> AlignmentState:
    """Execute one action, returning the successor state.

    Raises IllegalAction when the action's kind is not enabled or its stack
    preconditions fail; the message carries a state summary.
    """
    if action_set is not None and action.kind not in action_set.kinds:
        raise IllegalAction(f"{action.token()} is not in the enabled subset at [{state.summary()}]")
    if not _preconditions_hold(state, action):
        raise IllegalAction(f"{action.token()} is illegal at [{state.summary()}]")

    stacks = list(state.stacks)
    matched = state.matched
    kind = action.kind
    if kind == PC:
        stacks[0] = stacks[0][1:]
    elif kind == PS:
        stacks[1] = stacks[1][1:]
    elif kind == M:
        c, s = stacks[0][0], stacks[1][0]
        stacks[0], stacks[1] = stacks[0][1:], stacks[1][1:]
        matched = matched + (MatchedElement(((c,), (s,))),)
    elif kind == MRC:
        c, s = stacks[0][0], stacks[1][0]
        stacks[1] = stacks[1][1:]
        matched = matched + (MatchedElement(((c,), (s,))),)
    elif kind == MRS:
        c, s = stacks[0][0], stacks[1][0]
        stacks[0] = stacks[0][1:]
        if matched and matched[-1].members[1] == (s,):
            top = matched[-1]
            grown = MatchedElement((top.members[0] + (c,),) + top.members[1:])
            matched = matched[:-1] + (grown,)
        else:
            matched = matched + (MatchedElement(((c,), (s,))),)
    elif kind == MR:
        members = tuple((stacks[k][0],) if b else () for k, b in enumerate(action.mask))
        matched = matched + (MatchedElement(members),)
    elif kind == MWH:
        c = stacks[0][0]
        stacks[0] = stacks[0][1:]
        el = matched[action.q]
        grown = MatchedElement((el.members[0] + (c,),) + el.members[1:])
        matched = matched[:action.q] + (grown,) + matched[action.q + 1:]
    return AlignmentState(tuple(stacks), state.history + (action,), matched)


def legal_actions(state: AlignmentState, action_set: ActionSet) -> tuple[Action, ...]:
    """Enabled actions whose preconditions hold, in canonical order."""
    out: list[Action] = []
    for kind in KIND_ORDER:
        if kind not in action_set.kinds:
            continue
        if kind == MR:
            n = len(state.stacks)
            for bits in range(1, 2 ** n):
                mask = tuple((bits >> k) & 1 for k in range(n))
                if sum(mask) < 2:
                    continue
                a = Action(MR, mask=mask)
                if _preconditions_hold(state, a):
                    out.append(a)
        elif kind == MWH:
            for q in range(len(state.matched)):
                a = Action(MWH, q=q)
                if _preconditions_hold(state, a):
                    out.append(a)
        else:
            a = Action(kind)
            if _preconditions_hold(state, a):
                out.append(a)
    return tuple(out)


# ---------------------------------------------------------------------------
# alignments

Labels = tuple  # per clip: sentence index or None


def validate_labels(labels: Sequence[int | None], n_sentences: int, action_set: ActionSet) -> None:
    """Check that per-clip labels are expressible in the given mode; raises
    OracleError naming the first offending clip index."""
    for i, lab in enumerate(labels):
        if lab is not None and not (0 <= lab < n_sentences):
            raise OracleError(f"clip {i}: label {lab} outside 0..{n_sentences - 1}")
    mode = action_set.mode
    if mode == "multi_sequence":
        raise OracleError("per-clip labels do not describe multi-sequence alignment")
    non_null = [(i, lab) for i, lab in enumerate(labels) if lab is not None]
    if mode in ("one_to_one", "one_to_many_sentence", "monotone"):
        prev = -1
        for i, lab in non_null:
            if lab < prev or (mode == "one_to_one" and lab == prev):
                raise OracleError(f"clip {i}: label {lab} breaks monotone order (previous {prev})")
            prev = lab
    if mode == "one_to_one":
        seen = [lab for _, lab in non_null]
        if seen != list(range(n_sentences)):
            raise OracleError(f"one-to-one mode needs every sentence matched exactly once, got {seen} "
                              f"for {n_sentences} sentences (clip {len(labels)})")
    if mode == "one_to_many_sentence":
        present = {lab for _, lab in non_null}
        missing = sorted(set(range(n_sentences)) - present)
        if missing:
            raise OracleError(f"sentence {missing[0]} has no clips, which this mode cannot express "
                              f"(clip {len(labels)})")
    if mode == "non_monotonic":
        first: dict[int, int] = {}
        for i, lab in non_null:
            first.setdefault(lab, i)
        order = sorted(first)
        for a, b in zip(order, order[1:]):
            if first[a] > first[b]:
                raise OracleError(f"clip {first[b]}: sentence {b} starts before sentence {a}, "
                                  "but matched history only reaches sentences already begun")


def derive_oracle(labels: Sequence[int | None], n_sentences: int, action_set: ActionSet,
                  rng: np.random.Generator | None = None) -> list[Action]:
    """Produce an action sequence that replays to exactly these labels.

    Deterministic by default: at every step the first correct action in
    canonical kind order is taken (pops win ties).  With ``rng`` the choice
    among correct actions is uniform, for sampling alternative derivations.
    """
    validate_labels(labels, n_sentences, action_set)
    labels = tuple(labels)
    n = len(labels)
    state = initial_state(n, n_sentences)
    actions: list[Action] = []
    matched_sentences: dict[int, int] = {}  # sentence -> matched element index

    while not state.is_terminal():
        i = state.stacks[0][0] if state.stacks[0] else None
        top_sentence = state.stacks[1][0] if state.stacks[1] else None
        remaining = {lab for j in state.stacks[0] for lab in [labels[j]] if lab is not None}

        candidates: list[Action] = []
        if i is not None and labels[i] is None and PC in action_set.kinds:
            candidates.append(Action(PC))
        if top_sentence is not None and top_sentence not in remaining and PS in action_set.kinds:
            candidates.append(Action(PS))
        if i is not None and top_sentence is not None and labels[i] == top_sentence:
            later = any(labels[j] == top_sentence for j in state.stacks[0][1:])
            if M in action_set.kinds and (not later or action_set.mode == "non_monotonic"):
                candidates.append(Action(M))
            if MRS in action_set.kinds:
                candidates.append(Action(MRS))
        if i is not None and MWH in action_set.kinds and labels[i] in matched_sentences:
            candidates.append(Action(MWH, q=matched_sentences[labels[i]]))

        if not candidates:
            raise OracleError(f"no correct action at [{state.summary()}]")
        pick = candidates[0] if rng is None else candidates[int(rng.integers(len(candidates)))]
        if pick.kind == M:
            matched_sentences[labels[i]] = len(state.matched)
        state = apply_action(state, pick, action_set)
        actions.append(pick)
    return actions


@dataclass
class ReplayResult:
    labels: tuple
    final_state: AlignmentState
    matched_pairs: list = field(default_factory=list)      # (clip, sentence) in match order
    unmatched_sentences: list = field(default_factory=list)


def replay(actions: Iterable[Action], n_clips: int, n_sentences: int,
           action_set: ActionSet | None = None, require_terminal: bool = True) -> ReplayResult:
    """Execute an action sequence from the initial state and read off the
    alignment.  A clip matched into several elements keeps its first
    sentence.  Errors name the failing action index."""
    state = initial_state(n_clips, n_sentences)
    for k, a in enumerate(actions):
        try:
            state = apply_action(state, a, action_set)
        except IllegalAction as e:
            raise IllegalAction(f"action {k}: {e}") from None
    if require_terminal and not state.is_terminal():
        raise IllegalAction(f"sequence leaves a non-terminal state [{state.summary()}]")

    labels: list[int | None] = [None] * n_clips
    pairs: list[tuple[int, int]] = []
    for el in state.matched:
        s = el.members[1][0] if el.members[1] else None
        for c in el.members[0]:
            if s is not None:
                pairs.append((c, s))
                if labels[c] is None:
                    labels[c] = s
    in_elements = {el.members[1][0] for el in state.matched if el.members[1]}
    unmatched = [s for s in range(n_sentences) if s not in in_elements]
    return ReplayResult(tuple(labels), state, pairs, unmatched)


# ---------------------------------------------------------------------------
# serialization


def serialize_actions(actions: Iterable[Action]) -> str:
    return " ".join(a.token() for a in actions)


def parse_actions(text: str) -> list[Action]:
    out: list[Action] = []
    for tok in text.split():
        if tok.startswith("MR:"):
            out.append(Action(MR, mask=tuple(int(b) for b in tok[3:])))
        elif tok.startswith("MWH:"):
            out.append(Action(MWH, q=int(tok[4:])))
        elif tok in KIND_ORDER:
            out.append(Action(tok))
        else:
            raise ValueError(f"unknown action token {tok!r}")
    return out
