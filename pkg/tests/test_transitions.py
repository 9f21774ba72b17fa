import numpy as np
import pytest

from helpers import (
    sample_monotone, sample_non_monotonic, sample_one_to_many, sample_one_to_one,
)
from stackalign.transitions import (
    FIVE_ACTION, MR, MRS, MWH, NON_MONOTONIC, PC, PS, THREE_ACTION, TWO_ACTION,
    Action, ActionSet, AlignmentState, IllegalAction, M, MRC, MatchedElement,
    OracleError, apply_action, derive_oracle, initial_state, initial_state_multi,
    legal_actions, multi_sequence, parse_actions, replay, serialize_actions,
    validate_labels,
)


def test_single_action_effects_on_three_by_three():
    start = initial_state(3, 3)

    after_pc = apply_action(start, Action(PC))
    assert after_pc.video == (1, 2) and after_pc.text == (0, 1, 2) and after_pc.matched == ()

    after_ps = apply_action(start, Action(PS))
    assert after_ps.video == (0, 1, 2) and after_ps.text == (1, 2)

    after_m = apply_action(start, Action(M))
    assert after_m.video == (1, 2) and after_m.text == (1, 2)
    assert after_m.matched == (MatchedElement(((0,), (0,))),)

    after_mrc = apply_action(start, Action(MRC))
    assert after_mrc.video == (0, 1, 2) and after_mrc.text == (1, 2)
    assert after_mrc.matched == (MatchedElement(((0,), (0,))),)

    after_mrs = apply_action(start, Action(MRS))
    assert after_mrs.video == (1, 2) and after_mrs.text == (0, 1, 2)
    assert after_mrs.matched == (MatchedElement(((0,), (0,))),)


def test_three_sequence_match_retain_walkthrough():
    state = initial_state_multi([3, 3, 3])

    state = apply_action(state, Action(MR, mask=(1, 1, 0)))
    assert state.stacks == ((0, 1, 2), (0, 1, 2), (0, 1, 2))
    assert state.matched == (MatchedElement(((0,), (0,), ())),)

    state = apply_action(state, Action(PC))
    assert state.stacks[0] == (1, 2)

    state = apply_action(state, Action(PS))
    assert state.stacks[1] == (1, 2)

    state = apply_action(state, Action(MR, mask=(0, 1, 1)))
    assert state.stacks == ((1, 2), (1, 2), (0, 1, 2))
    assert state.matched == (
        MatchedElement(((0,), (0,), ())),
        MatchedElement(((), (1,), (0,))),
    )


def test_consecutive_mrs_grows_one_element():
    state = initial_state(2, 1)
    state = apply_action(state, Action(MRS))
    state = apply_action(state, Action(MRS))
    assert state.matched == (MatchedElement(((0, 1), (0,))),)
    state = apply_action(state, Action(PS))
    assert state.is_terminal()


def test_mrs_after_interruption_starts_new_element():
    # PC between two MRS on the same sentence must still merge, because the
    # matched top is unchanged; a different sentence in between must not
    state = initial_state(3, 2)
    state = apply_action(state, Action(MRS))
    state = apply_action(state, Action(PC))
    state = apply_action(state, Action(MRS))
    assert state.matched == (MatchedElement(((0, 2), (0,))),)

    other = initial_state(2, 2)
    other = apply_action(other, Action(MRS))
    other = apply_action(other, Action(PS))
    other = apply_action(other, Action(MRS))
    assert other.matched == (
        MatchedElement(((0,), (0,))),
        MatchedElement(((1,), (1,))),
    )


def test_match_with_history_pops_clip_into_old_element():
    state = initial_state(3, 2)
    state = apply_action(state, Action(M))
    state = apply_action(state, Action(M))
    state = apply_action(state, Action(MWH, q=0))
    assert state.matched == (
        MatchedElement(((0, 2), (0,))),
        MatchedElement(((1,), (1,))),
    )
    assert state.is_terminal()
    result = replay(state.history, 3, 2)
    assert result.labels == (0, 1, 0)


def test_illegal_actions_raise_with_state_summary():
    empty_video = AlignmentState(((), (0,)))
    with pytest.raises(IllegalAction, match="PC is illegal"):
        apply_action(empty_video, Action(PC))
    with pytest.raises(IllegalAction, match="not in the enabled subset"):
        apply_action(initial_state(1, 1), Action(MRS), TWO_ACTION)
    with pytest.raises(IllegalAction, match="MWH:2"):
        apply_action(initial_state(1, 1), Action(MWH, q=2))


def test_action_parameter_validation():
    with pytest.raises(ValueError, match="mask"):
        Action(MR, mask=(1, 0, 0))
    with pytest.raises(ValueError, match="no mask"):
        Action(PC, mask=(1, 1))
    with pytest.raises(ValueError, match="q"):
        Action(MWH)
    with pytest.raises(ValueError, match="unknown action kind"):
        Action("XX")


def test_legal_actions_canonical_order_and_terminal():
    state = initial_state(2, 2)
    acts = legal_actions(state, FIVE_ACTION)
    assert [a.kind for a in acts] == [PC, PS, M, MRC, MRS]
    assert legal_actions(AlignmentState(((), ())), FIVE_ACTION) == ()
    # with video empty only sentence-side actions remain
    acts = legal_actions(AlignmentState(((), (0,))), FIVE_ACTION)
    assert [a.kind for a in acts] == [PS]


def test_legal_actions_enumerates_pointer_targets():
    state = initial_state(3, 2)
    state = apply_action(state, Action(M))
    state = apply_action(state, Action(M))
    acts = legal_actions(state, NON_MONOTONIC)
    assert [a.token() for a in acts] == ["PC", "M", "MWH:0", "MWH:1"] or \
           [a.token() for a in acts] == ["PC", "MWH:0", "MWH:1"]
    # text stack is empty here, so M must be gone
    assert all(a.kind != M for a in acts)


def test_action_set_validation():
    with pytest.raises(ValueError, match="cannot express"):
        ActionSet(frozenset({PC}), "one_to_one")
    with pytest.raises(ValueError, match="cannot express"):
        ActionSet(frozenset({PC, PS, MRS, M}), "one_to_many_sentence")
    with pytest.raises(ValueError, match="unknown mode"):
        ActionSet(frozenset({PC, M}), "sideways")
    multi_sequence(3)  # fine


def test_oracle_example_one_to_many():
    actions = derive_oracle([None, 0, 0, 1], 2, THREE_ACTION)
    assert serialize_actions(actions) == "PC MRS MRS PS MRS PS"


def test_oracle_example_one_to_one():
    actions = derive_oracle([0, None, 1], 2, TWO_ACTION)
    assert serialize_actions(actions) == "M PC M"


def test_oracle_rejects_mode_violations():
    with pytest.raises(OracleError, match="clip 1"):
        derive_oracle([1, 0], 2, THREE_ACTION)  # order flips
    with pytest.raises(OracleError, match="sentence 1"):
        derive_oracle([0, 0], 2, THREE_ACTION)  # sentence 1 unmatched
    with pytest.raises(OracleError, match="clip 1"):
        derive_oracle([0, 0], 2, TWO_ACTION)  # duplicate match breaks one-to-one
    with pytest.raises(OracleError, match="exactly once"):
        derive_oracle([0], 2, TWO_ACTION)  # sentence 1 never matched
    with pytest.raises(OracleError, match="outside"):
        validate_labels([5], 2, TWO_ACTION)


def test_oracle_round_trip_all_modes():
    rng = np.random.default_rng(0)
    cases = [
        (TWO_ACTION, sample_one_to_one),
        (THREE_ACTION, sample_one_to_many),
        (FIVE_ACTION, sample_monotone),
        (NON_MONOTONIC, sample_non_monotonic),
    ]
    for action_set, sampler in cases:
        for _ in range(200):
            labels, m = sampler(rng)
            actions = derive_oracle(labels, m, action_set)
            result = replay(actions, len(labels), m, action_set)
            assert result.labels == labels, (action_set.mode, labels, serialize_actions(actions))
            assert result.final_state.is_terminal()


def test_randomized_oracle_still_replays_exactly():
    rng = np.random.default_rng(1)
    for _ in range(100):
        labels, m = sample_monotone(rng)
        actions = derive_oracle(labels, m, FIVE_ACTION, rng=rng)
        assert replay(actions, len(labels), m, FIVE_ACTION).labels == labels


def test_clip_conservation_along_trajectories():
    rng = np.random.default_rng(2)
    for _ in range(50):
        labels, m = sample_one_to_many(rng)
        n = len(labels)
        state = initial_state(n, m)
        for a in derive_oracle(labels, m, THREE_ACTION):
            state = apply_action(state, a)
            popped = sum(1 for h in state.history if h.kind == PC)
            in_matched = sum(len(el.clips) for el in state.matched)
            assert len(state.video) + popped + in_matched == n


def test_replay_errors_name_the_failing_step():
    with pytest.raises(IllegalAction, match="action 1"):
        replay([Action(PC), Action(PC)], 1, 0)
    with pytest.raises(IllegalAction, match="non-terminal"):
        replay([Action(M)], 2, 1)
    result = replay([], 0, 0)
    assert result.labels == ()


def test_unmatched_sentences_are_reported():
    actions = derive_oracle([0, None, 2], 3, FIVE_ACTION)
    result = replay(actions, 3, 3, FIVE_ACTION)
    assert result.unmatched_sentences == [1]


def test_serialization_round_trip():
    actions = [Action(PC), Action(PS), Action(M), Action(MRC), Action(MRS),
               Action(MR, mask=(1, 1, 0)), Action(MWH, q=3)]
    text = serialize_actions(actions)
    assert text == "PC PS M MRC MRS MR:110 MWH:3"
    assert parse_actions(text) == actions
    with pytest.raises(ValueError, match="unknown action token"):
        parse_actions("PC XX")
