"""Step-by-step tour of the stack transition system.

Walks a five-action machine through a hand-written trajectory, printing the
stacks after every action, then derives an oracle trajectory from labels and
replays it back to show the round trip is exact.
"""

from stackalign.transitions import (
    FIVE_ACTION, THREE_ACTION, derive_oracle, initial_state, parse_actions,
    apply_action, replay, serialize_actions,
)


def manual_walk():
    print("== applying actions by hand (5-action set, 3 clips x 3 sentences) ==")
    state = initial_state(3, 3)
    print(f"start : {state.summary()}")
    for tok in ["M", "MRS", "PC", "MRC", "PS", "M"]:
        action = parse_actions(tok)[0]
        state = apply_action(state, action, FIVE_ACTION)
        print(f"{tok:<6}: {state.summary()}")
    print(f"terminal: {state.is_terminal()}")
    print()


def oracle_round_trip():
    print("== oracle from labels, then replay ==")
    # clips 0,1 share sentence 0; clip 2 is unmatched; clip 3 takes sentence 1
    labels = (0, 0, None, 1)
    actions = derive_oracle(labels, n_sentences=2, action_set=THREE_ACTION)
    print(f"labels  : {labels}")
    print(f"actions : {serialize_actions(actions)}")
    back = replay(actions, n_clips=len(labels), n_sentences=2, action_set=THREE_ACTION)
    print(f"replayed: {back.labels}")
    assert back.labels == labels
    print("round trip exact")
    print()


def main():
    manual_walk()
    oracle_round_trip()


if __name__ == "__main__":
    main()
