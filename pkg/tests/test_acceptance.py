"""End-to-end acceptance checks with pinned tolerances.

Each test here states a contract the package must keep: exact analytic
gradients, exact oracle round-trips, optimal warping costs, exact beam
argmax on small instances, order-similarity invariants, the desk-scale
headline result with its baseline margins, ablation direction, and
byte-for-byte reproducibility of the command-line pipeline.
"""

import csv
import json
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import (
    brute_force_dtw_cost, enumerate_sequences, sample_monotone, sample_one_to_many,
    sample_one_to_one,
)
from stackalign import cli
from stackalign import tensor as T
from stackalign.alignment import (
    AlignerConfig, AlignmentModel, Episode, EpisodeRunner, decode_beam, episode_loss,
)
from stackalign.baselines import dtw_align
from stackalign.config import RunConfig, preset
from stackalign.data import (
    derived_rng, generate_base, matched_pairs, split_movies,
)
from stackalign.encoders import (
    ClipEncoder, SentenceEncoder, contrastive_masks, order_similarity_np,
    ranking_hinge, recall_at_1, similarity_matrix,
)
from stackalign.harness import run_ablations, run_experiment
from stackalign.tensor import Tensor
from stackalign.transitions import (
    FIVE_ACTION, THREE_ACTION, TWO_ACTION, derive_oracle, initial_state,
    initial_state_multi, apply_action, parse_actions, replay,
)

FIXTURES = Path(__file__).parent / "fixtures"


# ---------------------------------------------------------------------------
# gradient fidelity


def test_gradient_fidelity_across_all_trainable_subnetworks():
    """Analytic vs central finite-difference gradients, rel err < 1e-4, on
    more than 20 random instances covering every trainable sub-network."""
    t0 = time.monotonic()
    checked = 0

    # clip and sentence encoders (8 instances)
    for seed in range(4):
        rng = np.random.default_rng(100 + seed)
        ce = ClipEncoder(5, 4, rng)
        frames = rng.normal(size=(3, 5))

        def build_clip():
            return T.sum_squares(ce(frames))

        assert T.gradient_check(build_clip, ce.parameters().values(), rng) < 1e-4
        checked += 1

        se = SentenceEncoder(11, 4, 5, 4, rng)
        tokens = [int(t) for t in rng.integers(0, 11, size=4)]

        def build_sent():
            return T.sum_squares(se(tokens))

        assert T.gradient_check(build_sent, se.parameters().values(), rng) < 1e-4
        checked += 1

    # ranking loss through the fused similarity matrix (4 instances)
    for seed in range(4):
        rng = np.random.default_rng(200 + seed)
        vs = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(5)]
        ss = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(5)]
        mc, ms = contrastive_masks(5, 3, rng)

        def build_rank():
            return ranking_hinge(similarity_matrix(T.stack_rows(vs), T.stack_rows(ss)), 0.2, mc, ms)

        assert T.gradient_check(build_rank, vs + ss, rng) < 1e-4
        checked += 1

    # the full aligner: all four stack chains, classifier, and pointer head
    # are live in the non-monotonic preset (10 instances)
    from stackalign.transitions import NON_MONOTONIC

    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        cfg = AlignerConfig(embed_dim=4, video_hidden=5, text_hidden=5,
                            action_hidden=3, matched_hidden=4,
                            classifier_hidden=8, pointer_hidden=5)
        model = AlignmentModel(cfg, NON_MONOTONIC, rng)
        clips = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(3)]
        sents = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(2)]
        labels = (0, 1, 0)  # revisits sentence 0: exercises the pointer head
        actions = derive_oracle(labels, 2, NON_MONOTONIC)
        params = list(model.parameters().values()) + clips + sents

        def build_episode():
            runner = EpisodeRunner(model, clips, sents)
            return episode_loss(runner, actions)

        assert T.gradient_check(build_episode, params, rng) < 1e-4
        checked += 1

    assert checked >= 20
    assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# oracle round-trip


@pytest.mark.parametrize("action_set,sampler", [
    (TWO_ACTION, sample_one_to_one),
    (THREE_ACTION, sample_one_to_many),
    (FIVE_ACTION, sample_monotone),
])
def test_oracle_round_trip_exact_for_1000_random_alignments(action_set, sampler):
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        labels, n_sentences = sampler(rng)
        actions = derive_oracle(labels, n_sentences, action_set)
        result = replay(actions, len(labels), n_sentences, action_set)
        assert result.labels == tuple(labels)
    assert time.monotonic() - t0 < 10.0


# ---------------------------------------------------------------------------
# warping optimality


def test_dtw_cost_equals_brute_force_minimum_on_500_matrices():
    t0 = time.monotonic()
    rng = np.random.default_rng(11)
    for _ in range(500):
        m = int(rng.integers(1, 7))
        n = int(rng.integers(1, 7))
        D = rng.uniform(0.0, 4.0, size=(m, n))
        assert dtw_align(D).cost == pytest.approx(brute_force_dtw_cost(D), abs=1e-12)
    assert time.monotonic() - t0 < 30.0


# ---------------------------------------------------------------------------
# beam exactness


def test_beam_returns_global_argmax_on_100_small_instances():
    rng = np.random.default_rng(13)
    found = 0
    while found < 100:
        n_clips = int(rng.integers(1, 4))
        n_sents = int(rng.integers(1, 4))
        cfg = AlignerConfig(embed_dim=3, video_hidden=4, text_hidden=4,
                            action_hidden=3, matched_hidden=3,
                            classifier_hidden=6, pointer_hidden=4)
        model = AlignmentModel(cfg, THREE_ACTION, rng)
        clips = [Tensor(rng.normal(size=3)) for _ in range(n_clips)]
        sents = [Tensor(rng.normal(size=3)) for _ in range(n_sents)]
        runner = EpisodeRunner(model, clips, sents)
        sequences = enumerate_sequences(runner)
        best_actions, best_logp = max(sequences, key=lambda pair: pair[1])
        got = decode_beam(runner, width=len(sequences))
        assert got.log_prob == pytest.approx(best_logp, abs=1e-9)
        assert [a.token() for a in got.actions] == [a.token() for a in best_actions]
        found += 1


# ---------------------------------------------------------------------------
# order-similarity invariants


def test_order_similarity_nonpositive_and_zero_iff_dominated_over_1e4_vectors():
    rng = np.random.default_rng(17)
    for _ in range(10_000):
        d = int(rng.integers(1, 8))
        v = rng.normal(size=d)
        s = rng.normal(size=d)
        f = order_similarity_np(v, s)
        assert f <= 0.0
        assert (f == 0.0) == bool((v <= s).all())


# ---------------------------------------------------------------------------
# desk-scale headline and ablation direction


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("desk")
    t0 = time.monotonic()
    reports = run_experiment(preset("desk"), outdir)
    elapsed = time.monotonic() - t0
    return reports, outdir, elapsed


def test_desk_pretraining_recall_lands_near_configured_level(desk):
    cfg = preset("desk")
    base = generate_base(cfg.gen)
    splits = split_movies(base, cfg.gen.split, derived_rng(cfg.gen.seed, 3))
    val_pairs = matched_pairs(splits["val"])
    from stackalign.harness import load_encoders

    _, outdir, _ = desk
    clip_enc, sent_enc = load_encoders(outdir / "encoders.json")
    with T.no_grad():
        V = clip_enc.encode_batch([c for c, _ in val_pairs]).data
        S = sent_enc.encode_batch([s for _, s in val_pairs]).data
    recall = recall_at_1(V, S)
    assert 0.7 <= recall <= 0.92, f"pretraining recall@1 {recall:.3f} not near 0.8"


def test_desk_neural_beats_dtw_by_ten_points_on_both_metrics(desk):
    reports, _, elapsed = desk
    neural, dtw = reports["neural"], reports["dtw"]
    assert neural.clip_accuracy >= 0.85
    assert neural.clip_accuracy - dtw.clip_accuracy >= 0.10
    assert neural.sentence_iou - dtw.sentence_iou >= 0.10
    assert elapsed < 900.0


def test_desk_full_model_at_least_matches_every_ablation(desk, tmp_path):
    _, _, _ = desk
    reports = run_ablations(preset("desk"), tmp_path, write_files=False)
    full = reports["full"]
    for variant, rep in reports.items():
        assert full.clip_accuracy >= rep.clip_accuracy - 0.01, variant
        assert full.sentence_iou >= rep.sentence_iou - 0.01, variant


# ---------------------------------------------------------------------------
# CLI determinism


def _run_pipeline(outdir, monkeypatch, cfg_json, gen_args):
    outdir.mkdir(parents=True, exist_ok=True)
    monkeypatch.chdir(outdir)
    monkeypatch.setenv("STACKALIGN_OUTDIR", str(outdir))
    cfg_path = outdir / "cfg.json"
    cfg_path.write_text(cfg_json)
    base = ["--config", str(cfg_path)]
    assert cli.main([*gen_args, "--out", "data.jsonl", "--manifest", "manifest.json"]) == 0
    assert cli.main(["pretrain", *base, "--data", "data.jsonl", "--manifest", "manifest.json",
                     "--out", "enc.json"]) == 0
    assert cli.main(["train", *base, "--data", "data.jsonl", "--manifest", "manifest.json",
                     "--encoders", "enc.json", "--out", "model.json"]) == 0
    assert cli.main(["align", "--data", "data.jsonl", "--manifest", "manifest.json",
                     "--encoders", "enc.json", "--model", "model.json", "--split", "test",
                     "--out", "alignments.jsonl"]) == 0
    assert cli.main(["eval", "--data", "data.jsonl", "--manifest", "manifest.json",
                     "--pred", "alignments.jsonl", "--split", "test",
                     "--out", "report.csv"]) == 0
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir()) if p.name != "cfg.json"}


def test_cli_pipeline_reruns_byte_identical(tmp_path, monkeypatch):
    from test_cli import gen_flags
    from test_harness import micro_cfg

    cfg = micro_cfg()
    gen_args = gen_flags(cfg.gen, cfg.gen.perturbation)
    first = _run_pipeline(tmp_path / "a", monkeypatch, cfg.to_json(), gen_args)
    second = _run_pipeline(tmp_path / "b", monkeypatch, cfg.to_json(), gen_args)
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"{name} differs between identical runs"


# ---------------------------------------------------------------------------
# golden transition tables


def _state_as_lists(state):
    return {
        "stacks": [list(s) for s in state.stacks],
        "matched": [[list(m) for m in el.members] for el in state.matched],
    }


def test_golden_basic_action_table():
    table = json.loads((FIXTURES / "transition_tables.json").read_text())["basic"]
    n_clips, n_sents = (len(s) for s in table["initial"]["stacks"])
    for row in table["rows"]:
        state = initial_state(n_clips, n_sents)
        action = parse_actions(row["action"])[0]
        after = apply_action(state, action)
        got = _state_as_lists(after)
        assert got["stacks"] == row["stacks"], row["action"]
        assert got["matched"] == row["matched"], row["action"]


def test_golden_multi_sequence_example():
    table = json.loads((FIXTURES / "transition_tables.json").read_text())["multi_sequence_example"]
    state = initial_state_multi([len(s) for s in table["initial"]["stacks"]])
    for step in table["steps"]:
        action = parse_actions(step["action"])[0]
        state = apply_action(state, action)
        got = _state_as_lists(state)
        assert got["stacks"] == step["stacks"], step["action"]
        assert got["matched"] == step["matched"], step["action"]
