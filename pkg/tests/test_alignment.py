import numpy as np
import pytest

from helpers import enumerate_sequences, sample_one_to_many, toy_episodes
from stackalign import tensor as T
from stackalign.alignment import (
    AlignerConfig, AlignmentModel, AlignTrainConfig, Episode, EpisodeRunner,
    decode_beam, decode_greedy, episode_loss, train_alignment,
)
from stackalign.encoders import ClipEncoder, SentenceEncoder, encoder_parameters
from stackalign.tensor import Tensor
from stackalign.transitions import (
    NON_MONOTONIC, THREE_ACTION, TWO_ACTION, Action, derive_oracle, M, MWH,
)


def tiny_model(rng, action_set=THREE_ACTION, embed=6, **kw):
    cfg = AlignerConfig(embed_dim=embed, video_hidden=8, text_hidden=8,
                        action_hidden=4, matched_hidden=5, classifier_hidden=12,
                        pointer_hidden=7, **kw)
    return AlignmentModel(cfg, action_set, rng)


def random_runner(rng, model, n_clips, n_sentences, requires_grad=False):
    cembs = [Tensor(rng.normal(size=model.cfg.embed_dim), requires_grad=requires_grad)
             for _ in range(n_clips)]
    sembs = [Tensor(rng.normal(size=model.cfg.embed_dim), requires_grad=requires_grad)
             for _ in range(n_sentences)]
    return EpisodeRunner(model, cembs, sembs)


def test_state_dim_at_reference_widths():
    rng = np.random.default_rng(0)
    full = AlignmentModel(AlignerConfig(embed_dim=300), THREE_ACTION, rng)
    assert full.state_dim() == 300 + 300 + 8 + 20
    bare = AlignmentModel(AlignerConfig(embed_dim=300, ablation="no_action_history"),
                          THREE_ACTION, rng)
    assert bare.state_dim() == 600
    counted = AlignmentModel(AlignerConfig(embed_dim=300, use_counts=True), THREE_ACTION, rng)
    assert counted.state_dim() == 630
    raw = AlignmentModel(AlignerConfig(embed_dim=300, ablation="no_input_lstms"), THREE_ACTION, rng)
    assert raw.state_dim() == 600 + 8 + 20
    with pytest.raises(ValueError, match="unknown ablation"):
        AlignerConfig(embed_dim=4, ablation="nope")


def test_zero_classifier_gives_uniform_over_legal_actions():
    rng = np.random.default_rng(1)
    model = tiny_model(rng)
    for w, b in zip(model.classifier.weights, model.classifier.biases):
        w.data[:] = 0.0
        b.data[:] = 0.0
    runner = random_runner(rng, model, 2, 1)
    legal, logps = runner.step_log_probs(runner.initial_runtime())
    # all of PC, PS, MRS are legal for (2 clips, 1 sentence)
    probs = np.exp([lp.item() for lp in logps])
    assert len(legal) == 3
    assert np.allclose(probs, 1.0 / 3)
    assert np.isclose(probs.sum(), 1.0)


def test_single_legal_action_has_probability_one():
    rng = np.random.default_rng(2)
    model = tiny_model(rng)
    runner = random_runner(rng, model, 1, 1)
    rt = runner.initial_runtime()
    rt = runner.advance(rt, Action("MRS"))
    legal, logps = runner.step_log_probs(rt)  # only PS remains
    assert [a.kind for a in legal] == ["PS"]
    assert np.isclose(logps[0].item(), 0.0)


def test_step_probabilities_sum_to_one_with_pointer_expansion():
    rng = np.random.default_rng(3)
    model = tiny_model(rng, NON_MONOTONIC)
    runner = random_runner(rng, model, 4, 3)
    rt = runner.initial_runtime()
    rt = runner.advance(rt, Action(M))
    rt = runner.advance(rt, Action(M))
    legal, logps = runner.step_log_probs(rt)
    assert sum(1 for a in legal if a.kind == MWH) == 2
    assert np.isclose(np.exp([lp.item() for lp in logps]).sum(), 1.0)


def test_pointer_distribution_normalization_and_reserved_slot():
    rng = np.random.default_rng(4)
    model = tiny_model(rng, NON_MONOTONIC)
    psi = Tensor(rng.normal(size=model.state_dim()))
    for n in range(1, 11):
        feats = [Tensor(rng.normal(size=2 * model.cfg.embed_dim)) for _ in range(n)]
        raw = model.pointer_distribution(psi, feats, include_reserved=True)
        assert raw.shape == (n + 1,) and np.isclose(raw.data.sum(), 1.0)
        sel = model.pointer_distribution(psi, feats)
        assert sel.shape == (n,) and np.isclose(sel.data.sum(), 1.0)

    model.ptr_v.data[:] = 0.0  # constant scores: uniform over all slots
    raw = model.pointer_distribution(psi, [Tensor(np.zeros(2 * model.cfg.embed_dim))] * 4,
                                     include_reserved=True)
    assert np.allclose(raw.data, 0.2)
    single = model.pointer_distribution(psi, [Tensor(np.zeros(2 * model.cfg.embed_dim))])
    assert np.allclose(single.data, [1.0])


def test_suffix_states_equal_scratch_encoding_along_a_walk():
    rng = np.random.default_rng(5)
    model = tiny_model(rng)
    runner = random_runner(rng, model, 5, 3)
    rt = runner.initial_runtime()
    while not rt.ts.is_terminal():
        fresh = model.video_cell.run([runner.clip_embs[i] for i in reversed(rt.ts.video)])
        cached = runner.video_suffix[runner.n_clips - len(rt.ts.video)]
        assert np.array_equal(fresh[0].data, cached[0].data)
        assert np.array_equal(fresh[1].data, cached[1].data)
        legal, logps = runner.step_log_probs(rt)
        pick = int(rng.integers(len(legal)))
        rt = runner.advance(rt, legal[pick])


def test_decode_log_prob_equals_sum_of_step_log_probs():
    rng = np.random.default_rng(6)
    model = tiny_model(rng)
    runner = random_runner(rng, model, 4, 2)
    for result in (decode_greedy(runner), decode_beam(runner, width=3)):
        rt = runner.initial_runtime()
        total = 0.0
        with T.no_grad():
            for a in result.actions:
                legal, logps = runner.step_log_probs(rt)
                total += logps[legal.index(a)].item()
                rt = runner.advance(rt, a)
        assert result.terminal
        assert abs(total - result.log_prob) < 1e-9


def test_teacher_forced_loss_matches_decode_scoring():
    rng = np.random.default_rng(7)
    model = tiny_model(rng)
    runner = random_runner(rng, model, 3, 2)
    labels = (0, None, 1)
    actions = derive_oracle(labels, 2, model.action_set)
    loss = episode_loss(runner, actions).item()
    rt = runner.initial_runtime()
    total = 0.0
    with T.no_grad():
        for a in actions:
            legal, logps = runner.step_log_probs(rt)
            total += logps[legal.index(a)].item()
            rt = runner.advance(rt, a)
    assert abs(loss - (-total / len(actions))) < 1e-12


def test_beam_matches_exhaustive_enumeration_on_tiny_instances():
    rng = np.random.default_rng(8)
    for _ in range(10):
        model = tiny_model(rng)
        runner = random_runner(rng, model, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        seqs = enumerate_sequences(runner)
        best_actions, best_logp = max(seqs, key=lambda s: s[1])
        got = decode_beam(runner, width=len(seqs))
        assert abs(got.log_prob - best_logp) < 1e-9
        assert got.actions == best_actions


def test_decode_handles_stranded_trajectories():
    rng = np.random.default_rng(9)
    model = tiny_model(rng, TWO_ACTION)
    runner = random_runner(rng, model, 1, 2)  # one clip can never serve two sentences
    g = decode_greedy(runner)
    assert not g.terminal and len(g.labels) == 1
    b = decode_beam(runner, width=4)
    assert not b.terminal


def test_full_step_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    model = tiny_model(rng, NON_MONOTONIC, embed=4)
    clip_enc = ClipEncoder(5, 4, rng)
    sent_enc = SentenceEncoder(vocab_size=8, word_dim=4, hidden_dim=5, embed_dim=4, rng=rng)
    params = {**model.parameters(), **encoder_parameters(clip_enc, sent_enc)}
    for name, p in params.items():
        if "bias" in name or name.rsplit(".", 1)[-1].startswith("b_"):
            p.data = rng.uniform(0.05, 0.3, size=p.data.shape)
    clips = [rng.normal(size=(2, 5)) for _ in range(3)]
    sentences = [[0, 3], [1, 5], [2]]
    actions = derive_oracle((0, 1, 0), 3, NON_MONOTONIC)  # uses M, MWH and PS
    assert any(a.kind == MWH for a in actions)

    def build():
        runner = EpisodeRunner(model, [clip_enc(c) for c in clips],
                               [sent_enc(s) for s in sentences])
        return episode_loss(runner, actions)

    err = T.gradient_check(build, list(params.values()), rng, n_coords=3)
    assert err < 1e-4


def test_phase_one_keeps_encoder_parameters_bit_identical():
    rng = np.random.default_rng(11)
    episodes = toy_episodes(rng, 4, sample_one_to_many, frame_dim=6)
    clip_enc = ClipEncoder(6, 5, rng)
    sent_enc = SentenceEncoder(30, 5, 6, 5, rng)
    before = {k: p.data.copy() for k, p in encoder_parameters(clip_enc, sent_enc).items()}
    model = tiny_model(rng, embed=5)
    cfg = AlignTrainConfig(epochs_phase1=2, epochs_phase2=0)
    phases = []
    train_alignment(episodes[:3], episodes[3:], clip_enc, sent_enc, model, cfg,
                    rng, on_phase_end=lambda ph, _: phases.append(ph))
    after = encoder_parameters(clip_enc, sent_enc)
    for k in before:
        assert np.array_equal(before[k], after[k].data)
    assert phases == [1, 2]


def test_overfit_ten_episodes_and_reproduce_oracle_alignments():
    rng = np.random.default_rng(12)
    episodes = toy_episodes(rng, 10, sample_one_to_many, frame_dim=10)
    clip_enc = ClipEncoder(10, 8, rng)
    sent_enc = SentenceEncoder(30, 6, 8, 8, rng)
    from stackalign.encoders import PretrainConfig, pretrain
    pairs = [(c, ep.sentences[lab]) for ep in episodes
             for c, lab in zip(ep.clips, ep.labels) if lab is not None]
    pretrain(pairs, pairs, clip_enc, sent_enc,
             PretrainConfig(batch_size=16, lr=2e-3, max_epochs=12, patience=12), rng)

    cfg_m = AlignerConfig(embed_dim=8, video_hidden=12, text_hidden=12,
                          action_hidden=4, matched_hidden=6, classifier_hidden=32,
                          pointer_hidden=7)
    model = AlignmentModel(cfg_m, THREE_ACTION, rng)
    cfg = AlignTrainConfig(lr_phase1=3e-3, epochs_phase1=150, epochs_phase2=0)
    train_alignment(episodes, episodes, clip_enc, sent_enc, model, cfg, rng)

    hits = total = 0
    with T.no_grad():
        for ep in episodes:
            runner = EpisodeRunner(model, [clip_enc(c) for c in ep.clips],
                                   [sent_enc(s) for s in ep.sentences])
            rt = runner.initial_runtime()
            for a in derive_oracle(ep.labels, len(ep.sentences), model.action_set):
                legal, logps = runner.step_log_probs(rt)
                hits += int(legal[int(np.argmax([lp.item() for lp in logps]))] == a)
                total += 1
                rt = runner.advance(rt, a)
    assert hits / total >= 0.99, f"teacher-forced action accuracy {hits / total:.3f}"

    for ep in episodes:
        with T.no_grad():
            runner = EpisodeRunner(model, [clip_enc(c) for c in ep.clips],
                                   [sent_enc(s) for s in ep.sentences])
        assert decode_greedy(runner).labels == ep.labels
