"""Neural model over alignment states: predicts the next transition action.

The state of the aligner is summarized by four LSTM chains:

  * a video chain and a text chain, each running from the far end of its
    input sequence toward the current stack top, so the hidden state at the
    top summarizes everything still to come;
  * an action chain over the one-hot history of executed actions; and
  * a matched chain over pooled features of matched elements, where an
    element's feature is [sentence embedding, mean of its clip embeddings].

Because input stacks only ever lose their top, the video/text chains are
precomputed once per episode as suffix states and looked up by stack depth;
incremental encoding is exactly equal to encoding from scratch.  The
concatenated summary feeds a two-hidden-layer ReLU classifier over the
enabled action kinds, masked to the legal subset and renormalized.  A
pointer head scores matched elements for the history-matching action, with
slot 0 reserved and never selectable.

Per-step log-probabilities are produced by one code path shared by teacher
forcing, greedy decoding and beam search, so a decoded sequence's score is
by construction the sum of its step log-probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .encoders import ClipEncoder, SentenceEncoder, encoder_parameters
from .nn import LstmCell, Mlp, uniform_init, zeros_param
from .optim import Adam, TrainingDiverged
from .tensor import Tensor
from .transitions import (
    KIND_ORDER, MR, MRC, MRS, MWH, PC, PS, Action, ActionSet, AlignmentState,
    M, apply_action, derive_oracle, initial_state, legal_actions, replay,
)

ABLATIONS = ("full", "no_action", "no_history", "no_action_history", "no_input_lstms")


@dataclass
class AlignerConfig:
    embed_dim: int
    video_hidden: int = 300
    text_hidden: int = 300
    action_hidden: int = 8
    matched_hidden: int = 20
    classifier_hidden: int = 128
    pointer_hidden: int = 64
    use_counts: bool = False
    ablation: str = "full"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}, expected one of {ABLATIONS}")


class AlignmentModel:
    """Action classifier over alignment states for a fixed action subset."""

    def __init__(self, cfg: AlignerConfig, action_set: ActionSet, rng: np.random.Generator):
        if action_set.n_sequences != 2 or MR in action_set.kinds:
            raise ValueError("the neural aligner handles exactly two sequences")
        self.cfg = cfg
        self.action_set = action_set
        self.kind_order = tuple(k for k in KIND_ORDER if k in action_set.kinds)
        self.kind_index = {k: i for i, k in enumerate(self.kind_order)}
        n_kinds = len(self.kind_order)

        d = cfg.embed_dim
        self.video_cell = LstmCell(d, cfg.video_hidden, rng)
        self.text_cell = LstmCell(d, cfg.text_hidden, rng)
        self.action_cell = LstmCell(n_kinds, cfg.action_hidden, rng)
        self.matched_cell = LstmCell(2 * d, cfg.matched_hidden, rng)
        self.classifier = Mlp([self.state_dim(), cfg.classifier_hidden, cfg.classifier_hidden,
                               n_kinds], rng, relu_all=False)
        if MWH in action_set.kinds:
            ptr_in = self.state_dim() + 2 * d
            self.ptr_w = uniform_init(rng, (ptr_in, cfg.pointer_hidden), ptr_in)
            self.ptr_v = uniform_init(rng, (cfg.pointer_hidden,), cfg.pointer_hidden)
        else:
            self.ptr_w = self.ptr_v = None

    def state_dim(self) -> int:
        cfg = self.cfg
        dim = 2 * cfg.embed_dim if cfg.ablation == "no_input_lstms" \
            else cfg.video_hidden + cfg.text_hidden
        if cfg.ablation not in ("no_action", "no_action_history"):
            dim += cfg.action_hidden
        if cfg.ablation not in ("no_history", "no_action_history"):
            dim += cfg.matched_hidden
        if cfg.use_counts:
            dim += 2
        return dim

    def parameters(self, prefix: str = "aligner") -> dict[str, Tensor]:
        out = self.video_cell.parameters(f"{prefix}.video")
        out.update(self.text_cell.parameters(f"{prefix}.text"))
        out.update(self.action_cell.parameters(f"{prefix}.action"))
        out.update(self.matched_cell.parameters(f"{prefix}.matched"))
        out.update(self.classifier.parameters(f"{prefix}.classifier"))
        if self.ptr_w is not None:
            out[f"{prefix}.pointer.weight"] = self.ptr_w
            out[f"{prefix}.pointer.v"] = self.ptr_v
        return out

    def one_hot(self, kind: str) -> Tensor:
        v = np.zeros(len(self.kind_order))
        v[self.kind_index[kind]] = 1.0
        return Tensor(v)

    def pointer_scores(self, state_vec: Tensor, matched_feats: Sequence[Tensor]) -> Tensor:
        """Scores for the reserved slot 0 plus one slot per matched element."""
        if self.ptr_w is None:
            raise ValueError("pointer head is absent for this action subset")
        r0 = Tensor(np.zeros(2 * self.cfg.embed_dim))
        rows = [T.concat([state_vec, r]) for r in (r0, *matched_feats)]
        return T.matmul(T.tanh(T.matmul(T.stack_rows(rows), self.ptr_w)), self.ptr_v)

    def pointer_distribution(self, state_vec: Tensor, matched_feats: Sequence[Tensor],
                             include_reserved: bool = False) -> Tensor:
        """Probabilities over matched elements (or over all scored slots when
        ``include_reserved`` is set; either way they sum to one)."""
        scores = self.pointer_scores(state_vec, matched_feats)
        if include_reserved:
            return T.softmax(scores)
        if len(matched_feats) == 0:
            raise ValueError("no matched elements to point at")
        return T.softmax(T.gather(scores, list(range(1, len(matched_feats) + 1))))


@dataclass
class Episode:
    """One alignment problem: raw clip features, token lists, true labels."""
    clips: list
    sentences: list
    labels: tuple


@dataclass
class RuntimeState:
    """Per-trajectory bookkeeping carried alongside the transition state."""
    ts: AlignmentState
    action_state: tuple
    matched_states: tuple   # chain states; entry k encodes the first k elements
    matched_feats: tuple    # pooled feature per matched element


class EpisodeRunner:
    """Encodes one episode's stacks and walks trajectories over them."""

    def __init__(self, model: AlignmentModel, clip_embs: Sequence[Tensor],
                 sent_embs: Sequence[Tensor]):
        self.model = model
        self.clip_embs = list(clip_embs)
        self.sent_embs = list(sent_embs)
        self.n_clips = len(clip_embs)
        self.n_sentences = len(sent_embs)
        if model.cfg.ablation == "no_input_lstms":
            self.video_suffix = self.text_suffix = None
        else:
            self.video_suffix = self._suffix_states(model.video_cell, self.clip_embs)
            self.text_suffix = self._suffix_states(model.text_cell, self.sent_embs)
        self._zero_embed = Tensor(np.zeros(model.cfg.embed_dim))

    @staticmethod
    def _suffix_states(cell: LstmCell, embs: Sequence[Tensor]) -> list:
        # states[i] encodes items i..end (consumed back to front); states[n] is empty
        states = [cell.zero_state()]
        for e in reversed(embs):
            states.append(cell.step(e, states[-1]))
        states.reverse()
        return states

    def initial_runtime(self) -> RuntimeState:
        return RuntimeState(
            ts=initial_state(self.n_clips, self.n_sentences),
            action_state=self.model.action_cell.zero_state(),
            matched_states=(self.model.matched_cell.zero_state(),),
            matched_feats=(),
        )

    def element_feature(self, member_clips: tuple[int, ...], sentence: int) -> Tensor:
        clips = [self.clip_embs[c] for c in member_clips]
        pooled = clips[0] if len(clips) == 1 else T.mean_rows(T.stack_rows(clips))
        return T.concat([self.sent_embs[sentence], pooled])

    def state_vector(self, rt: RuntimeState) -> Tensor:
        cfg = self.model.cfg
        parts = []
        if cfg.ablation == "no_input_lstms":
            parts.append(self.clip_embs[rt.ts.video[0]] if rt.ts.video else self._zero_embed)
            parts.append(self.sent_embs[rt.ts.text[0]] if rt.ts.text else self._zero_embed)
        else:
            parts.append(self.video_suffix[self.n_clips - len(rt.ts.video)][0])
            parts.append(self.text_suffix[self.n_sentences - len(rt.ts.text)][0])
        if cfg.ablation not in ("no_action", "no_action_history"):
            parts.append(rt.action_state[0])
        if cfg.ablation not in ("no_history", "no_action_history"):
            parts.append(rt.matched_states[-1][0])
        if cfg.use_counts:
            parts.append(Tensor(np.array([
                len(rt.ts.video) / max(self.n_clips, 1),
                len(rt.ts.text) / max(self.n_sentences, 1),
            ])))
        return T.concat(parts)

    def step_log_probs(self, rt: RuntimeState) -> tuple[tuple[Action, ...], list[Tensor]]:
        """Legal actions and their log-probabilities.

        Kind scores are masked to the legal kinds and renormalized; a
        history-matching action additionally factors in the pointer
        distribution over matched elements (reserved slot excluded), so the
        entries always sum to probability one.
        """
        model = self.model
        legal = legal_actions(rt.ts, model.action_set)
        if not legal:
            return (), []
        state_vec = self.state_vector(rt)
        logits = model.classifier(state_vec)
        kinds = tuple(dict.fromkeys(a.kind for a in legal))
        kind_logp = T.log_softmax(T.gather(logits, [model.kind_index[k] for k in kinds]))
        by_kind = {k: T.pick(kind_logp, i) for i, k in enumerate(kinds)}

        ptr_logp = None
        if any(a.kind == MWH for a in legal):
            scores = model.pointer_scores(state_vec, rt.matched_feats)
            ptr_logp = T.log_softmax(T.gather(scores, list(range(1, len(rt.matched_feats) + 1))))

        out = []
        for a in legal:
            if a.kind == MWH:
                out.append(T.add(by_kind[MWH], T.pick(ptr_logp, a.q)))
            else:
                out.append(by_kind[a.kind])
        return legal, out

    def advance(self, rt: RuntimeState, action: Action) -> RuntimeState:
        ts2 = apply_action(rt.ts, action, self.model.action_set)
        action_state = self.model.action_cell.step(self.model.one_hot(action.kind), rt.action_state)
        states, feats = rt.matched_states, rt.matched_feats

        if action.kind in (M, MRC) or (action.kind == MRS and len(ts2.matched) > len(rt.ts.matched)):
            el = ts2.matched[-1]
            feats = feats + (self.element_feature(el.members[0], el.members[1][0]),)
            states = states + (self.model.matched_cell.step(feats[-1], states[-1]),)
        elif action.kind == MRS or action.kind == MWH:
            q = len(ts2.matched) - 1 if action.kind == MRS else action.q
            el = ts2.matched[q]
            feats = feats[:q] + (self.element_feature(el.members[0], el.members[1][0]),) + feats[q + 1:]
            rebuilt = list(states[:q + 1])
            for k in range(q, len(feats)):
                rebuilt.append(self.model.matched_cell.step(feats[k], rebuilt[-1]))
            states = tuple(rebuilt)
        elif action.kind == MR:
            raise ValueError("MR is outside the neural aligner's action space")
        return RuntimeState(ts2, action_state, states, feats)


# ---------------------------------------------------------------------------
# training


def episode_loss(runner: EpisodeRunner, actions: Sequence[Action]) -> Tensor:
    """Teacher-forced cross entropy, averaged over the trajectory's steps."""
    rt = runner.initial_runtime()
    step_terms = []
    for a in actions:
        legal, logps = runner.step_log_probs(rt)
        try:
            idx = legal.index(a)
        except ValueError:
            raise ValueError(f"oracle action {a.token()} is not legal at [{rt.ts.summary()}]") from None
        step_terms.append(T.neg(logps[idx]))
        rt = runner.advance(rt, a)
    total = step_terms[0]
    for term in step_terms[1:]:
        total = T.add(total, term)
    return T.mul(total, 1.0 / len(step_terms))


@dataclass
class AlignTrainConfig:
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-5
    epochs_phase1: int = 30
    epochs_phase2: int = 2
    clip_norm: float = 2.0


@dataclass
class AlignTrainResult:
    train_loss: dict = field(default_factory=lambda: {1: [], 2: []})
    val_loss: dict = field(default_factory=lambda: {1: [], 2: []})


def _frozen_embeddings(episodes, clip_enc, sent_enc):
    cache = []
    with T.no_grad():
        for ep in episodes:
            cache.append(([clip_enc(c) for c in ep.clips],
                          [sent_enc(s) for s in ep.sentences]))
    return cache


def train_alignment(train_eps: Sequence[Episode], val_eps: Sequence[Episode],
                    clip_enc: ClipEncoder, sent_enc: SentenceEncoder,
                    model: AlignmentModel, cfg: AlignTrainConfig,
                    rng: np.random.Generator,
                    on_phase_end: Callable[[int, dict], None] | None = None
                    ) -> AlignTrainResult:
    """Two-phase training on oracle trajectories.

    Phase 1 trains the aligner alone on frozen encoder outputs (cached, so
    encoder parameters stay bit-identical); phase 2 fine-tunes everything
    end to end at a much smaller learning rate.
    """
    oracle = [derive_oracle(ep.labels, len(ep.sentences), model.action_set) for ep in train_eps]
    val_oracle = [derive_oracle(ep.labels, len(ep.sentences), model.action_set) for ep in val_eps]
    result = AlignTrainResult()

    def validation_loss() -> float:
        with T.no_grad():
            total = 0.0
            for ep, acts in zip(val_eps, val_oracle):
                runner = EpisodeRunner(model, [clip_enc(c) for c in ep.clips],
                                       [sent_enc(s) for s in ep.sentences])
                total += episode_loss(runner, acts).item()
            return total / max(len(val_eps), 1)

    for phase in (1, 2):
        epochs = cfg.epochs_phase1 if phase == 1 else cfg.epochs_phase2
        if epochs == 0:
            if on_phase_end is not None:
                on_phase_end(phase, model.parameters())
            continue
        params = model.parameters()
        if phase == 2:
            params.update(encoder_parameters(clip_enc, sent_enc))
        opt = Adam(params, lr=cfg.lr_phase1 if phase == 1 else cfg.lr_phase2,
                   clip_norm=cfg.clip_norm)
        frozen = _frozen_embeddings(train_eps, clip_enc, sent_enc) if phase == 1 else None

        for _ in range(epochs):
            order = rng.permutation(len(train_eps))
            epoch_loss = 0.0
            for i in order:
                ep, acts = train_eps[i], oracle[i]
                if phase == 1:
                    cembs, sembs = frozen[i]
                else:
                    cembs = [clip_enc(c) for c in ep.clips]
                    sembs = [sent_enc(s) for s in ep.sentences]
                loss = episode_loss(EpisodeRunner(model, cembs, sembs), acts)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite loss on episode index {int(i)} (phase {phase})")
                opt.zero_grad()
                loss.backward(leaves=params.values())
                opt.step()
                epoch_loss += loss.item()
            result.train_loss[phase].append(epoch_loss / max(len(train_eps), 1))
            result.val_loss[phase].append(validation_loss())
        if on_phase_end is not None:
            on_phase_end(phase, params)
    return result


# ---------------------------------------------------------------------------
# decoding


@dataclass
class DecodeResult:
    actions: list
    log_prob: float
    labels: tuple
    terminal: bool


def _finish(runner: EpisodeRunner, actions: list[Action], logp: float, terminal: bool) -> DecodeResult:
    res = replay(actions, runner.n_clips, runner.n_sentences, runner.model.action_set,
                 require_terminal=False)
    return DecodeResult(actions, logp, res.labels, terminal)


def decode_greedy(runner: EpisodeRunner) -> DecodeResult:
    """Follow the locally most probable action until the stacks empty.

    A trajectory that paints itself into a corner (no legal action, stacks
    non-empty) stops there and keeps whatever it matched.
    """
    with T.no_grad():
        rt = runner.initial_runtime()
        actions: list[Action] = []
        logp = 0.0
        limit = runner.n_clips + runner.n_sentences
        for _ in range(limit):
            if rt.ts.is_terminal():
                break
            legal, logps = runner.step_log_probs(rt)
            if not legal:
                return _finish(runner, actions, logp, terminal=False)
            values = np.array([lp.item() for lp in logps])
            best = int(values.argmax())
            actions.append(legal[best])
            logp += float(values[best])
            rt = runner.advance(rt, legal[best])
        return _finish(runner, actions, logp, terminal=rt.ts.is_terminal())


@dataclass
class _Hyp:
    logp: float
    rt: RuntimeState
    actions: list


def decode_beam(runner: EpisodeRunner, width: int) -> DecodeResult:
    """Beam search over action sequences scored by summed log-probabilities.

    Scores are length-unnormalized and only terminal hypotheses compete for
    the final answer.  Active hypotheses that can no longer beat the best
    terminal one are pruned (step log-probabilities are never positive).
    """
    if width < 1:
        raise ValueError("beam width must be positive")
    with T.no_grad():
        active = [_Hyp(0.0, runner.initial_runtime(), [])]
        best: _Hyp | None = None
        stranded: _Hyp | None = None
        limit = runner.n_clips + runner.n_sentences
        for _ in range(limit):
            expansions: list[_Hyp] = []
            for hyp in active:
                legal, logps = runner.step_log_probs(hyp.rt)
                if not legal:
                    if stranded is None or hyp.logp > stranded.logp:
                        stranded = hyp
                    continue
                for a, lp in zip(legal, logps):
                    score = hyp.logp + lp.item()
                    if best is not None and score <= best.logp:
                        continue
                    nxt = _Hyp(score, runner.advance(hyp.rt, a), hyp.actions + [a])
                    if nxt.rt.ts.is_terminal():
                        if best is None or nxt.logp > best.logp:
                            best = nxt
                    else:
                        expansions.append(nxt)
            expansions.sort(key=lambda h: -h.logp)
            active = expansions[:width]
            if not active:
                break
        if best is not None:
            return _finish(runner, best.actions, best.logp, terminal=True)
        if stranded is not None:
            return _finish(runner, stranded.actions, stranded.logp, terminal=False)
        return _finish(runner, [], 0.0, terminal=runner.n_clips + runner.n_sentences == 0)
