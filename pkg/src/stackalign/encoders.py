"""Clip and sentence encoders with asymmetric order similarity.

Both encoders map into a shared embedding space.  Similarity is not
symmetric: ``order_similarity(v, s)`` is zero when the sentence embedding
dominates the clip embedding coordinatewise (text is treated as an
abstraction of the visuals it describes) and strictly negative otherwise.
Pretraining pushes true pairs toward zero and contrastive pairs at least a
margin below, with contrastive candidates drawn from the rest of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Embedding, LstmCell, Mlp
from .optim import Adam, TrainingDiverged
from .tensor import Tensor


def _spread_output_bias(mlp: Mlp, rng: np.random.Generator) -> None:
    # embeddings must start spread over the unit box, not clustered at zero:
    # order comparisons between near-zero vectors have no active coordinates
    # and the ranking hinge gets no gradient
    last = mlp.biases[-1]
    last.data[:] = rng.uniform(0.0, 1.0, size=last.data.shape)


class ClipEncoder:
    """Mean-pool the frame features of a clip, then a three-layer ReLU stack."""

    def __init__(self, frame_dim: int, embed_dim: int, rng: np.random.Generator):
        self.frame_dim = frame_dim
        self.embed_dim = embed_dim
        self.mlp = Mlp([frame_dim, 2 * embed_dim, 2 * embed_dim, embed_dim], rng, relu_all=True)
        _spread_output_bias(self.mlp, rng)

    def __call__(self, frames: np.ndarray) -> Tensor:
        return self.mlp(T.mean_rows(Tensor(self._check(frames))))

    def encode_batch(self, clips: Sequence[np.ndarray]) -> Tensor:
        """Encode many clips at once; row k embeds ``clips[k]``."""
        if len(clips) == 0:
            raise ValueError("cannot encode an empty batch")
        pooled = np.stack([self._check(c).mean(axis=0) for c in clips])
        return self.mlp(Tensor(pooled))

    def _check(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValueError(f"clip needs a non-empty (frames, {self.frame_dim}) array, got shape {frames.shape}")
        if frames.shape[1] != self.frame_dim:
            raise ValueError(f"frame dim {frames.shape[1]} != encoder frame dim {self.frame_dim}")
        return frames

    def parameters(self, prefix: str = "clip_encoder") -> dict[str, Tensor]:
        return self.mlp.parameters(prefix)


class SentenceEncoder:
    """Token embeddings through a two-layer LSTM, then a three-layer ReLU stack.

    The final hidden state of the second LSTM layer summarizes the sentence.
    """

    def __init__(self, vocab_size: int, word_dim: int, hidden_dim: int,
                 embed_dim: int, rng: np.random.Generator):
        self.embed_dim = embed_dim
        self.embedding = Embedding(vocab_size, word_dim, rng)
        self.lstm1 = LstmCell(word_dim, hidden_dim, rng)
        self.lstm2 = LstmCell(hidden_dim, hidden_dim, rng)
        self.mlp = Mlp([hidden_dim, 2 * embed_dim, 2 * embed_dim, embed_dim], rng, relu_all=True)
        _spread_output_bias(self.mlp, rng)

    def __call__(self, tokens: Sequence[int]) -> Tensor:
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty sentence")
        st1 = self.lstm1.zero_state()
        st2 = self.lstm2.zero_state()
        for t in tokens:
            st1 = self.lstm1.step(self.embedding(int(t)), st1)
            st2 = self.lstm2.step(st1[0], st2)
        return self.mlp(st2[0])

    def encode_batch(self, sentences: Sequence[Sequence[int]]) -> Tensor:
        """Encode many sentences at once; row k embeds ``sentences[k]``.

        Sentences of equal length run through the LSTMs as one matrix per
        step, so the graph grows with the number of distinct lengths, not
        with the batch size.
        """
        if len(sentences) == 0:
            raise ValueError("cannot encode an empty batch")
        for s in sentences:
            if len(s) == 0:
                raise ValueError("cannot encode an empty sentence")
        order = sorted(range(len(sentences)), key=lambda k: len(sentences[k]))
        blocks = []
        start = 0
        while start < len(order):
            stop = start
            length = len(sentences[order[start]])
            while stop < len(order) and len(sentences[order[stop]]) == length:
                stop += 1
            group = order[start:stop]
            st1 = self.lstm1.zero_state_batch(len(group))
            st2 = self.lstm2.zero_state_batch(len(group))
            for t in range(length):
                x = self.embedding.lookup([sentences[k][t] for k in group])
                st1 = self.lstm1.step_batch(x, st1)
                st2 = self.lstm2.step_batch(st1[0], st2)
            blocks.append(st2[0])
            start = stop
        undo = np.argsort(order)
        return self.mlp(T.take_rows(T.concat_rows(blocks), undo))

    def parameters(self, prefix: str = "sentence_encoder") -> dict[str, Tensor]:
        out = self.embedding.parameters(f"{prefix}.words")
        out.update(self.lstm1.parameters(f"{prefix}.lstm1"))
        out.update(self.lstm2.parameters(f"{prefix}.lstm2"))
        out.update(self.mlp.parameters(f"{prefix}.head"))
        return out


def encoder_parameters(clip_enc: ClipEncoder, sent_enc: SentenceEncoder) -> dict[str, Tensor]:
    out = clip_enc.parameters()
    out.update(sent_enc.parameters())
    return out


# ---------------------------------------------------------------------------
# similarity


def order_similarity(v: Tensor, s: Tensor) -> Tensor:
    """Negative squared norm of the part of v that sticks out above s.

    Zero exactly when s >= v coordinatewise, negative otherwise.
    """
    return T.neg(T.sum_squares(T.relu(T.sub(v, s))))


def order_similarity_np(v: np.ndarray, s: np.ndarray) -> float:
    d = np.maximum(np.asarray(v, dtype=np.float64) - np.asarray(s, dtype=np.float64), 0.0)
    return float(-(d * d).sum())


def similarity_matrix(clips: Tensor, sents: Tensor) -> Tensor:
    """All-pairs order similarity: out[i, j] compares clip j against sentence i.

    A single fused node; the backward rule distributes the matrix gradient to
    both embedding stacks without materializing per-pair graphs.
    """
    V, S = clips.data, sents.data
    if V.ndim != 2 or S.ndim != 2 or V.shape[1] != S.shape[1]:
        raise T.ShapeMismatch(f"similarity_matrix: incompatible shapes {V.shape} and {S.shape}")
    R = np.maximum(V[None, :, :] - S[:, None, :], 0.0)  # (M, N, d)
    out = -(R * R).sum(axis=2)

    def back(g, clips=clips, sents=sents, R=R):
        clips._accumulate(np.einsum("ij,ijd->jd", g, -2.0 * R))
        sents._accumulate(np.einsum("ij,ijd->id", g, 2.0 * R))

    return T._make(out, (clips, sents), back)


def distance_matrix_np(clip_embs: np.ndarray, sent_embs: np.ndarray) -> np.ndarray:
    """Pairwise distances d[i, j] = -order_similarity(clip j, sentence i)."""
    R = np.maximum(clip_embs[None, :, :] - sent_embs[:, None, :], 0.0)
    return (R * R).sum(axis=2)


# ---------------------------------------------------------------------------
# ranking loss


def ranking_hinge(sim: Tensor, margin: float, clip_mask: np.ndarray, sent_mask: np.ndarray) -> Tensor:
    """Two-sided margin loss over a batch similarity matrix.

    ``sim[i, j]`` scores clip j against sentence i; diagonal entries are the
    true pairs.  For pair i the loss sums hinge terms over the masked
    contrastive clips (row i of ``clip_mask``) and contrastive sentences
    (row i of ``sent_mask``); every violated sample contributes its full
    margin-scale term no matter how many samples there are.
    """
    F = sim.data
    B = F.shape[0]
    if F.shape != (B, B):
        raise T.ShapeMismatch(f"ranking_hinge needs a square matrix, got {F.shape}")
    if (clip_mask.sum(axis=1) == 0).any() or (sent_mask.sum(axis=1) == 0).any():
        raise ValueError("every pair needs at least one contrastive sample on each side")
    diag = np.diag(F)
    a = margin - diag[:, None] + F
    b = margin - diag[:, None] + F.T
    hc = np.maximum(a, 0.0) * clip_mask
    hs = np.maximum(b, 0.0) * sent_mask
    loss = hc.sum() + hs.sum()

    def back(g, sim=sim, a=a, b=b, clip_mask=clip_mask, sent_mask=sent_mask):
        ac = (a > 0) * clip_mask
        as_ = (b > 0) * sent_mask
        dF = ac + as_.T
        np.fill_diagonal(dF, dF.diagonal() - (ac.sum(axis=1) + as_.sum(axis=1)))
        sim._accumulate(float(g) * dF)

    return T._make(np.asarray(loss), (sim,), back)


def contrastive_masks(batch_size: int, n_samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample contrastive candidates for each pair, uniformly without
    replacement from the batch excluding the true partner."""
    if batch_size < 2:
        raise ValueError("ranking loss needs a batch of at least 2 pairs")
    n = min(n_samples, batch_size - 1)
    masks = []
    for _ in range(2):
        m = np.zeros((batch_size, batch_size))
        for i in range(batch_size):
            others = np.array([j for j in range(batch_size) if j != i])
            pick = rng.choice(others, size=n, replace=False)
            m[i, pick] = 1.0
        masks.append(m)
    return masks[0], masks[1]


def ranking_loss(clip_embs: Sequence[Tensor], sent_embs: Sequence[Tensor],
                 margin: float, rng: np.random.Generator, n_samples: int) -> Tensor:
    """Two-sided ranking hinge over a batch of matched embedding pairs, with
    freshly sampled in-batch contrastive candidates."""
    if len(clip_embs) != len(sent_embs):
        raise ValueError("clip and sentence batches must pair up")
    V = T.stack_rows(clip_embs)
    S = T.stack_rows(sent_embs)
    sim = similarity_matrix(V, S)
    mc, ms = contrastive_masks(len(clip_embs), n_samples, rng)
    return ranking_hinge(sim, margin, mc, ms)


def recall_at_1(clip_embs: np.ndarray, sent_embs: np.ndarray) -> float:
    """Fraction of clips whose nearest sentence under order similarity is the
    true partner (ties resolve to the lowest sentence index)."""
    D = distance_matrix_np(clip_embs, sent_embs)
    hits = D.argmin(axis=0) == np.arange(D.shape[1])
    return float(hits.mean())


# ---------------------------------------------------------------------------
# pretraining


@dataclass
class PretrainConfig:
    margin: float = 0.05
    batch_size: int = 32
    n_contrastive: int = 31
    lr: float = 1e-4
    clip_norm: float = 2.0
    max_epochs: int = 30
    patience: int = 5


@dataclass
class PretrainResult:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_recall: list[float] = field(default_factory=list)
    best_epoch: int = -1


Pair = tuple[np.ndarray, Sequence[int]]  # (clip frames, sentence token ids)


def _eval_pairs(pairs: Sequence[Pair], clip_enc: ClipEncoder, sent_enc: SentenceEncoder,
                margin: float) -> tuple[float, float]:
    """Validation loss (full in-batch contrast, no sampling) and recall@1."""
    with T.no_grad():
        V = clip_enc.encode_batch([frames for frames, _ in pairs]).data
        S = sent_enc.encode_batch([tokens for _, tokens in pairs]).data
    B = len(pairs)
    full = np.ones((B, B)) - np.eye(B)
    sim = Tensor(-distance_matrix_np(V, S))
    loss = ranking_hinge(sim, margin, full, full).item() / B
    return loss, recall_at_1(V, S)


def pretrain(train_pairs: Sequence[Pair], val_pairs: Sequence[Pair],
             clip_enc: ClipEncoder, sent_enc: SentenceEncoder,
             cfg: PretrainConfig, rng: np.random.Generator) -> PretrainResult:
    """Fit both encoders with the two-sided ranking loss.

    Stops early when validation loss has not improved for ``cfg.patience``
    epochs and restores the best parameters.  With ``max_epochs=0`` the
    parameters are left exactly at initialization.
    """
    params = encoder_parameters(clip_enc, sent_enc)
    opt = Adam(params, lr=cfg.lr, clip_norm=cfg.clip_norm)
    result = PretrainResult()
    best = {k: p.data.copy() for k, p in params.items()}
    best_loss = np.inf
    bad_epochs = 0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_pairs))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.shape[0] < 2:
                continue
            batch = [train_pairs[i] for i in idx]
            V = clip_enc.encode_batch([frames for frames, _ in batch])
            S = sent_enc.encode_batch([tokens for _, tokens in batch])
            sim = similarity_matrix(V, S)
            mc, ms = contrastive_masks(len(batch), cfg.n_contrastive, rng)
            loss = ranking_hinge(sim, cfg.margin, mc, ms)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite pretraining loss in epoch {epoch}")
            opt.zero_grad()
            loss.backward(leaves=params.values())
            opt.step()
            epoch_loss += loss.item() / idx.shape[0]
            n_batches += 1
        result.train_loss.append(epoch_loss / max(n_batches, 1))

        vloss, vrecall = _eval_pairs(val_pairs, clip_enc, sent_enc, cfg.margin)
        result.val_loss.append(vloss)
        result.val_recall.append(vrecall)
        if vloss < best_loss - 1e-12:
            best_loss = vloss
            best = {k: p.data.copy() for k, p in params.items()}
            result.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    if result.best_epoch >= 0:
        for k, p in params.items():
            p.data = best[k]
    return result
