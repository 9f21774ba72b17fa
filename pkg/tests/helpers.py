"""Shared test utilities: random alignment samplers for each matching mode,
exhaustive trajectory enumeration, and tiny synthetic episodes."""

import numpy as np

from stackalign import tensor as T
from stackalign.alignment import Episode


def enumerate_sequences(runner):
    """All complete action sequences with their summed log-probabilities."""
    out = []

    def walk(rt, actions, logp):
        if rt.ts.is_terminal():
            out.append((actions, logp))
            return
        legal, logps = runner.step_log_probs(rt)
        for a, lp in zip(legal, logps):
            walk(runner.advance(rt, a), actions + [a], logp + lp.item())

    with T.no_grad():
        walk(runner.initial_runtime(), [], 0.0)
    return out


def brute_force_dtw_cost(D):
    """Minimum summed cost over all monotone corner-to-corner paths, by
    exhaustive recursion (branch-and-bound on the running total, which is
    exact because entries are nonnegative)."""
    M, N = D.shape
    best = [np.inf]

    def walk(i, j, c):
        c += D[i, j]
        if c >= best[0]:
            return
        if i == M - 1 and j == N - 1:
            best[0] = c
            return
        if i + 1 < M and j + 1 < N:
            walk(i + 1, j + 1, c)
        if i + 1 < M:
            walk(i + 1, j, c)
        if j + 1 < N:
            walk(i, j + 1, c)

    walk(0, 0, 0.0)
    return best[0]


def toy_episodes(rng, n_episodes, sampler, frame_dim=10, n_tokens=4, vocab=30,
                 noise=0.02, max_sentences=6):
    """Episodes whose clips and sentences are noisy views of shared latents,
    labeled by the given alignment sampler.  Sentence s of every episode
    reuses latent row s, so encoders can learn the correspondence."""
    basis = rng.normal(size=(max_sentences, frame_dim))
    null_basis = rng.normal(size=frame_dim) * 2.0
    episodes = []
    for _ in range(n_episodes):
        labels, m = sampler(rng)
        clips, sentences = [], []
        for lab in labels:
            src = null_basis if lab is None else basis[lab]
            clips.append(src + noise * rng.normal(size=(2, frame_dim)))
        for s in range(m):
            sentences.append([int(x) for x in ((s * 7 + np.arange(n_tokens) * 3) % vocab)])
        episodes.append(Episode(clips, sentences, labels))
    return episodes


def sample_one_to_one(rng: np.random.Generator, n_sentences=None, n_nulls=None):
    """Every sentence matched by exactly one clip, extra clips unmatched."""
    m = int(rng.integers(1, 6)) if n_sentences is None else n_sentences
    nulls = int(rng.integers(0, 4)) if n_nulls is None else n_nulls
    n = m + nulls
    labels = [None] * n
    slots = sorted(rng.choice(n, size=m, replace=False))
    for s, pos in enumerate(slots):
        labels[pos] = s
    return tuple(labels), m


def sample_one_to_many(rng: np.random.Generator, n_sentences=None, max_clips=4, max_nulls=4):
    """Every sentence matched by one or more clips, in sentence order."""
    m = int(rng.integers(1, 5)) if n_sentences is None else n_sentences
    labels = []
    for s in range(m):
        labels.extend([s] * int(rng.integers(1, max_clips + 1)))
    for _ in range(int(rng.integers(0, max_nulls + 1))):
        labels.insert(int(rng.integers(0, len(labels) + 1)), None)
    return tuple(labels), m


def sample_monotone(rng: np.random.Generator, n_sentences=None, max_clips=3, max_nulls=3):
    """Non-decreasing labels; sentences may be skipped entirely."""
    m = int(rng.integers(1, 5)) if n_sentences is None else n_sentences
    labels = []
    for s in range(m):
        labels.extend([s] * int(rng.integers(0, max_clips + 1)))
    for _ in range(int(rng.integers(0, max_nulls + 1))):
        labels.insert(int(rng.integers(0, len(labels) + 1)), None)
    if not labels:
        labels = [None]
    return tuple(labels), m


def sample_non_monotonic(rng: np.random.Generator, n_sentences=None):
    """First mention of each sentence is ordered; later clips may revisit any
    sentence that has already begun."""
    m = int(rng.integers(1, 5)) if n_sentences is None else n_sentences
    labels = []
    started = []
    upcoming = list(range(m))
    while upcoming or (labels and rng.random() < 0.4):
        r = rng.random()
        if upcoming and r < 0.5:
            s = upcoming.pop(0)
            started.append(s)
            labels.append(s)
        elif started and r < 0.8:
            labels.append(int(rng.choice(started)))
        else:
            labels.append(None)
        if len(labels) > 25:
            break
    # any sentence never started stays unmatched, which PS handles
    if not labels:
        labels = [None]
    return tuple(labels), m
