"""Alignment baselines over an embedding space: per-clip nearest sentence,
dynamic time warping, and a light canonical time warping.

All three consume a distance matrix with one row per sentence and one column
per clip (entries are negated order similarities, so 0 means the sentence
fully contains the clip) and produce per-clip sentence labels, using a
threshold to declare clips unmatched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .encoders import distance_matrix_np

DEFAULT_THRESHOLD = 0.7


def _check_matrix(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.size == 0:
        raise ValueError("distance matrix must be 2-d and non-empty")
    if not np.isfinite(D).all():
        raise ValueError("distance matrix must be finite")
    return D


@dataclass
class MdResult:
    labels: tuple          # per clip: nearest sentence, or None past the threshold
    sentence_best: tuple   # per sentence: nearest clip, never None


def md_align(D: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> MdResult:
    """Match each clip to its nearest sentence (and each sentence to its
    nearest clip).  Clips whose best distance exceeds the threshold become
    unmatched; sentences always keep a clip.  Ties break toward the lower
    index."""
    D = _check_matrix(D)
    by_clip = D.argmin(axis=0)
    labels = tuple(None if D[s, j] > threshold else int(s) for j, s in enumerate(by_clip))
    return MdResult(labels, tuple(int(j) for j in D.argmin(axis=1)))


@dataclass
class DtwResult:
    labels: tuple                  # per clip, after thresholding
    path: tuple                    # (sentence, clip) cells from (0,0) to (M-1,N-1)
    cost: float                    # summed entries along the path
    sentence_clips: tuple          # per sentence: clips its path cells cover


def dtw_align(D: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> DtwResult:
    """Cheapest monotone path between the corners of the distance matrix.

    Steps move one clip right, one sentence down, or both.  Cost ties during
    backtracking prefer the diagonal, then the vertical predecessor.  A clip
    crossed by several sentences takes the nearest one; clips farther than
    the threshold from their path sentence become unmatched.
    """
    D = _check_matrix(D)
    M, N = D.shape
    cost = np.full((M, N), np.inf)
    cost[0, 0] = D[0, 0]
    for i in range(M):
        for j in range(N):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = cost[i - 1, j - 1]
            if i > 0:
                best = min(best, cost[i - 1, j])
            if j > 0:
                best = min(best, cost[i, j - 1])
            cost[i, j] = D[i, j] + best

    path = [(M - 1, N - 1)]
    i, j = M - 1, N - 1
    while (i, j) != (0, 0):
        options = []
        if i > 0 and j > 0:
            options.append((cost[i - 1, j - 1], 0, (i - 1, j - 1)))
        if i > 0:
            options.append((cost[i - 1, j], 1, (i - 1, j)))
        if j > 0:
            options.append((cost[i, j - 1], 2, (i, j - 1)))
        i, j = min(options)[2]
        path.append((i, j))
    path.reverse()

    labels = []
    for j in range(N):
        rows = [i for i, jj in path if jj == j]
        s = min(rows, key=lambda i: (D[i, j], i))
        labels.append(None if D[s, j] > threshold else s)
    per_sentence = tuple(tuple(jj for i, jj in path if i == s) for s in range(M))
    return DtwResult(tuple(labels), tuple(path), float(cost[M - 1, N - 1]), per_sentence)


@dataclass
class CtwResult:
    labels: tuple
    path: tuple
    cost_trace: tuple   # projected-space path cost after each warping pass
    fell_back: bool


def ctw_align(clip_embs: np.ndarray, sent_embs: np.ndarray,
              threshold: float = DEFAULT_THRESHOLD, iters: int = 5) -> CtwResult:
    """Alternate time warping with least-squares maps between the spaces.

    Starts from the warping path on raw order-similarity distances
    (``iters=0`` stops there).  Each round fits linear maps sending paired
    clips onto their sentences and vice versa, rebuilds a symmetrized
    projected distance matrix, and re-warps; it stops early once the path
    repeats.  Too few paired samples to determine the maps triggers a
    warning and falls back to the plain warping result.
    """
    V = np.asarray(clip_embs, dtype=np.float64)
    S = np.asarray(sent_embs, dtype=np.float64)
    if V.ndim != 2 or S.ndim != 2 or len(V) == 0 or len(S) == 0:
        raise ValueError("need non-empty 2-d embedding arrays for both sequences")
    if iters < 0:
        raise ValueError("iters must be non-negative")

    base = dtw_align(distance_matrix_np(V, S), threshold)
    if iters == 0:
        return CtwResult(base.labels, base.path, (), False)

    path = base.path
    trace = []
    result = None
    for _ in range(iters):
        Vp = np.stack([V[j] for _, j in path])
        Sp = np.stack([S[i] for i, _ in path])
        if np.linalg.matrix_rank(Vp) < V.shape[1] or np.linalg.matrix_rank(Sp) < S.shape[1]:
            warnings.warn("warping path underdetermines the projection maps; "
                          "keeping the unprojected alignment", RuntimeWarning)
            return CtwResult(base.labels, base.path, tuple(trace), True)
        Pv = np.linalg.lstsq(Vp, Sp, rcond=None)[0]
        Ps = np.linalg.lstsq(Sp, Vp, rcond=None)[0]
        VPv = V @ Pv
        SPs = S @ Ps
        D = (np.square(VPv[None, :, :] - S[:, None, :]).sum(axis=2)
             + np.square(SPs[:, None, :] - V[None, :, :]).sum(axis=2))
        result = dtw_align(D, threshold)
        trace.append(result.cost)
        if result.path == path:
            break
        path = result.path
    return CtwResult(result.labels, result.path, tuple(trace), False)
