"""Alignment scoring: per-clip accuracy and per-sentence clip-set IoU."""

from __future__ import annotations

from dataclasses import dataclass, field


def clip_accuracy(pred, truth) -> float:
    """Fraction of clips with the right sentence, counting unmatched (None)
    as a label in its own right."""
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} clips")
    if not truth:
        return 1.0
    return sum(p == t for p, t in zip(pred, truth)) / len(truth)


def _clip_sets(labels, n_sentences: int) -> list[set]:
    sets = [set() for _ in range(n_sentences)]
    for j, lab in enumerate(labels):
        if lab is not None:
            sets[lab].add(j)
    return sets


def sentence_iou(pred, truth, n_sentences: int) -> float:
    """Mean over sentences of |predicted clips ∩ true clips| / |union|.

    A sentence with no clips on either side scores 1; empty on exactly one
    side scores 0.
    """
    if len(pred) != len(truth):
        raise ValueError(f"{len(pred)} predictions for {len(truth)} clips")
    if n_sentences == 0:
        return 1.0
    total = 0.0
    for p, t in zip(_clip_sets(pred, n_sentences), _clip_sets(truth, n_sentences)):
        if not p and not t:
            total += 1.0
        else:
            total += len(p & t) / len(p | t)
    return total / n_sentences


@dataclass
class EvalReport:
    clip_accuracy: float
    sentence_iou: float
    per_movie: dict = field(default_factory=dict)   # movie_id -> (acc, iou)
    fingerprint: str = ""
    runtime: float = 0.0


def evaluate_movies(predictions: dict, movies) -> EvalReport:
    """Score per-movie label predictions against ground truth; the headline
    numbers are unweighted means over movies."""
    per_movie = {}
    for mv in movies:
        pred = predictions[mv.movie_id]
        per_movie[mv.movie_id] = (
            clip_accuracy(pred, mv.labels),
            sentence_iou(pred, mv.labels, len(mv.sentences)),
        )
    if not per_movie:
        raise ValueError("no movies to evaluate")
    accs, ious = zip(*per_movie.values())
    return EvalReport(sum(accs) / len(accs), sum(ious) / len(ious), per_movie)
