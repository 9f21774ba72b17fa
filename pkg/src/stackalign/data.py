"""Synthetic movie generation, corruption procedures, splits, and file IO.

A base dataset is a list of movies whose clips and sentences pair up one to
one: each aligned unit draws a latent vector, renders clip frames through a
shared linear map plus noise, and emits sentence tokens that quantize the
latent coordinates in round-robin order after Gaussian jitter, so matched
pairs are statistically linked and the pairing gets harder as either the
frame noise or the token jitter grows.

Three corruptions produce the benchmark variants: inserting confusable
foreign clips (labeled null), deleting sentences (their clips become null),
and splitting clips into contiguous children (making the truth one-to-many).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import ClipEncoder

PERTURBATIONS = ("none", "HM0", "HM1", "HM2")


@dataclass(eq=False)
class Movie:
    movie_id: str
    clips: list          # per clip: (n_frames, frame_dim) float array
    sentences: list      # per sentence: list of token ids
    labels: tuple        # per clip: sentence index or None, monotone


@dataclass
class GenConfig:
    n_movies: int = 20
    clips_per_movie: tuple = (4, 10)        # inclusive
    latent_dim: int = 12
    frame_dim: int = 24
    frames_per_clip: tuple = (2, 6)         # inclusive
    tokens_per_sentence: tuple = (4, 10)    # inclusive
    vocab_size: int = 120
    noise: float = 0.1                      # frame noise std
    token_temp: float = 0.25                # latent jitter std before binning
    seed: int = 0
    perturbation: str = "none"
    one_to_many: bool = True                # split clips after corruption
    split: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"perturbation must be one of {PERTURBATIONS}")
        if abs(sum(self.split) - 1.0) > 1e-9 or len(self.split) != 3:
            raise ValueError("split ratios must be three numbers summing to 1")
        if self.perturbation == "HM0" and not self.one_to_many:
            raise ValueError("HM0 is the clip-splitting variant; it requires one_to_many")
        for lo, hi in (self.clips_per_movie, self.frames_per_clip, self.tokens_per_sentence):
            if not 1 <= lo <= hi:
                raise ValueError("ranges must satisfy 1 <= lo <= hi")
        if self.vocab_size < 2 * self.latent_dim:
            raise ValueError("vocab_size must be at least twice latent_dim "
                             "(two quantization bins per coordinate)")


def check_movie(movie: Movie) -> None:
    """Dataset invariants: label indices valid, non-null labels non-decreasing
    and covering every sentence."""
    if len(movie.labels) != len(movie.clips):
        raise ValueError(f"{movie.movie_id}: {len(movie.labels)} labels for "
                         f"{len(movie.clips)} clips")
    prev = 0
    seen = set()
    for lab in movie.labels:
        if lab is None:
            continue
        if not 0 <= lab < len(movie.sentences):
            raise ValueError(f"{movie.movie_id}: label {lab} out of range")
        if lab < prev:
            raise ValueError(f"{movie.movie_id}: labels not monotone")
        prev = lab
        seen.add(lab)
    if seen != set(range(len(movie.sentences))):
        raise ValueError(f"{movie.movie_id}: some sentences have no clips")


def generate_base(cfg: GenConfig) -> list[Movie]:
    """One-to-one movies, deterministic in the config (seed included).

    Each movie gets its own child seed, so generation order per movie is
    independent of the others.
    """
    root = np.random.SeedSequence(cfg.seed)
    shared, per_movie = root.spawn(2)
    g = np.random.default_rng(shared)
    render = g.normal(size=(cfg.latent_dim, cfg.frame_dim)) / np.sqrt(cfg.latent_dim)
    # token id d*B + b says "coordinate d fell in bin b"; B bins per coordinate
    bins = cfg.vocab_size // cfg.latent_dim

    movies = []
    for k, ss in enumerate(per_movie.spawn(cfg.n_movies)):
        rng = np.random.default_rng(ss)
        n = int(rng.integers(cfg.clips_per_movie[0], cfg.clips_per_movie[1] + 1))
        clips, sentences = [], []
        for _ in range(n):
            z = rng.normal(size=cfg.latent_dim)
            f = int(rng.integers(cfg.frames_per_clip[0], cfg.frames_per_clip[1] + 1))
            clips.append(z @ render + cfg.noise * rng.normal(size=(f, cfg.frame_dim)))
            t = int(rng.integers(cfg.tokens_per_sentence[0], cfg.tokens_per_sentence[1] + 1))
            dims = np.arange(t) % cfg.latent_dim
            jittered = z[dims] + cfg.token_temp * rng.normal(size=t)
            levels = np.clip(((jittered + 2.5) / 5.0 * bins).astype(int), 0, bins - 1)
            sentences.append([int(w) for w in dims * bins + levels])
        movies.append(Movie(f"movie{k:04d}", clips, sentences, tuple(range(n))))
    return movies


def _gap_positions(rng: np.random.Generator, limit_fn) -> list[int]:
    # each event lands 0-3 slots after the previous one; positions are final indices
    out = []
    pos = int(rng.integers(0, 4))
    while pos <= limit_fn(len(out)):
        out.append(pos)
        pos += 1 + int(rng.integers(0, 4))
    return out


def perturb_hm1(movies: list[Movie], clip_enc: ClipEncoder,
                rng: np.random.Generator, n_candidates: int = 10) -> list[Movie]:
    """Insert confusable foreign clips, labeled null.

    Each insertion lands 0-3 clips after the previous one and picks, from
    ``n_candidates`` clips sampled from other movies, the one most similar to
    its neighbors in the pretrained embedding space (negated squared
    embedding distance, averaged over the 1-2 adjacent clips).
    """
    if len(movies) < 2:
        raise ValueError("inserting foreign clips requires at least 2 movies")
    with T.no_grad():
        pool_embs = [[clip_enc(c).data for c in mv.clips] for mv in movies]

    out = []
    for mi, mv in enumerate(movies):
        foreign = [(j, ci) for j in range(len(movies)) if j != mi
                   for ci in range(len(movies[j].clips))]
        clips = list(mv.clips)
        labels = list(mv.labels)
        embs = list(pool_embs[mi])
        n0 = len(clips)
        for pos in _gap_positions(rng, lambda k: n0 + k):
            picks = rng.choice(len(foreign), size=min(n_candidates, len(foreign)),
                               replace=False)
            neighbors = [embs[p] for p in (pos - 1, pos) if 0 <= p < len(embs)]
            best = None
            for pi in picks:
                j, ci = foreign[pi]
                cand = pool_embs[j][ci]
                score = -np.mean([np.square(cand - nb).sum() for nb in neighbors])
                if best is None or score > best[0]:
                    best = (score, j, ci)
            _, j, ci = best
            clips.insert(pos, movies[j].clips[ci].copy())
            labels.insert(pos, None)
            embs.insert(pos, pool_embs[j][ci])
        out.append(Movie(mv.movie_id, clips, list(mv.sentences), tuple(labels)))
    return out


def perturb_hm2(movies: list[Movie], rng: np.random.Generator) -> list[Movie]:
    """Delete sentences; their clips become null and the survivors' indices
    compact down.  Every movie keeps at least one sentence."""
    out = []
    for mv in movies:
        doomed = set(_gap_positions(rng, lambda _k: len(mv.sentences) - 1))
        if len(doomed) == len(mv.sentences):
            doomed.discard(max(doomed))
        remap = {}
        sentences = []
        for s, toks in enumerate(mv.sentences):
            if s not in doomed:
                remap[s] = len(sentences)
                sentences.append(list(toks))
        labels = tuple(None if lab is None or lab in doomed else remap[lab]
                       for lab in mv.labels)
        out.append(Movie(mv.movie_id, list(mv.clips), sentences, labels))
    return out


def split_clips(movies: list[Movie], rng: np.random.Generator, kmax: int = 5) -> list[Movie]:
    """Partition every clip into 1..min(kmax, frames) contiguous children,
    all inheriting the parent's label."""
    out = []
    for mv in movies:
        clips, labels = [], []
        for clip, lab in zip(mv.clips, mv.labels):
            n = len(clip)
            k = int(rng.integers(1, min(kmax, n) + 1))
            inner = [] if k == 1 else \
                sorted(int(c) for c in rng.choice(np.arange(1, n), size=k - 1, replace=False))
            cuts = [0, *inner, n]
            for a, b in zip(cuts, cuts[1:]):
                clips.append(clip[a:b])
                labels.append(lab)
        out.append(Movie(mv.movie_id, clips, list(mv.sentences), tuple(labels)))
    return out


def derived_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one of a seed's numbered child streams.

    Streams used by this package: 0 shared rendering maps, 1 per-movie
    generation, 2 corruption draws, 3 the train/val/test shuffle.
    """
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(stream + 1)[stream])


def generate_dataset(cfg: GenConfig, clip_enc: ClipEncoder | None = None) -> list[Movie]:
    """Base movies plus the configured corruption.  HM1 scores its inserted
    clips with a pretrained clip encoder, so one must be supplied."""
    movies = generate_base(cfg)
    rng = derived_rng(cfg.seed, 2)
    if cfg.perturbation == "HM1":
        if clip_enc is None:
            raise ValueError("HM1 needs a pretrained clip encoder to rank insertions")
        movies = perturb_hm1(movies, clip_enc, rng)
    elif cfg.perturbation == "HM2":
        movies = perturb_hm2(movies, rng)
    if cfg.perturbation != "none" and cfg.one_to_many:
        movies = split_clips(movies, rng)
    return movies


def matched_pairs(movies: list[Movie]) -> list[tuple]:
    """(frames, tokens) for every clip matched to a sentence; pretraining fodder."""
    return [(clip, mv.sentences[lab]) for mv in movies
            for clip, lab in zip(mv.clips, mv.labels) if lab is not None]


# ---------------------------------------------------------------------------
# file formats


def save_movies(path, movies: list[Movie]) -> None:
    """UTF-8 JSON Lines, one movie per line; frame values are rounded to
    32-bit floats so files are platform-stable."""
    with open(path, "w", encoding="utf-8") as fh:
        for mv in movies:
            rec = {
                "movie_id": mv.movie_id,
                "clips": [[[float(np.float32(x)) for x in frame] for frame in clip]
                          for clip in mv.clips],
                "sentences": [list(map(int, s)) for s in mv.sentences],
                "alignment": [lab for lab in mv.labels],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_movies(path) -> list[Movie]:
    movies = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            movies.append(Movie(
                rec["movie_id"],
                [np.array(c, dtype=np.float64) for c in rec["clips"]],
                [list(map(int, s)) for s in rec["sentences"]],
                tuple(rec["alignment"]),
            ))
    return movies


def split_movies(movies: list[Movie], ratios, rng: np.random.Generator) -> dict:
    """Shuffle and split into train/val/test; val and test sizes round down."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    order = [movies[i] for i in rng.permutation(len(movies))]
    n = len(movies)
    n_val, n_test = int(n * ratios[1]), int(n * ratios[2])
    return {
        "train": order[: n - n_val - n_test],
        "val": order[n - n_val - n_test: n - n_test],
        "test": order[n - n_test:],
    }


def save_manifest(path, splits: dict) -> None:
    rec = {part: [mv.movie_id for mv in splits[part]] for part in ("train", "val", "test")}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=True) + "\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.read())


def apply_manifest(movies: list[Movie], manifest: dict) -> dict:
    by_id = {mv.movie_id: mv for mv in movies}
    return {part: [by_id[i] for i in manifest[part]] for part in ("train", "val", "test")}
