"""Experiment orchestration: generate, pretrain, corrupt, train, decode,
run the baselines, score everything, and write reports.

All report files are pure functions of the run configuration: timings are
kept on the in-memory report objects and printed, never written, so a rerun
with the same config reproduces every output byte for byte.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .alignment import AlignmentModel, Episode, EpisodeRunner, decode_beam, decode_greedy
from .alignment import train_alignment
from .baselines import ctw_align, dtw_align, md_align
from .checkpoint import load_meta, load_params, save_params
from .config import METHODS, RunConfig
from .data import (
    Movie, apply_manifest, derived_rng, generate_base, generate_dataset,
    matched_pairs, save_manifest, save_movies, split_movies,
)
from .encoders import (
    ClipEncoder, SentenceEncoder, distance_matrix_np, encoder_parameters,
    pretrain, recall_at_1,
)
from .metrics import EvalReport, evaluate_movies
from .nn import load_into
from .transitions import ActionSet


class StageFailure(RuntimeError):
    """A pipeline stage failed; the message names the stage and, where one
    exists, the example being processed."""

    def __init__(self, stage: str, detail: str):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage


# ---------------------------------------------------------------------------
# encoder and model plumbing


def build_encoders(cfg: RunConfig) -> tuple[ClipEncoder, SentenceEncoder]:
    rng = cfg.model_rng(0)
    clip_enc = ClipEncoder(cfg.gen.frame_dim, cfg.embed_dim, rng)
    sent_enc = SentenceEncoder(cfg.gen.vocab_size, cfg.word_dim, cfg.sent_hidden,
                               cfg.embed_dim, rng)
    return clip_enc, sent_enc


def save_encoders(path, cfg: RunConfig, clip_enc: ClipEncoder, sent_enc: SentenceEncoder) -> None:
    meta = {"kind": "encoders", "frame_dim": cfg.gen.frame_dim,
            "vocab_size": cfg.gen.vocab_size, "embed_dim": cfg.embed_dim,
            "word_dim": cfg.word_dim, "sent_hidden": cfg.sent_hidden}
    save_params(path, encoder_parameters(clip_enc, sent_enc), meta)


def load_encoders(path) -> tuple[ClipEncoder, SentenceEncoder]:
    meta = load_meta(path)
    if meta.get("kind") != "encoders":
        raise ValueError(f"{path} is not an encoder checkpoint")
    rng = np.random.default_rng(0)
    clip_enc = ClipEncoder(meta["frame_dim"], meta["embed_dim"], rng)
    sent_enc = SentenceEncoder(meta["vocab_size"], meta["word_dim"],
                               meta["sent_hidden"], meta["embed_dim"], rng)
    load_into(encoder_parameters(clip_enc, sent_enc), load_params(path))
    return clip_enc, sent_enc


def save_model(path, cfg: RunConfig, model: AlignmentModel) -> None:
    meta = {"kind": "aligner", "actions": cfg.actions,
            "aligner": {"embed_dim": model.cfg.embed_dim,
                        "video_hidden": model.cfg.video_hidden,
                        "text_hidden": model.cfg.text_hidden,
                        "action_hidden": model.cfg.action_hidden,
                        "matched_hidden": model.cfg.matched_hidden,
                        "classifier_hidden": model.cfg.classifier_hidden,
                        "pointer_hidden": model.cfg.pointer_hidden,
                        "use_counts": model.cfg.use_counts,
                        "ablation": model.cfg.ablation}}
    save_params(path, model.parameters(), meta)


def load_model(path) -> AlignmentModel:
    from .alignment import AlignerConfig
    from .config import ACTION_PRESETS
    meta = load_meta(path)
    if meta.get("kind") != "aligner":
        raise ValueError(f"{path} is not an aligner checkpoint")
    model = AlignmentModel(AlignerConfig(**meta["aligner"]),
                           ACTION_PRESETS[meta["actions"]], np.random.default_rng(0))
    load_into(model.parameters(), load_params(path))
    return model


def embed_movie(clip_enc: ClipEncoder, sent_enc: SentenceEncoder, mv: Movie):
    with T.no_grad():
        clips = np.stack([clip_enc(c).data for c in mv.clips])
        sents = np.stack([sent_enc(s).data for s in mv.sentences])
    return clips, sents


# ---------------------------------------------------------------------------
# prediction


def decode_movies(model: AlignmentModel, clip_enc: ClipEncoder, sent_enc: SentenceEncoder,
                  movies: list[Movie], beam_width: int) -> dict:
    preds = {}
    for mv in movies:
        try:
            with T.no_grad():
                runner = EpisodeRunner(model, [clip_enc(c) for c in mv.clips],
                                       [sent_enc(s) for s in mv.sentences])
            result = decode_beam(runner, beam_width) if beam_width > 1 else decode_greedy(runner)
            preds[mv.movie_id] = result
        except Exception as exc:
            raise StageFailure("decode", f"movie {mv.movie_id}: {exc}") from exc
    return preds


def baseline_predictions(method: str, clip_enc: ClipEncoder, sent_enc: SentenceEncoder,
                         movies: list[Movie], threshold: float, ctw_iters: int) -> dict:
    if method not in ("md", "dtw", "ctw-lite"):
        raise ValueError(f"unknown baseline {method!r}")
    preds = {}
    for mv in movies:
        try:
            V, S = embed_movie(clip_enc, sent_enc, mv)
            if method == "md":
                preds[mv.movie_id] = md_align(distance_matrix_np(V, S), threshold).labels
            elif method == "dtw":
                preds[mv.movie_id] = dtw_align(distance_matrix_np(V, S), threshold).labels
            else:
                preds[mv.movie_id] = ctw_align(V, S, threshold, ctw_iters).labels
        except Exception as exc:
            raise StageFailure(method, f"movie {mv.movie_id}: {exc}") from exc
    return preds


# ---------------------------------------------------------------------------
# report files


def write_report_csv(path, reports: dict, dataset_name: str) -> None:
    lines = ["method,dataset,metric,value"]
    for method in sorted(reports, key=lambda m: (METHODS.index(m) if m in METHODS else 99, m)):
        rep = reports[method]
        lines.append(f"{method},{dataset_name},clip_accuracy,{rep.clip_accuracy:.6f}")
        lines.append(f"{method},{dataset_name},sentence_iou,{rep.sentence_iou:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_per_movie_csv(path, reports: dict) -> None:
    lines = ["method,movie_id,clip_accuracy,sentence_iou"]
    for method in sorted(reports, key=lambda m: (METHODS.index(m) if m in METHODS else 99, m)):
        for movie_id in sorted(reports[method].per_movie):
            acc, iou = reports[method].per_movie[movie_id]
            lines.append(f"{method},{movie_id},{acc:.6f},{iou:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def alignment_grid(mv: Movie, pred) -> np.ndarray:
    """Sentence-by-clip matrix marking truth (1), prediction (2), both (3)."""
    grid = np.zeros((len(mv.sentences), len(mv.clips)), dtype=int)
    for j, lab in enumerate(mv.labels):
        if lab is not None:
            grid[lab, j] |= 1
    for j, lab in enumerate(pred):
        if lab is not None:
            grid[lab, j] |= 2
    return grid


def write_alignment_grids(dirpath, movies: list[Movie], preds: dict) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for mv in movies:
        grid = alignment_grid(mv, preds[mv.movie_id])
        text = "\n".join(",".join(str(v) for v in row) for row in grid)
        (dirpath / f"{mv.movie_id}.csv").write_text(text + "\n")


def save_alignments(path, preds: dict) -> None:
    """JSON Lines: movie_id, per-clip labels, and for decoded results the
    action tokens, score, and whether the stacks emptied."""
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for movie_id in sorted(preds):
            p = preds[movie_id]
            rec = {"movie_id": movie_id}
            if hasattr(p, "actions"):
                rec["labels"] = list(p.labels)
                rec["actions"] = " ".join(a.token() for a in p.actions)
                rec["log_prob"] = p.log_prob
                rec["terminal"] = p.terminal
            else:
                rec["labels"] = list(p)
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_alignments(path) -> dict:
    import json
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                preds[rec["movie_id"]] = tuple(rec["labels"])
    return preds


# ---------------------------------------------------------------------------
# experiments


def _labels_only(preds: dict) -> dict:
    return {k: (tuple(v.labels) if hasattr(v, "labels") else tuple(v)) for k, v in preds.items()}


def run_experiment(cfg: RunConfig, outdir, methods=METHODS, write_files: bool = True) -> dict:
    """The full pipeline; returns one scored report per method.

    Stages: generate base movies, split, pretrain encoders on matched pairs,
    corrupt per the config, train the aligner, decode the test split, run
    the requested baselines on the same embeddings, score, write reports.
    """
    t0 = time.monotonic()
    outdir = Path(outdir)
    if write_files:
        outdir.mkdir(parents=True, exist_ok=True)

    stage = "generate"
    try:
        base = generate_base(cfg.gen)
        splits = split_movies(base, cfg.gen.split, derived_rng(cfg.gen.seed, 3))
        manifest = {part: [mv.movie_id for mv in splits[part]]
                    for part in ("train", "val", "test")}

        stage = "pretrain"
        clip_enc, sent_enc = build_encoders(cfg)
        train_pairs = matched_pairs(splits["train"])
        val_pairs = matched_pairs(splits["val"]) or train_pairs
        pretrain(train_pairs, val_pairs, clip_enc, sent_enc, cfg.pretrain, cfg.model_rng(1))
        with T.no_grad():
            V = clip_enc.encode_batch([c for c, _ in val_pairs]).data
            S = sent_enc.encode_batch([s for _, s in val_pairs]).data
        recall = recall_at_1(V, S)
        print(f"[pretrain] val recall@1 = {recall:.3f} over {len(val_pairs)} pairs")

        stage = "corrupt"
        movies = generate_dataset(cfg.gen, clip_enc)
        parts = apply_manifest(movies, manifest)

        stage = "train"
        model = AlignmentModel(cfg.aligner_config(), cfg.action_set(), cfg.model_rng(2))
        episodes = {p: [Episode(mv.clips, mv.sentences, mv.labels) for mv in parts[p]]
                    for p in ("train", "val")}
        train_alignment(episodes["train"], episodes["val"], clip_enc, sent_enc,
                        model, cfg.train, cfg.model_rng(3))
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(stage, str(exc)) from exc

    test = parts["test"]
    preds: dict[str, dict] = {}
    if "neural" in methods:
        preds["neural"] = decode_movies(model, clip_enc, sent_enc, test, cfg.beam_width)
    for method in methods:
        if method != "neural":
            preds[method] = baseline_predictions(method, clip_enc, sent_enc, test,
                                                 cfg.threshold, cfg.ctw_iters)

    stage = "evaluate"
    try:
        reports = {}
        for method, p in preds.items():
            rep = evaluate_movies(_labels_only(p), test)
            rep.fingerprint = cfg.fingerprint()
            rep.runtime = time.monotonic() - t0
            reports[method] = rep

        if write_files:
            save_movies(outdir / "dataset.jsonl", movies)
            save_manifest(outdir / "manifest.json", parts)
            save_encoders(outdir / "encoders.json", cfg, clip_enc, sent_enc)
            save_model(outdir / "model.json", cfg, model)
            if "neural" in preds:
                save_alignments(outdir / "alignments.jsonl", preds["neural"])
                write_alignment_grids(outdir / "paths", test, _labels_only(preds["neural"]))
            write_report_csv(outdir / "report.csv", reports, cfg.gen.perturbation)
            write_per_movie_csv(outdir / "per_movie.csv", reports)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(stage, str(exc)) from exc

    for method in sorted(reports):
        rep = reports[method]
        print(f"[{method}] clip_accuracy={rep.clip_accuracy:.3f} "
              f"sentence_iou={rep.sentence_iou:.3f}")
    print(f"[runtime] {time.monotonic() - t0:.1f}s")
    return reports


ABLATION_VARIANTS = ("full", "no_action", "no_history", "no_action_history", "no_input_lstms")


def run_ablations(cfg: RunConfig, outdir, variants=ABLATION_VARIANTS,
                  slack: float = 0.01, write_files: bool = True) -> dict:
    """Train one aligner per state-summary variant from identical data,
    encoders, and seeds; report both metrics per variant.

    The directional expectation (the full summary is at least as good as
    every ablation, within slack) is checked softly: violations are printed,
    not fatal.
    """
    outdir = Path(outdir)
    if write_files:
        outdir.mkdir(parents=True, exist_ok=True)

    stage = "generate"
    try:
        base = generate_base(cfg.gen)
        splits = split_movies(base, cfg.gen.split, derived_rng(cfg.gen.seed, 3))
        manifest = {p: [mv.movie_id for mv in splits[p]] for p in ("train", "val", "test")}

        stage = "pretrain"
        clip_enc, sent_enc = build_encoders(cfg)
        train_pairs = matched_pairs(splits["train"])
        val_pairs = matched_pairs(splits["val"]) or train_pairs
        pretrain(train_pairs, val_pairs, clip_enc, sent_enc, cfg.pretrain, cfg.model_rng(1))
        pristine = {k: p.data.copy() for k, p in encoder_parameters(clip_enc, sent_enc).items()}

        stage = "corrupt"
        movies = generate_dataset(cfg.gen, clip_enc)
        parts = apply_manifest(movies, manifest)
        episodes = {p: [Episode(mv.clips, mv.sentences, mv.labels) for mv in parts[p]]
                    for p in ("train", "val")}
    except Exception as exc:
        raise StageFailure(stage, str(exc)) from exc

    reports = {}
    for variant in variants:
        try:
            load_into(encoder_parameters(clip_enc, sent_enc), pristine)
            vcfg = RunConfig.from_dict({**_cfg_dict(cfg), "ablation": variant})
            model = AlignmentModel(vcfg.aligner_config(), vcfg.action_set(), cfg.model_rng(2))
            train_alignment(episodes["train"], episodes["val"], clip_enc, sent_enc,
                            model, cfg.train, cfg.model_rng(3))
            preds = decode_movies(model, clip_enc, sent_enc, parts["test"], cfg.beam_width)
            rep = evaluate_movies(_labels_only(preds), parts["test"])
            rep.fingerprint = cfg.fingerprint()
            reports[variant] = rep
            print(f"[{variant}] clip_accuracy={rep.clip_accuracy:.3f} "
                  f"sentence_iou={rep.sentence_iou:.3f}")
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(f"ablation {variant}", str(exc)) from exc

    if "full" in reports:
        full = reports["full"]
        for variant, rep in reports.items():
            if variant == "full":
                continue
            if rep.clip_accuracy > full.clip_accuracy + slack or \
                    rep.sentence_iou > full.sentence_iou + slack:
                print(f"[warn] ablation {variant} outperformed the full model")

    if write_files:
        lines = ["variant,metric,value"]
        for variant in variants:
            if variant in reports:
                lines.append(f"{variant},clip_accuracy,{reports[variant].clip_accuracy:.6f}")
                lines.append(f"{variant},sentence_iou,{reports[variant].sentence_iou:.6f}")
        (outdir / "ablations.csv").write_text("\n".join(lines) + "\n")
    return reports


def _cfg_dict(cfg: RunConfig) -> dict:
    import dataclasses
    return dataclasses.asdict(cfg)


def sweep_threshold(cfg: RunConfig, outdir, thresholds,
                    methods=("md", "dtw", "ctw-lite"), write_files: bool = True) -> list:
    """Baseline scores across null thresholds on the test split; the neural
    model has no threshold, so it is not swept."""
    outdir = Path(outdir)
    if write_files:
        outdir.mkdir(parents=True, exist_ok=True)
    stage = "generate"
    try:
        base = generate_base(cfg.gen)
        splits = split_movies(base, cfg.gen.split, derived_rng(cfg.gen.seed, 3))
        manifest = {p: [mv.movie_id for mv in splits[p]] for p in ("train", "val", "test")}
        stage = "pretrain"
        clip_enc, sent_enc = build_encoders(cfg)
        train_pairs = matched_pairs(splits["train"])
        val_pairs = matched_pairs(splits["val"]) or train_pairs
        pretrain(train_pairs, val_pairs, clip_enc, sent_enc, cfg.pretrain, cfg.model_rng(1))
        stage = "corrupt"
        movies = generate_dataset(cfg.gen, clip_enc)
        test = apply_manifest(movies, manifest)["test"]
    except Exception as exc:
        raise StageFailure(stage, str(exc)) from exc

    rows = []
    for theta in thresholds:
        for method in methods:
            preds = baseline_predictions(method, clip_enc, sent_enc, test,
                                         theta, cfg.ctw_iters)
            rep = evaluate_movies(_labels_only(preds), test)
            rows.append((method, theta, rep.clip_accuracy, rep.sentence_iou))
            print(f"[sweep] {method} theta={theta:g} clip_accuracy={rep.clip_accuracy:.3f} "
                  f"sentence_iou={rep.sentence_iou:.3f}")
    if write_files:
        lines = ["method,threshold,clip_accuracy,sentence_iou"]
        for method, theta, acc, iou in rows:
            lines.append(f"{method},{theta:g},{acc:.6f},{iou:.6f}")
        (outdir / "sweep.csv").write_text("\n".join(lines) + "\n")
    return rows
