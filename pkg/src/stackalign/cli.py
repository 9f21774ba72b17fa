"""Command-line entry points for the full pipeline.

Subcommands: gen-data, pretrain, train, align, eval, baseline, ablate,
sweep-threshold.  Exit codes: 0 success, 1 configuration error, 2 runtime
failure.  Relative output paths resolve under $STACKALIGN_OUTDIR when that
variable is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ACTION_PRESETS, RunConfig, preset
from .data import (
    GenConfig, PERTURBATIONS, apply_manifest, derived_rng, generate_dataset,
    load_manifest, load_movies, matched_pairs, save_manifest, save_movies,
    split_movies,
)
from .harness import (
    StageFailure, baseline_predictions, build_encoders, decode_movies,
    load_alignments, load_encoders, load_model, run_ablations, run_experiment,
    save_alignments, save_encoders, save_model, sweep_threshold,
    write_report_csv,
)
from .optim import TrainingDiverged


def _out(path) -> Path:
    base = os.environ.get("STACKALIGN_OUTDIR")
    p = Path(path)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.from_json(Path(args.config).read_text())
    if getattr(args, "preset", None):
        return preset(args.preset)
    raise ValueError("provide --config FILE or --preset NAME")


def _select(args, movies):
    if getattr(args, "manifest", None):
        return apply_manifest(movies, load_manifest(args.manifest))[args.split]
    return movies


def _add_config_flags(sub):
    sub.add_argument("--config", help="run-config JSON file")
    sub.add_argument("--preset", choices=("smoke", "desk", "long"),
                     help="named built-in configuration")


def _add_selection_flags(sub):
    sub.add_argument("--manifest", help="split manifest; restricts to --split")
    sub.add_argument("--split", choices=("train", "val", "test"), default="test")


# ---------------------------------------------------------------------------
# handlers


def cmd_gen_data(args) -> int:
    cfg = GenConfig(
        n_movies=args.n_movies, clips_per_movie=tuple(args.clips_per_movie),
        latent_dim=args.latent_dim, frame_dim=args.frame_dim,
        frames_per_clip=tuple(args.frames_per_clip),
        tokens_per_sentence=tuple(args.tokens_per_sentence),
        vocab_size=args.vocab_size, noise=args.noise, token_temp=args.token_temp,
        seed=args.seed, perturbation=args.perturbation,
        one_to_many=args.one_to_many, split=tuple(args.split_ratios),
    )
    clip_enc = None
    if cfg.perturbation == "HM1":
        if not args.encoders:
            raise ValueError("HM1 needs --encoders (a pretrained encoder checkpoint)")
        clip_enc, _ = load_encoders(args.encoders)
    movies = generate_dataset(cfg, clip_enc)
    save_movies(_out(args.out), movies)
    if args.manifest:
        splits = split_movies(movies, cfg.split, derived_rng(cfg.seed, 3))
        save_manifest(_out(args.manifest), splits)
    print(f"[gen-data] wrote {len(movies)} movies to {_out(args.out)}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    movies = load_movies(args.data)
    parts = apply_manifest(movies, load_manifest(args.manifest))
    clip_enc, sent_enc = build_encoders(cfg)
    train_pairs = matched_pairs(parts["train"])
    val_pairs = matched_pairs(parts["val"]) or train_pairs
    from .encoders import pretrain as run_pretrain
    result = run_pretrain(train_pairs, val_pairs, clip_enc, sent_enc,
                          cfg.pretrain, cfg.model_rng(1))
    save_encoders(_out(args.out), cfg, clip_enc, sent_enc)
    recall = result.val_recall[result.best_epoch] if result.val_recall else float("nan")
    print(f"[pretrain] {len(result.train_loss)} epochs, recall@1 {recall:.3f} "
          f"at the restored epoch; wrote {_out(args.out)}")
    return 0


def cmd_train(args) -> int:
    from .alignment import AlignmentModel, Episode, train_alignment
    cfg = _run_config(args)
    movies = load_movies(args.data)
    parts = apply_manifest(movies, load_manifest(args.manifest))
    clip_enc, sent_enc = load_encoders(args.encoders)
    if clip_enc.embed_dim != cfg.embed_dim:
        raise ValueError(f"encoder checkpoint embeds into {clip_enc.embed_dim} "
                         f"dimensions but the config says {cfg.embed_dim}")
    model = AlignmentModel(cfg.aligner_config(), cfg.action_set(), cfg.model_rng(2))
    episodes = {p: [Episode(mv.clips, mv.sentences, mv.labels) for mv in parts[p]]
                for p in ("train", "val")}
    train_alignment(episodes["train"], episodes["val"], clip_enc, sent_enc,
                    model, cfg.train, cfg.model_rng(3))
    save_model(_out(args.out), cfg, model)
    if args.out_encoders:
        save_encoders(_out(args.out_encoders), cfg, clip_enc, sent_enc)
    print(f"[train] wrote {_out(args.out)}")
    return 0


def cmd_align(args) -> int:
    movies = _select(args, load_movies(args.data))
    clip_enc, sent_enc = load_encoders(args.encoders)
    model = load_model(args.model)
    preds = decode_movies(model, clip_enc, sent_enc, movies, args.beam)
    save_alignments(_out(args.out), preds)
    print(f"[align] wrote {len(preds)} alignments to {_out(args.out)}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_movies
    movies = _select(args, load_movies(args.data))
    preds = load_alignments(args.pred)
    covered = [mv for mv in movies if mv.movie_id in preds]
    if not covered:
        raise ValueError("predictions cover none of the selected movies")
    report = evaluate_movies(preds, covered)
    write_report_csv(_out(args.out), {args.method_name: report}, args.dataset_name)
    print(f"[eval] clip_accuracy={report.clip_accuracy:.4f} "
          f"sentence_iou={report.sentence_iou:.4f} over {len(covered)} movies")
    return 0


def cmd_baseline(args) -> int:
    method = {"md": "md", "dtw": "dtw", "ctw": "ctw-lite"}[args.method]
    movies = _select(args, load_movies(args.data))
    clip_enc, sent_enc = load_encoders(args.encoders)
    preds = baseline_predictions(method, clip_enc, sent_enc, movies,
                                 args.threshold, args.ctw_iters)
    save_alignments(_out(args.out), preds)
    if args.paths_dir and method != "md":
        from .baselines import ctw_align, dtw_align
        from .encoders import distance_matrix_np
        from .harness import embed_movie
        pdir = _out(args.paths_dir)
        pdir.mkdir(parents=True, exist_ok=True)
        for mv in movies:
            V, S = embed_movie(clip_enc, sent_enc, mv)
            if method == "dtw":
                path = dtw_align(distance_matrix_np(V, S), args.threshold).path
            else:
                path = ctw_align(V, S, args.threshold, args.ctw_iters).path
            text = "\n".join(f"{i},{j}" for i, j in path)
            (pdir / f"{mv.movie_id}.csv").write_text("sentence,clip\n" + text + "\n")
    print(f"[baseline] {method}: wrote {len(preds)} alignments to {_out(args.out)}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    run_ablations(cfg, _out(args.outdir), slack=args.slack)
    return 0


def cmd_sweep_threshold(args) -> int:
    cfg = _run_config(args)
    values = [float(v) for v in args.values.split(",") if v]
    if not values:
        raise ValueError("--values must list at least one threshold")
    methods = tuple({"md": "md", "dtw": "dtw", "ctw": "ctw-lite"}[m]
                    for m in args.methods.split(","))
    sweep_threshold(cfg, _out(args.outdir), values, methods)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stackalign",
        description="Stack-transition alignment of clip and sentence sequences.")
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--n-movies", type=int, default=20)
    g.add_argument("--clips-per-movie", type=int, nargs=2, default=(4, 10),
                   metavar=("LO", "HI"))
    g.add_argument("--latent-dim", type=int, default=12)
    g.add_argument("--frame-dim", type=int, default=24)
    g.add_argument("--frames-per-clip", type=int, nargs=2, default=(2, 6),
                   metavar=("LO", "HI"))
    g.add_argument("--tokens-per-sentence", type=int, nargs=2, default=(4, 10),
                   metavar=("LO", "HI"))
    g.add_argument("--vocab-size", type=int, default=120)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--token-temp", type=float, default=0.25)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--perturbation", choices=PERTURBATIONS, default="none")
    g.add_argument("--one-to-many", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("--split-ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1),
                   metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--encoders", help="encoder checkpoint (required for HM1)")
    g.add_argument("--out", required=True)
    g.add_argument("--manifest", help="also write a split manifest here")
    g.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("pretrain", help="pretrain the encoders on matched pairs")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    t = subs.add_parser("train", help="train the alignment network")
    _add_config_flags(t)
    t.add_argument("--data", required=True)
    t.add_argument("--manifest", required=True)
    t.add_argument("--encoders", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--out-encoders", help="also save the fine-tuned encoders")
    t.set_defaults(func=cmd_train)

    a = subs.add_parser("align", help="decode alignments with a trained model")
    a.add_argument("--data", required=True)
    _add_selection_flags(a)
    a.add_argument("--encoders", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--beam", type=int, default=3)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_align)

    e = subs.add_parser("eval", help="score predicted alignments")
    e.add_argument("--data", required=True)
    _add_selection_flags(e)
    e.add_argument("--pred", required=True)
    e.add_argument("--method-name", default="neural")
    e.add_argument("--dataset-name", default="dataset")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = subs.add_parser("baseline", help="align with a non-neural baseline")
    b.add_argument("--data", required=True)
    _add_selection_flags(b)
    b.add_argument("--encoders", required=True)
    b.add_argument("--method", choices=("md", "dtw", "ctw"), required=True)
    b.add_argument("--threshold", type=float, default=0.7)
    b.add_argument("--ctw-iters", type=int, default=3)
    b.add_argument("--paths-dir", help="write warping paths as CSV here")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    ab = subs.add_parser("ablate", help="train and score all state-summary ablations")
    _add_config_flags(ab)
    ab.add_argument("--outdir", required=True)
    ab.add_argument("--slack", type=float, default=0.01)
    ab.set_defaults(func=cmd_ablate)

    s = subs.add_parser("sweep-threshold", help="score baselines across thresholds")
    _add_config_flags(s)
    s.add_argument("--outdir", required=True)
    s.add_argument("--values", required=True, help="comma-separated thresholds")
    s.add_argument("--methods", default="md,dtw,ctw")
    s.set_defaults(func=cmd_sweep_threshold)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StageFailure, TrainingDiverged) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
