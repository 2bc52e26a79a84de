"""``graphdiar`` command line: simulate, train, refine, diarize, score, sweep, gradcheck.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
Option precedence: command-line flag > ``--config`` file (``key = value`` lines,
keys are option names with dashes or underscores) > built-in default. The seed
falls back to the ``GRD_SEED`` environment variable.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .clustering import COUNT_METHODS, DiarizeConfig
from .embedding_io import EmbeddingMatrix, read_rttm, save_embeddings, write_rttm
from .evaluation import (
    EvalReport,
    SessionRecord,
    best_threshold,
    confusion_der,
    count_errors_from_spectra,
    evaluate_corpus,
    session_eigenvalues,
    sweep_table,
)
from .losses import LossConfig
from .refiner import forward, load_model, save_model
from .graph import build_session_graph, pairwise_cosine, propagation_matrix
from .simulator import MANIFEST_NAME, SimConfig, load_corpus, simulate_corpus
from .trainer import TrainConfig, kfold_split, train, tune_count_threshold, validation_split

log = logging.getLogger("graphdiar")

DEFAULT_SWEEP = "0.5:15:0.25"


class UsageFailure(Exception):
    pass


# --- argument types ----------------------------------------------------------


def positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def nonneg_float(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def int_list(text):
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text}") from None


def threshold_grid(text):
    """``lo:hi:step`` (inclusive of hi) or a comma-separated list."""
    text = str(text)
    try:
        if ":" in text:
            lo, hi, step = (float(t) for t in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return [round(v, 10) for v in np.arange(lo, hi + step / 2, step)]
        return [float(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold grid {text!r}") from None


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageFailure(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# --- commands ----------------------------------------------------------------


def cmd_simulate(args):
    cfg = SimConfig(
        n_sessions=args.sessions,
        speakers_range=(args.speakers_min, args.speakers_max),
        segments_per_speaker_range=(args.segments_min, args.segments_max),
        dim=args.dim,
        segment_duration=args.duration,
        within_speaker_concentration=args.concentration,
        max_centroid_cosine=args.max_centroid_cosine,
        seed=args.seed,
    )
    sessions = simulate_corpus(cfg, args.out)
    print(f"wrote {len(sessions)} sessions to {Path(args.out) / MANIFEST_NAME}")
    return 0


def _train_config(args):
    loss = LossConfig(
        kind="bce" if args.loss == "bce" else "hist_plus_nuclear",
        alpha=args.alpha,
        bins=args.bins,
        bin_range=(-1.0, 1.0),
    )
    scorer = args.scorer or ("fc" if loss.kind == "bce" else "cosine")
    return TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        lr_drop_epoch=min(args.lr_drop_epoch, max(args.epochs, 1)),
        lr_drop_factor=args.lr_drop_factor,
        folds=args.folds or 5,
        edge_threshold=args.edge_threshold,
        loss=loss,
        dims=args.dims,
        scorer=scorer,
        fc_hidden=args.fc_hidden,
        seed=args.seed,
    )


def _train_and_write(sessions, cfg, out: Path, every_epoch: bool):
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "epochs" if every_epoch else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    model, report = train(sessions, cfg, checkpoint_dir=ckpt_dir)
    save_model(model, out / "model.gnn")
    (out / "losses.csv").write_text(report.to_csv(), encoding="utf-8")
    return model, report


def cmd_train(args):
    sessions = load_corpus(args.manifest)
    if not sessions:
        raise RuntimeError("manifest lists no sessions")
    dim = sessions[0].embeddings.dim
    if args.dims is None:
        args.dims = (dim, dim, dim)
    cfg = _train_config(args)
    out = Path(args.out)
    if not args.folds:
        model, report = _train_and_write(sessions, cfg, out, args.checkpoint_every_epoch)
        print(f"trained {cfg.epochs} epochs on {len(sessions)} sessions; "
              f"final loss {report.epoch_losses[-1] if report.epoch_losses else float('nan'):.6f}; "
              f"skipped {report.skipped_sessions}; checksum {report.checksum[:16]}")
        return 0

    grid = args.thresholds
    summary = ["fold,threshold,der,count_error"]
    for fold, (train_idx, test_idx) in enumerate(kfold_split(len(sessions), args.folds, args.seed)):
        fit_idx, val_idx = validation_split(train_idx, 0.1, args.seed + fold)
        fold_dir = out / f"fold{fold}"
        model, _ = _train_and_write([sessions[i] for i in fit_idx], cfg, fold_dir, args.checkpoint_every_epoch)
        tau = tune_count_threshold(model, [sessions[i] for i in val_idx], grid, cfg.edge_threshold)
        report = evaluate_corpus(
            [sessions[i] for i in test_idx], model,
            DiarizeConfig(edge_threshold=cfg.edge_threshold, count_threshold=tau, seed=args.seed),
        )
        (fold_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (fold_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
        summary.append(f"{fold},{tau},{report.der:.6f},{report.count_error_mean:.6f}")
        print(f"fold {fold}: tau={tau} DER={100 * report.der:.2f}% count error={report.count_error_mean:.3f}")
    (out / "cv_summary.csv").write_text("\n".join(summary) + "\n", encoding="utf-8")
    return 0


def _load_model_checked(path, dim):
    model = load_model(path)
    if model.in_dim != dim:
        raise ValueError(f"model expects {model.in_dim}-dim embeddings, corpus has {dim}")
    return model


def cmd_refine(args):
    sessions = load_corpus(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = None
    lines = []
    for sess in sessions:
        emb = sess.embeddings
        if model is None:
            model = _load_model_checked(args.model, emb.dim)
        g = build_session_graph(emb, pairwise_cosine(emb), args.edge_threshold)
        z = forward(model, propagation_matrix(g), emb).z
        name = f"{sess.session_id}.emb"
        save_embeddings(EmbeddingMatrix(z, emb.meta), out / name)
        lines.append(f"{name}\t{sess.n_speakers}\t{emb.n}\n")
    (out / MANIFEST_NAME).write_text("".join(lines), encoding="utf-8")
    print(f"refined {len(sessions)} sessions into {out}")
    return 0


def _diarize_config(args):
    return DiarizeConfig(
        edge_threshold=args.edge_threshold,
        count_method=args.count_method,
        count_threshold=args.count_threshold,
        max_k=args.max_k,
        seed=args.seed,
    )


def cmd_diarize(args):
    from .clustering import diarize

    sessions = load_corpus(args.manifest)
    cfg = _diarize_config(args)
    model = _load_model_checked(args.model, sessions[0].embeddings.dim) if args.model and sessions else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sess in sessions:
        hyp = diarize(sess.embeddings, model, cfg)
        write_rttm(hyp, sess.embeddings.meta, out / f"{sess.session_id}.rttm")
    print(f"wrote {len(sessions)} RTTM files to {out}")
    return 0


def cmd_score(args):
    sessions = load_corpus(args.manifest)
    hyp_dir = Path(args.hyp)
    ref_ids = {s.session_id for s in sessions}
    hyp_ids = {p.stem for p in hyp_dir.glob("*.rttm")}
    missing = sorted(ref_ids - hyp_ids)
    extra = sorted(hyp_ids - ref_ids)
    if missing:
        raise RuntimeError(f"no hypothesis for session {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    if extra:
        raise RuntimeError(f"hypothesis session {extra[0]} is not in the reference manifest")
    report = EvalReport()
    for sess in sessions:
        rows = read_rttm(hyp_dir / f"{sess.session_id}.rttm")
        meta = sess.embeddings.meta
        if len(rows) != len(meta):
            raise RuntimeError(f"session {sess.session_id}: {len(rows)} hypothesis segments, {len(meta)} reference")
        hyp = [r[3] for r in rows]
        dur = sess.embeddings.durations
        report.records.append(
            SessionRecord(sess.session_id, sess.n_speakers, len(set(hyp)), confusion_der(sess.labels, hyp, dur), float(dur.sum()))
        )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_sweep(args):
    sessions = load_corpus(args.manifest)
    if not sessions:
        raise RuntimeError("manifest lists no sessions")
    grid = args.thresholds
    truth = [s.n_speakers for s in sessions]
    curves = {"original": count_errors_from_spectra(session_eigenvalues(sessions, None, args.edge_threshold), truth, grid)}
    if args.model:
        model = _load_model_checked(args.model, sessions[0].embeddings.dim)
        curves["refined"] = count_errors_from_spectra(session_eigenvalues(sessions, model, args.edge_threshold), truth, grid)
    table = sweep_table(grid, curves)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    for source, errs in curves.items():
        print(f"{source}: best threshold {best_threshold(grid, errs)} mean error {np.min(errs):.4f}", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_suite

    results = run_suite(args.instances, args.seed)
    worst = max(r.worst for r in results)
    for r in results:
        if args.verbose:
            print(f"seed={r.seed} scorer={r.scorer} loss={r.loss_kind} N={r.n} D={r.dim} max_rel={r.worst:.3e}")
    print(f"max relative error: {worst:.3e} over {len(results)} checks (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 1


# --- parser ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="graphdiar", description=__doc__.splitlines()[0])
    parser.add_argument("--backend-info", action="store_true", help="print the kernel backend and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="key = value defaults file")
        p.add_argument("--seed", type=int, default=None, help="master seed (env GRD_SEED)")
        p.add_argument("-v", "--verbose", action="store_true")

    def clustering_opts(p):
        p.add_argument("--edge-threshold", type=nonneg_float, default=0.2)
        p.add_argument("--count-method", choices=COUNT_METHODS, default="threshold")
        p.add_argument("--count-threshold", type=positive_float, default=2.0)
        p.add_argument("--max-k", type=positive_int, default=None)

    p = sub.add_parser("simulate", help="write a synthetic corpus")
    common(p)
    p.add_argument("--sessions", type=nonneg_int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers-min", type=positive_int, default=2)
    p.add_argument("--speakers-max", type=positive_int, default=15)
    p.add_argument("--segments-min", type=positive_int, default=2)
    p.add_argument("--segments-max", type=positive_int, default=60)
    p.add_argument("--dim", type=positive_int, default=128)
    p.add_argument("--duration", type=positive_float, default=1.5)
    p.add_argument("--concentration", type=positive_float, default=SimConfig.within_speaker_concentration)
    p.add_argument("--max-centroid-cosine", type=float, default=0.6)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a refiner on a corpus")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=nonneg_int, default=50)
    p.add_argument("--lr", type=positive_float, default=1e-3)
    p.add_argument("--lr-drop-epoch", type=positive_int, default=40)
    p.add_argument("--lr-drop-factor", type=positive_float, default=10.0)
    p.add_argument("--edge-threshold", type=nonneg_float, default=0.2)
    p.add_argument("--loss", choices=("hist", "bce"), default="hist")
    p.add_argument("--alpha", type=nonneg_float, default=0.01)
    p.add_argument("--bins", type=positive_int, default=150)
    p.add_argument("--scorer", choices=("cosine", "fc"), default=None)
    p.add_argument("--dims", type=int_list, default=None, help="layer sizes, e.g. 128,128,128")
    p.add_argument("--fc-hidden", type=positive_int, default=64)
    p.add_argument("--folds", type=positive_int, default=None, help="run k-fold cross-validation")
    p.add_argument("--thresholds", type=threshold_grid, default=threshold_grid(DEFAULT_SWEEP))
    p.add_argument("--checkpoint-every-epoch", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("refine", help="write refined embeddings")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edge-threshold", type=nonneg_float, default=0.2)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("diarize", help="cluster each session and write RTTM")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--out", required=True)
    clustering_opts(p)
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("score", help="confusion DER of RTTM hypotheses")
    common(p)
    p.add_argument("--manifest", required=True, help="reference corpus")
    p.add_argument("--hyp", required=True, help="directory of <session>.rttm")
    p.add_argument("--out", default=None, help="text report path")
    p.add_argument("--csv", default=None, help="per-session CSV path")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", help="speaker-count error per eigenvalue threshold")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--thresholds", type=threshold_grid, default=threshold_grid(DEFAULT_SWEEP))
    p.add_argument("--edge-threshold", type=nonneg_float, default=0.2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p)
    p.add_argument("--instances", type=positive_int, default=20)
    p.add_argument("--tolerance", type=positive_float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values installed as subcommand defaults."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageFailure as exc:
            parser.error(str(exc))
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        converted = {}
        for key, raw in values.items():
            action = actions.get(key)
            if action is None or key in ("config", "help"):
                parser.error(f"unknown config key {key!r} for {args.command}")
            try:
                if action.type is not None:
                    converted[key] = action.type(raw)
                elif action.const is True:
                    converted[key] = raw.lower() in ("1", "true", "yes", "on")
                else:
                    converted[key] = raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"config key {key}: {exc}")
            if action.choices is not None and converted[key] not in action.choices:
                parser.error(f"config key {key}: {raw!r} not in {sorted(action.choices)}")
            if action.required:
                action.required = False
        subparser.set_defaults(**converted)
        args = parser.parse_args(argv)
    if getattr(args, "seed", 0) is None:
        env = os.environ.get("GRD_SEED")
        try:
            args.seed = int(env) if env else 0
        except ValueError:
            parser.error(f"GRD_SEED must be an integer, got {env!r}")
    return args


def main(argv=None):
    parser = build_parser()
    args = _apply_config(parser, argv)
    if args.backend_info:
        print(_kernels.backend_name())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"graphdiar {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
