"""Command-line front end.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or precondition,
3 numerical abort, 4 gradient audit failure.
"""
import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3, 4


class CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=1) + "\n")


def _weights(text):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"weights must be three comma-separated numbers, got {text!r}")
    return tuple(parts)


def _config(args):
    from .config import ConfigError, load_config, with_overrides

    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg = with_overrides(cfg, "corpus" if args.command == "gen-data" else "train", seed=args.seed)
        if getattr(args, "weights", None) is not None:
            cfg = with_overrides(cfg, "loss", weights=args.weights)
        if args.command == "train" and getattr(args, "levels", None) is not None:
            cfg = with_overrides(cfg, "train", levels=args.levels)
        if args.command == "train" and getattr(args, "family", None) is not None:
            cfg = with_overrides(cfg, "train", family=args.family)
        if args.command == "train" and getattr(args, "lambda_g", None) is not None:
            cfg = with_overrides(cfg, "train", n_groups=args.lambda_g)
        if args.command == "train" and getattr(args, "lambda_s", None) is not None:
            cfg = with_overrides(cfg, "train", shuffle_ratio=args.lambda_s)
        if args.command == "gradcheck" and getattr(args, "levels", None) is not None:
            cfg = with_overrides(cfg, "audit", levels=args.levels)
        if args.command == "gradcheck" and getattr(args, "tolerance", None) is not None:
            cfg = with_overrides(cfg, "audit", tolerance=args.tolerance)
    except ConfigError as err:
        raise CliFailure(EXIT_INVALID, f"invalid config: {err}") from None
    except OSError as err:
        raise CliFailure(EXIT_IO, f"cannot read config {args.config}: {err}") from None
    return cfg


def _load(path):
    from .data import DataError, load_corpus

    try:
        return load_corpus(path)
    except DataError as err:
        raise CliFailure(EXIT_INVALID, f"{path}: {err}") from None
    except (OSError, KeyError, json.JSONDecodeError) as err:
        raise CliFailure(EXIT_IO, f"cannot load corpus {path}: {err}") from None


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args):
    from .data import DataError, generate_synthetic_corpus, save_corpus, split_corpus

    cfg = _config(args)
    out = Path(args.out or cfg.paths.out_dir or "corpus")
    c = cfg.corpus
    try:
        corpus = generate_synthetic_corpus(c.seed, c.n_pairs, c.n_classes, c.frames, c.joints,
                                           levels=cfg.train.levels, captions_per_motion=c.captions_per_motion)
    except DataError as err:
        raise CliFailure(EXIT_INVALID, str(err)) from None
    splits = split_corpus(corpus)
    try:
        for name, part in splits.items():
            save_corpus(part, out / name)
    except OSError as err:
        raise CliFailure(EXIT_IO, f"cannot write corpus to {out}: {err.strerror or err}") from None
    _emit({
        "out_dir": str(out),
        "seed": c.seed,
        "shape": {"frames": corpus.frames, "joints": corpus.joints, "coords": 3},
        "counts": {name: len(part) for name, part in splits.items()},
        "classes": corpus.class_names,
    })
    return EXIT_OK


def cmd_roundtrip(args):
    from .wavelets import WaveletError, make_filter_bank, pr_error

    corpus = _load(args.corpus)
    levels = args.levels
    T = corpus.frames
    if levels < 1 or T % (2 ** levels):
        raise CliFailure(EXIT_INVALID, f"levels={levels} requires the sequence length to be a multiple of "
                                       f"2**{levels}={2 ** levels}, got T={T}")
    bank = make_filter_bank(args.family, "fixed")
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["pair_index", "T", "J", "max_abs_error"])
    worst = 0.0
    for i in range(len(corpus)):
        x = corpus.motions[i].astype(np.float64).reshape(T, -1)
        try:
            err = pr_error(bank, x, levels)
        except WaveletError as exc:
            raise CliFailure(EXIT_INVALID, str(exc)) from None
        worst = max(worst, err)
        writer.writerow([i, T, corpus.joints, repr(err)])
    return EXIT_OK if worst <= 1e-6 else EXIT_NUMERIC


def cmd_train(args):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .train import NumericalAbort, log_lines, train

    cfg = _config(args)
    corpus_dir = Path(args.corpus or cfg.paths.corpus_dir or "corpus")
    out = Path(args.out or cfg.paths.out_dir or "run")
    train_corpus = _load(corpus_dir / "train")
    val_path = corpus_dir / "val"
    val_corpus = _load(val_path) if (val_path / "manifest.json").exists() else None
    try:
        tcfg = cfg.train_config()
        init = None
        if args.resume:
            init, _, _ = load_checkpoint(args.resume)
        try:
            out.mkdir(parents=True, exist_ok=True)
            log_file = open(out / "metrics.jsonl", "w")
        except OSError as err:
            raise CliFailure(EXIT_IO, f"cannot write to {out}: {err.strerror or err}") from None
        with log_file:
            def on_epoch(record):
                log_file.write(log_lines([record]))
                log_file.flush()

            result = train(train_corpus, val_corpus, tcfg, params=init, on_epoch=on_epoch)
    except NumericalAbort as err:
        raise CliFailure(EXIT_NUMERIC, f"numerical abort: {err}") from None
    except ValueError as err:
        raise CliFailure(EXIT_INVALID, str(err)) from None
    meta = {"train_config": tcfg.to_dict(), "best_epoch": result.best_epoch}
    save_checkpoint(out / "checkpoint", result.best_params, result.model_config, meta)
    payload = {"best_epoch": result.best_epoch, "checkpoint": str(out / "checkpoint"),
               "metrics_log": str(out / "metrics.jsonl")}
    if result.best_report is not None:
        payload["report"] = result.best_report.to_json()
    _emit(payload)
    return EXIT_OK


def cmd_eval(args):
    from .checkpoint import CheckpointError, load_checkpoint
    from .train import evaluate_retrieval

    try:
        params, mcfg, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as err:
        raise CliFailure(EXIT_INVALID, str(err)) from None
    except (OSError, KeyError, json.JSONDecodeError) as err:
        raise CliFailure(EXIT_IO, f"cannot load checkpoint {args.checkpoint}: {err}") from None
    corpus = _load(args.corpus)
    if (corpus.frames, corpus.joints) != (mcfg.frames, mcfg.joints):
        raise CliFailure(EXIT_INVALID, f"corpus shape T={corpus.frames}, J={corpus.joints} does not match "
                                       f"checkpoint T={mcfg.frames}, J={mcfg.joints}")
    if len(corpus) == 0:
        raise CliFailure(EXIT_INVALID, "empty gallery")
    _emit(evaluate_retrieval(params, mcfg, corpus).to_json())
    return EXIT_OK


def cmd_gradcheck(args):
    from .objectives import LossConfig
    from .train import audit_json, gradient_audit, tiny_setup

    cfg = _config(args)
    a = cfg.audit
    try:
        params, mcfg, batch = tiny_setup(seed=a.seed, levels=a.levels, n_groups=a.n_groups)
    except ValueError as err:
        raise CliFailure(EXIT_INVALID, str(err)) from None
    lcfg = LossConfig(cfg.loss.temperature, cfg.loss.smooth_l1_beta, tuple(cfg.loss.weights))
    report = gradient_audit(params, mcfg, lcfg, batch, tolerance=a.tolerance, n_coords=a.n_coords, seed=a.seed)
    passed = all(g.passed for g in report.values())
    _emit({
        "config": {"frames": mcfg.frames, "joints": mcfg.joints, "latent_dim": mcfg.latent_dim,
                   "levels": mcfg.levels, "batch": 2, "step": 1e-5, "dtype": "float64"},
        "band_stacks": sorted({n.split(".")[0] for n in params if n.startswith("band")}),
        "groups": audit_json(report),
        "passed": passed,
    })
    return EXIT_OK if passed else EXIT_AUDIT


def cmd_shuffle_demo(args):
    from .data import DataError, shuffle_sequence

    corpus = _load(args.corpus)
    if len(corpus) == 0:
        raise CliFailure(EXIT_INVALID, "corpus is empty")
    try:
        _, rec = shuffle_sequence(corpus.motions[0], args.lambda_g, args.lambda_s, np.random.default_rng(args.seed))
    except DataError as err:
        raise CliFailure(EXIT_INVALID, str(err)) from None
    _emit({
        "pair_index": 0,
        "lambda_g": args.lambda_g,
        "lambda_s": args.lambda_s,
        "seed": args.seed,
        "selected": rec.selected.tolist(),
        "permutation": rec.permutation.tolist(),
        "g_o": rec.original_labels.tolist(),
        "g_s": rec.shuffled_labels.tolist(),
    })
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="wamo", description="Wavelet multi-frequency text-motion retrieval toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write train/val/test synthetic corpora")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("roundtrip", help="per-sequence wavelet round-trip error as CSV")
    r.add_argument("--corpus", required=True)
    r.add_argument("--family", choices=("haar", "db2"), default="haar")
    r.add_argument("--levels", type=int, default=3)
    r.set_defaults(func=cmd_roundtrip)

    t = sub.add_parser("train", help="train and write the best checkpoint plus an epoch log")
    t.add_argument("--config")
    t.add_argument("--corpus", help="directory holding train/ and val/ corpora")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--weights", type=_weights)
    t.add_argument("--family", choices=("haar", "db2"))
    t.add_argument("--levels", type=int)
    t.add_argument("--lambda-g", dest="lambda_g", type=int)
    t.add_argument("--lambda-s", dest="lambda_s", type=float)
    t.add_argument("--resume", help="initialize from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval report for a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("gradcheck", help="finite-difference audit on the tiny configuration")
    a.add_argument("--config")
    a.add_argument("--levels", type=int)
    a.add_argument("--tolerance", type=float)
    a.add_argument("--weights", type=_weights)
    a.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("shuffle-demo", help="show the disordering record for pair 0")
    s.add_argument("--corpus", required=True)
    s.add_argument("--lambda-g", dest="lambda_g", type=int, default=16)
    s.add_argument("--lambda-s", dest="lambda_s", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_shuffle_demo)
    return p


def main(argv=None):
    threads = os.environ.get("WAMO_THREADS")
    if threads:
        from ._accel import set_threads

        set_threads(threads)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as err:
        print(f"wamo {args.command}: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
