"""Command-line entry point: ``dasdrop <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import experiment as ex
from .config import RunConfig, resolve
from .errors import CompatibilityError, DasError
from .features import build_windows
from .ingest import UserPartition, format_timestamp, parse_log
from .model import predict_last
from .sessionize import gap_histogram, session_stats, sessionize_all
from .synth import HazardSpec, generate

log = logging.getLogger("dasdrop")

EXIT_CODES = {
    "runtime": 1,
    "usage": 2,
    "config": 3,
    "schema": 4,
    "data": 4,
    "io": 5,
    "compat": 6,
    "divergence": 7,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[usage]: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CODES["usage"])


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=["desk", "paper"], help="named hyperparameter preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold-secs", type=float, help="inactivity threshold closing a session (default 3600)")
    p.add_argument("--seq-size", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dasdrop", description="Study-session dropout prediction with the DAS transformer.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{sessionize,train,evaluate,predict,ablate,synth}", parser_class=_Parser)

    p = sub.add_parser("sessionize", help="label sessions and dropouts in a log")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="labelled log (default: stdout)")
    p.add_argument("--stats-file", help="write statistics as key\\tvalue lines")
    p.add_argument("--histogram", help="write log2-scale gap histogram for plotting")

    p = sub.add_parser("train", help="train a model and keep the best validation checkpoint")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("evaluate", help="AUC of a checkpoint on a log")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="run directory or .npz file")
    p.add_argument("--input", required=True)
    p.add_argument("--manifest", help="partition manifest; restricts scoring to --split")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--per-user", action="store_true", help="also report macro-averaged per-user AUC")

    p = sub.add_parser("predict", help="print one dropout probability per interaction")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("ablate", help="feature or sequence-size ablation")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=["features", "seq-size"], default="features")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("synth", help="generate a synthetic log with a planted hazard")
    _common(p)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--questions", type=int, default=500)
    p.add_argument("--output", required=True)
    p.add_argument("--truth", help="sidecar ground-truth file")
    for name, default in asdict(HazardSpec()).items():
        if name != "seed":
            p.add_argument(f"--{name.replace('_', '-')}", type=float, default=default)
    return parser


def _run_config(args) -> RunConfig:
    overrides = {
        "preset": args.preset,
        "seed": args.seed,
        "threshold_secs": args.threshold_secs,
        "seq_size": args.seq_size,
        "epochs": getattr(args, "epochs", None),
    }
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(_fail("usage", f"--set expects KEY=VALUE, got {item!r}"))
        overrides[key.strip()] = value.strip()
    return resolve(config_file=args.config, overrides=overrides)


def _out_dir(args, cfg: RunConfig) -> Path | None:
    if not args.out_dir:
        return None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(cfg.to_text())
    return out


def _load(path, cfg: RunConfig):
    parsed = parse_log(path, elapsed_unit=cfg.elapsed_unit)
    for rej in parsed.rejections[:20]:
        log.warning("%s:%d rejected: %s", path, rej.line, rej.reason)
    if parsed.rejections:
        log.warning("%d row(s) rejected in total", len(parsed.rejections))
    return parsed


def cmd_sessionize(args) -> int:
    cfg = _run_config(args)
    _out_dir(args, cfg)
    parsed = _load(args.input, cfg)
    seqs = sessionize_all(parsed.records, cfg.threshold_secs)
    out = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    try:
        out.write("user_id,timestamp,question_id,user_answer,correctness,elapsed_time,part,session_id,dropout\n")
        for uid in sorted(seqs):
            for it in seqs[uid]:
                r = it.record
                out.write(
                    f"{r.user_id},{r.timestamp},{r.question_id},{r.user_answer},{r.correctness},"
                    f"{r.elapsed_time},{r.part},{it.session_id},{it.dropout}\n"
                )
    finally:
        if out is not sys.stdout:
            out.close()
    stats = session_stats(seqs)
    table = stats.as_dict()
    width = max(len(k) for k in table)
    for k, v in table.items():
        print(f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}", file=sys.stderr)
    if args.stats_file:
        Path(args.stats_file).write_text("".join(f"{k}\t{v}\n" for k, v in table.items()))
    if args.histogram:
        rows = gap_histogram(parsed.records)
        Path(args.histogram).write_text(
            "log2_seconds\tcount\tratio\n" + "".join(f"{k}\t{c}\t{r:.6f}\n" for k, c, r in rows)
        )
    return 0


def _dataset(args, cfg: RunConfig) -> ex.Dataset:
    parsed = _load(args.input, cfg)
    return ex.prepare(
        parsed.records, threshold_secs=cfg.threshold_secs, ratio=cfg.split_ratio, seed=cfg.seed, limits=cfg.limits
    )


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    if out is None:
        return _fail("usage", "train requires --out-dir")
    data = _dataset(args, cfg)
    data.partition.write_manifest(out / "partition.tsv")
    outcome = ex.run_experiment(data, cfg.model_config(), cfg.train_config(), out, "train")
    report = outcome.test.summary() | {"best_epoch": outcome.result.best_epoch, "best_val_auc": outcome.result.best_val_auc}
    (out / "test_report.txt").write_text("".join(f"{k}\t{v}\n" for k, v in report.items()))
    print(outcome.result.metric_log(), end="")
    print(f"test_auc\t{outcome.test.auc:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    parsed = _load(args.input, cfg)
    seqs = sessionize_all(parsed.records, cfg.threshold_secs)
    users = None
    if args.manifest:
        users = getattr(UserPartition.read_manifest(args.manifest), args.split)
    report = ex.evaluate_checkpoint(args.checkpoint, seqs, users, args.seq_size, cfg.eval_batch_size, args.per_user)
    lines = "".join(f"{k}\t{v}\n" for k, v in report.summary().items())
    if out is not None:
        (out / "eval_report.txt").write_text(lines)
    print(lines, end="")
    return 0


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    _out_dir(args, cfg)
    parsed = _load(args.input, cfg)
    seqs = sessionize_all(parsed.records, cfg.threshold_secs)
    config, params, vocab, limits = ex.load_run(args.checkpoint)
    if args.seq_size is not None and args.seq_size != config.seq_size:
        raise CompatibilityError(f"checkpoint was trained with seq_size {config.seq_size}")
    windows = build_windows(seqs, seqs.keys(), vocab, config.seq_size, limits)
    probs = predict_last(params, config, windows, cfg.eval_batch_size)
    print("user_id\ttimestamp\tdropout_probability")
    for u, i, pr in zip(windows.user, windows.index, probs):
        ts = seqs[u][i].record.timestamp
        print(f"{u}\t{format_timestamp(ts)}\t{pr:.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    data = _dataset(args, cfg)
    entries = ex.FEATURE_ABLATION if args.kind == "features" else ex.SEQ_SIZE_ABLATION
    rows = ex.run_ablation(entries, data, cfg.model_config(), cfg.train_config(), out)
    print("name\tseq_size\ttest_auc")
    for r in rows:
        print(f"{r.name}\t{r.seq_size}\t{r.test_auc:.4f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    _out_dir(args, cfg)
    hazard = HazardSpec(
        base=args.base,
        et_coef=args.et_coef,
        sp_coef=args.sp_coef,
        correct_coef=args.correct_coef,
        interaction_coef=args.interaction_coef,
        seed=cfg.seed,
    )
    data = generate(args.users, args.questions, hazard, seed=cfg.seed)
    data.write(args.output, args.truth)
    n = sum(len(v) for v in data.records.values())
    print(json.dumps({"users": len(data.records), "interactions": n}))
    return 0


COMMANDS = {
    "sessionize": cmd_sessionize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
}


def _fail(category: str, message: str) -> int:
    print(f"error[{category}]: {message}", file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.command:
        parser.print_help()
        return EXIT_CODES["usage"]
    try:
        return COMMANDS[args.command](args)
    except DasError as exc:
        return _fail(exc.category if exc.category in EXIT_CODES else "runtime", str(exc))
    except BrokenPipeError:
        return 0
    except OSError as exc:
        return _fail("io", str(exc))
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
