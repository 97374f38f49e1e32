"""Command-line entry point.

Machine-readable output is a single JSON document on stdout; progress lines
go to stderr. Exit codes: 0 success, 1 validation/config error, 2 runtime
numerical failure, 3 I/O failure. Commands only read their inputs and write
the declared outputs. ``--threads`` fans eval-mode encoding out to worker
threads; the default of 1 keeps runs bitwise deterministic end to end.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .data import (
    RunConfig,
    gen_synthetic_confounders,
    load_config,
    load_dataset,
    load_synth_spec,
    save_dataset,
    validate_for_training,
)
from .errors import (
    FormatError,
    NumericalError,
    UsageError,
    ValidationError,
)
from .evaluation import Metrics, evaluate_knn, evaluate_logistic
from .retrieval import build_dense_index
from .trainer import train, write_history

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _emit(obj) -> None:
    json.dump(obj, sys.stdout)
    sys.stdout.write("\n")


def _config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config.to_json().encode("utf-8")).hexdigest()


def cmd_validate(args) -> int:
    ds = load_dataset(args.data)
    validate_for_training(ds)
    _emit({"n": len(ds), "d_img": ds.d_img, "d_txt": ds.d_txt,
           "class_counts": {str(k): v for k, v in ds.class_counts().items()}})
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed).validate()
    train_ds = load_dataset(args.train)
    dev_ds = load_dataset(args.dev)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    best, history = train(train_ds, dev_ds, config, threads=args.threads, log=sys.stderr)
    ckpt_io.save_checkpoint(best, out_dir / "best.rgc1")
    write_history(history, out_dir / "history.jsonl")
    best_epoch = max(history, key=lambda r: (r.dev_auroc, -r.epoch)).epoch
    _emit({"best_epoch": best_epoch,
           "best_dev_auroc": round(max(r.dev_auroc for r in history), 4),
           "epochs": len(history),
           "out": str(out_dir)})
    return EXIT_OK


def _report(metrics: Metrics, config: RunConfig, args, mode: str) -> dict:
    report = {
        "config_hash": _config_hash(config),
        "mode": mode,
        "test": str(args.test),
        "checkpoint": str(args.checkpoint),
        "auroc": None if metrics.auroc is None else round(metrics.auroc, 4),
        "accuracy": round(metrics.accuracy, 4),
        "f1": round(metrics.f1, 4),
        "n_examples": metrics.n_examples,
        "per_example": [{"id": e.id, "score": e.score, "prediction": e.prediction,
                         "label": e.label} for e in metrics.per_example],
    }
    if mode == "knn":
        report["retrieval"] = str(args.retrieval)
    return report


def cmd_eval(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    test_ds = load_dataset(args.test)
    if args.mode == "knn":
        if args.retrieval is None:
            raise UsageError("knn mode requires --retrieval")
        retrieval_ds = load_dataset(args.retrieval)
        k = args.k if args.k is not None else ckpt.config.knn_k
        metrics = evaluate_knn(test_ds, retrieval_ds, ckpt, k, threads=args.threads)
    else:
        metrics = evaluate_logistic(test_ds, ckpt, threads=args.threads)
    _emit(_report(metrics, ckpt.config, args, args.mode))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_synth_spec(args.spec)
    train_ds, test_ds = gen_synthetic_confounders(spec)
    save_dataset(train_ds, args.out_train)
    save_dataset(test_ds, args.out_test)
    _emit({"train_records": len(train_ds), "test_records": len(test_ds),
           "d_img": spec.d_img, "d_txt": spec.d_txt})
    return EXIT_OK


def cmd_export_index(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    index = build_dense_index(ds, ckpt.params, ckpt.config.sim_metric, threads=args.threads)
    from .data import EmbeddingDataset
    out_ds = EmbeddingDataset(index.n, 0, index.ids.copy(), index.labels.copy(),
                              index.G.astype("float32"),
                              index.G[:, :0].astype("float32"))
    save_dataset(out_ds, args.out)
    manifest = {"metric": index.metric, "N": len(index), "n": index.n}
    Path(str(args.out) + ".manifest.json").write_text(json.dumps(manifest) + "\n",
                                                      encoding="utf-8")
    _emit(manifest)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memespace",
        description="Retrieval-guided contrastive embedding engine for meme classification")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for eval-mode encoding (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an RGE1 file for training use")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train and write best.rgc1 + history.jsonl")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("logistic", "knn"), default="logistic")
    p.add_argument("--retrieval", default=None, help="retrieval database (knn mode)")
    p.add_argument("--k", type=int, default=None, help="neighbours for knn (default: config knn_k)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic confounder benchmark")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-index", help="export encoded embeddings as an RGE1 file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_index)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
