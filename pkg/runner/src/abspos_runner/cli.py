"""Command-line entry points for the model runner."""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .backends import make_backend
from .finetune import FinetuneConfig, run_finetune
from .jobs import run_dump_hidden, run_generate, run_retrieval_embed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="absposrun",
        description="Run a model over an absolute-position dataset directory.",
    )
    parser.add_argument("--version", action="version", version=f"absposrun {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--model", required=True, help="backend id, e.g. stub:oracle, tiny, hf:<ckpt>")
        p.add_argument("--dataset", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--limit", type=int, default=None, help="run only the first N samples")

    p = sub.add_parser("generate", help="greedy text answers to a predictions file")
    common(p, "output predictions .jsonl (appended; resumable)")

    p = sub.add_parser("embed", help="dual-encoder embeddings to a predictions file")
    common(p, "output embeddings .jsonl (appended; resumable)")

    p = sub.add_parser("dump-hidden", help="per-layer hidden-state dumps")
    common(p, "output directory for .hsd1 files")

    p = sub.add_parser("finetune", help="LoRA fine-tuning on the dataset's train/val split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="directory containing train/ and val/")
    p.add_argument("--out", required=True)
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--alpha", type=float, default=64.0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-limit", type=int, default=None)
    p.add_argument("--val-limit", type=int, default=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        backend = make_backend(args.model)
        if args.command == "generate":
            n = run_generate(backend, args.dataset, args.out, limit=args.limit)
            print(f"wrote {n} new records to {args.out}")
        elif args.command == "embed":
            n = run_retrieval_embed(backend, args.dataset, args.out, limit=args.limit)
            print(f"wrote {n} new records to {args.out}")
        elif args.command == "dump-hidden":
            files = run_dump_hidden(backend, args.dataset, args.out, limit=args.limit)
            print(f"wrote {len(files)} layer dumps to {args.out}")
        elif args.command == "finetune":
            config = FinetuneConfig(
                rank=args.rank,
                alpha=args.alpha,
                epochs=args.epochs,
                patience=args.patience,
                learning_rate=args.lr,
                batch_size=args.batch_size,
                seed=args.seed,
            )
            result = run_finetune(
                backend,
                args.dataset,
                args.out,
                config,
                train_limit=args.train_limit,
                val_limit=args.val_limit,
            )
            print(
                f"ran {result['epochs_run']} epochs; best val accuracy "
                f"{result['best_val_accuracy']:.4f} at epoch {result['best_epoch']}"
                + (" (early stop)" if result["stopped_early"] else "")
            )
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
