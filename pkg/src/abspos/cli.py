"""Command-line interface: dataset generation, augmentation, scoring, probing.

Every subcommand writes a `run.json` into its output directory echoing the
resolved configuration, so any output tree can be reproduced from what it
records. Seeds default to 0; nothing is drawn from the environment.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .dataset import IMAGES_DIR, Dataset, load_dataset, save_dataset
from .errors import InputError
from .evaluate import emit_reports, load_predictions, score
from .probe import ProbeConfig, layer_sweep, load_dump_dir, sweep_csv_bytes
from .render import write_bytes_atomic
from .synth import (
    DEFAULT_FRACTIONS,
    add_distractors,
    build_eval_set,
    build_train_set,
    iter_images,
    scale_subsets,
)
from . import coco as coco_mod

OUT_ROOT_ENV = "ABSPOS_OUT_ROOT"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_IO = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the CLI contract wants 1.
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write_run_stamp(out_dir: Path, command: str, args: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = {"command": command, "version": __version__, "args": args}
    write_bytes_atomic(
        (json.dumps(stamp, indent=2, sort_keys=True) + "\n").encode("utf-8"),
        out_dir / "run.json",
    )


def _save_with_images(dataset: Dataset, out_dir: Path, jobs: int) -> None:
    if jobs <= 1:
        save_dataset(dataset, out_dir, images=iter_images(dataset))
        return

    from .render import png_bytes, render_scene
    from .synth import scene_of_sample

    def encode(sample):
        return sample.id, png_bytes(render_scene(scene_of_sample(sample)))

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        rendered = pool.map(encode, dataset.samples)
        save_dataset(dataset, out_dir, images=rendered)


def _copy_images(src_dir: Path, dataset: Dataset, out_dir: Path) -> None:
    src_images = src_dir / IMAGES_DIR
    if not src_images.is_dir():
        return
    dst = out_dir / IMAGES_DIR
    dst.mkdir(parents=True, exist_ok=True)
    for sample in dataset.samples:
        src = src_images / f"{sample.id}.png"
        if src.exists():
            shutil.copyfile(src, dst / f"{sample.id}.png")


def _cmd_gen_synth_eval(args) -> int:
    out = _out_path(args.out)
    dataset = build_eval_set(seed=args.seed)
    _save_with_images(dataset, out, args.jobs)
    _write_run_stamp(out, "gen synth-eval", {"out": str(args.out), "seed": args.seed, "jobs": args.jobs})
    print(f"wrote {len(dataset)} samples to {out}")
    return EXIT_OK


def _cmd_gen_synth_train(args) -> int:
    out = _out_path(args.out)
    train, val = build_train_set(seed=args.seed)
    _save_with_images(train, out / "train", args.jobs)
    _save_with_images(val, out / "val", args.jobs)
    _write_run_stamp(out, "gen synth-train", {"out": str(args.out), "seed": args.seed, "jobs": args.jobs})
    print(f"wrote {len(train)} train / {len(val)} val samples to {out}")
    return EXIT_OK


def _cmd_gen_coco(args) -> int:
    out = _out_path(args.out)
    idx = coco_mod.ingest_annotations(args.annotations)
    dataset = coco_mod.build_coco_set(idx, seed=args.seed, source_split=args.source_name)
    dataset.extra["ingest_warnings"] = idx.warnings
    dataset.extra["ingest_counts"] = {
        "images": idx.n_images,
        "instances": idx.n_instances,
        "categories": idx.n_categories,
    }
    if args.split:
        train, val = coco_mod.split_train_val(dataset, seed=args.seed)
        dataset = train if args.split == "train" else val
    save_dataset(dataset, out)
    _write_run_stamp(
        out,
        "gen coco",
        {
            "annotations": str(args.annotations),
            "out": str(args.out),
            "seed": args.seed,
            "split": args.split,
            "source_name": args.source_name,
        },
    )
    print(f"wrote {len(dataset)} samples to {out}")
    return EXIT_OK


def _cmd_augment_distractors(args) -> int:
    out = _out_path(args.out)
    src = Path(args.dataset)
    dataset = load_dataset(src)
    augmented = add_distractors(
        dataset,
        k=args.k,
        seed=args.seed,
        allow_any_k=args.allow_any_k,
        include_plus=args.include_plus,
    )
    _save_with_images(augmented, out, args.jobs)
    _write_run_stamp(
        out,
        "augment distractors",
        {
            "dataset": str(args.dataset),
            "k": args.k,
            "out": str(args.out),
            "seed": args.seed,
            "allow_any_k": args.allow_any_k,
            "include_plus": args.include_plus,
            "jobs": args.jobs,
        },
    )
    print(f"wrote {len(augmented)} samples with {args.k} distractors to {out}")
    return EXIT_OK


def _cmd_subset_balanced(args) -> int:
    out = _out_path(args.out)
    src = Path(args.dataset)
    dataset = load_dataset(src)
    subset = coco_mod.balanced_subset(dataset, n=args.n, seed=args.seed)
    save_dataset(subset, out)
    _copy_images(src, subset, out)
    _write_run_stamp(
        out,
        "subset balanced",
        {"dataset": str(args.dataset), "n": args.n, "out": str(args.out), "seed": args.seed},
    )
    print(f"wrote {len(subset)} samples to {out}")
    return EXIT_OK


def _cmd_subset_scale(args) -> int:
    out = _out_path(args.out)
    src = Path(args.dataset)
    dataset = load_dataset(src)
    try:
        fractions = tuple(float(f) for f in args.fractions.split(","))
    except ValueError:
        raise InputError(f"cannot parse fractions list: {args.fractions!r}")
    subsets = scale_subsets(dataset, fractions=fractions, seed=args.seed)
    for fraction, subset in zip(fractions, subsets):
        sub_dir = out / f"subset_{fraction:g}pct"
        save_dataset(subset, sub_dir)
        _copy_images(src, subset, sub_dir)
    _write_run_stamp(
        out,
        "subset scale",
        {
            "dataset": str(args.dataset),
            "fractions": args.fractions,
            "out": str(args.out),
            "seed": args.seed,
        },
    )
    print(f"wrote {len(subsets)} subsets to {out}")
    return EXIT_OK


def _cmd_eval_score(args) -> int:
    out = _out_path(args.out)
    dataset = load_dataset(args.dataset)
    preds = load_predictions(args.predictions, retrieval=args.retrieval)
    report = score(dataset, preds)
    emit_reports(report, out)
    _write_run_stamp(
        out,
        "eval score",
        {
            "dataset": str(args.dataset),
            "predictions": str(args.predictions),
            "retrieval": args.retrieval,
            "out": str(args.out),
        },
    )
    print(
        f"overall accuracy {report.overall_accuracy:.4f} "
        f"(valid rate {report.valid_rate:.4f}) over {report.n['samples']} samples"
    )
    return EXIT_OK


def _cmd_probe_sweep(args) -> int:
    out = _out_path(args.out)
    dumps = load_dump_dir(args.dumps)
    config = ProbeConfig(folds=args.folds, c=args.C, epochs=args.epochs, seed=args.seed)
    rows = layer_sweep(dumps, config)
    out.mkdir(parents=True, exist_ok=True)
    write_bytes_atomic(sweep_csv_bytes(rows), out / "layer_accuracy.csv")
    write_bytes_atomic(
        (json.dumps({"layers": rows}, indent=2) + "\n").encode("utf-8"),
        out / "probe_results.json",
    )
    _write_run_stamp(
        out,
        "probe sweep",
        {
            "dumps": str(args.dumps),
            "out": str(args.out),
            "folds": args.folds,
            "C": args.C,
            "epochs": args.epochs,
            "seed": args.seed,
        },
    )
    for row in rows:
        print(f"layer {row['layer']}: {row['mean']:.4f} (+/- {row['std']:.4f})")
    return EXIT_OK


def _add_seed_out(parser, out_required=True):
    parser.add_argument("--out", required=out_required, help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="global seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abspos", description=__doc__)
    parser.add_argument("--version", action="version", version=f"abspos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate datasets")
    gen_sub = gen.add_subparsers(dest="target", required=True, parser_class=_Parser)

    p = gen_sub.add_parser("synth-eval", help="exhaustive synthetic evaluation set")
    _add_seed_out(p)
    p.add_argument("--jobs", type=int, default=1, help="image encoding workers")
    p.set_defaults(func=_cmd_gen_synth_eval)

    p = gen_sub.add_parser("synth-train", help="synthetic training set with 80/20 split")
    _add_seed_out(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_gen_synth_train)

    p = gen_sub.add_parser("coco", help="absolute-position set from COCO annotations")
    p.add_argument("--annotations", required=True, help="COCO instances JSON file")
    p.add_argument("--split", choices=["train", "val"], help="keep one side of the 80/20 image-disjoint split")
    p.add_argument("--source-name", default=None, help="label recorded as the samples' source split")
    _add_seed_out(p)
    p.set_defaults(func=_cmd_gen_coco)

    augment = sub.add_parser("augment", help="derive augmented datasets")
    augment_sub = augment.add_subparsers(dest="target", required=True, parser_class=_Parser)

    p = augment_sub.add_parser("distractors", help="add distractor objects")
    p.add_argument("--dataset", required=True, help="source dataset directory")
    p.add_argument("--k", type=int, required=True, help="distractors per image (1, 3, or 5)")
    p.add_argument("--allow-any-k", action="store_true", help="permit counts other than 1/3/5")
    p.add_argument("--include-plus", action="store_true", help="allow plus-shaped distractors for white targets")
    p.add_argument("--jobs", type=int, default=1)
    _add_seed_out(p)
    p.set_defaults(func=_cmd_augment_distractors)

    subset = sub.add_parser("subset", help="derive subsets")
    subset_sub = subset.add_subparsers(dest="target", required=True, parser_class=_Parser)

    p = subset_sub.add_parser("balanced", help="region/category balanced subset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n", type=int, default=1296, help="subset size (default 1296)")
    _add_seed_out(p)
    p.set_defaults(func=_cmd_subset_balanced)

    p = subset_sub.add_parser("scale", help="nested stratified scaling ladder")
    p.add_argument("--dataset", required=True)
    p.add_argument(
        "--fractions",
        default=",".join(f"{f:g}" for f in DEFAULT_FRACTIONS),
        help="comma-separated percentages",
    )
    _add_seed_out(p)
    p.set_defaults(func=_cmd_subset_scale)

    ev = sub.add_parser("eval", help="score predictions")
    ev_sub = ev.add_subparsers(dest="target", required=True, parser_class=_Parser)

    p = ev_sub.add_parser("score", help="score a predictions file against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True, help="line-delimited prediction records")
    p.add_argument("--retrieval", action="store_true", help="records carry embeddings, not text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval_score)

    probe = sub.add_parser("probe", help="linear probing")
    probe_sub = probe.add_subparsers(dest="target", required=True, parser_class=_Parser)

    p = probe_sub.add_parser("sweep", help="layer-wise probe accuracy")
    p.add_argument("--dumps", required=True, help="directory of hidden-state dumps")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=20)
    _add_seed_out(p)
    p.set_defaults(func=_cmd_probe_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INPUT
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
