"""Dataset containers, deterministic RNG streams, and the on-disk layout.

A dataset directory holds `manifest.json`, `samples.jsonl` (one sample per
line, fixed key order) and, for synthetic data, `images/<id>.png`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import __version__
from .errors import InputError
from .grid import Cell, POSITION_LABELS, Region
from .render import write_bytes_atomic

MANIFEST_NAME = "manifest.json"
SAMPLES_NAME = "samples.jsonl"
IMAGES_DIR = "images"


def derive_rng(*parts) -> np.random.Generator:
    """Independent RNG stream derived from a hash of the given parts.

    Per-sample and per-stratum streams make generation order-independent:
    the same (seed, key) always yields the same stream regardless of how
    work is batched or parallelized.
    """
    token = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


def stable_id(payload: dict) -> str:
    """Content-hash identifier: 16 hex chars of the canonical JSON payload."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def shuffled_options(seed: int, sample_id: str) -> list[str]:
    """Per-sample deterministic permutation of the nine position labels."""
    rng = derive_rng(seed, sample_id, "options")
    perm = rng.permutation(len(POSITION_LABELS))
    return [POSITION_LABELS[i] for i in perm]


@dataclass
class VqaSample:
    """One image/question/options/answer record."""

    id: str
    image_path: str
    question: str
    options: list[str]
    gold: str
    target_cell: Cell
    target_region: Region
    meta: dict
    # Populated for real-image samples only.
    category: str | None = None
    bbox: tuple[float, float, float, float] | None = None
    source_split: str | None = None

    def __post_init__(self):
        if sorted(self.options) != sorted(POSITION_LABELS):
            raise InputError(f"options of {self.id} are not a permutation of the labels")
        if self.gold not in POSITION_LABELS:
            raise InputError(f"gold of {self.id} is not a position label: {self.gold!r}")

    def to_json_dict(self) -> dict:
        d = {
            "id": self.id,
            "image_path": self.image_path,
            "question": self.question,
            "options": self.options,
            "gold": self.gold,
            "target_cell": {"row": self.target_cell.row, "col": self.target_cell.col},
            "target_region": {"row": self.target_region.row, "col": self.target_region.col},
            "meta": self.meta,
        }
        if self.category is not None:
            d["category"] = self.category
            d["bbox"] = list(self.bbox)
            d["source_split"] = self.source_split
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "VqaSample":
        return cls(
            id=d["id"],
            image_path=d["image_path"],
            question=d["question"],
            options=list(d["options"]),
            gold=d["gold"],
            target_cell=Cell(d["target_cell"]["row"], d["target_cell"]["col"]),
            target_region=Region(d["target_region"]["row"], d["target_region"]["col"]),
            meta=d["meta"],
            category=d.get("category"),
            bbox=tuple(d["bbox"]) if "bbox" in d else None,
            source_split=d.get("source_split"),
        )


def sample_line(sample: VqaSample) -> str:
    return json.dumps(sample.to_json_dict(), ensure_ascii=False, separators=(", ", ": "))


@dataclass
class Dataset:
    name: str
    seed: int
    samples: list[VqaSample]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InputError(f"dataset {self.name} has duplicate sample ids")

    def __len__(self) -> int:
        return len(self.samples)

    def by_id(self) -> dict[str, VqaSample]:
        return {s.id: s for s in self.samples}

    def counts_per_cell(self) -> list[list[int]]:
        grid = [[0] * 9 for _ in range(9)]
        for s in self.samples:
            grid[s.target_cell.row][s.target_cell.col] += 1
        return grid

    def counts_per_label(self) -> dict[str, int]:
        counts = {label: 0 for label in POSITION_LABELS}
        for s in self.samples:
            counts[s.gold] += 1
        return counts

    def samples_hash(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update(sample_line(s).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()

    def manifest(self, images_hash: str | None = None) -> dict:
        m = {
            "name": self.name,
            "seed": self.seed,
            "version": __version__,
            "n_samples": len(self.samples),
            "counts": {
                "per_cell": self.counts_per_cell(),
                "per_label": self.counts_per_label(),
            },
            "samples_hash": self.samples_hash(),
        }
        if images_hash is not None:
            m["images_hash"] = images_hash
        m.update(self.extra)
        return m


def combine_image_hashes(id_hash_pairs: Iterable[tuple[str, str]]) -> str:
    """Order-independent digest over per-image digests (sorted by id)."""
    h = hashlib.sha256()
    for sample_id, digest in sorted(id_hash_pairs):
        h.update(f"{sample_id}:{digest}\n".encode("utf-8"))
    return h.hexdigest()


def save_dataset(
    dataset: Dataset,
    out_dir,
    images: Iterator[tuple[str, bytes]] | None = None,
) -> Path:
    """Write manifest, samples, and (optionally) a stream of (id, png bytes)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    images_hash = None
    if images is not None:
        img_dir = out / IMAGES_DIR
        img_dir.mkdir(exist_ok=True)
        pairs = []
        for sample_id, data in images:
            write_bytes_atomic(data, img_dir / f"{sample_id}.png")
            pairs.append((sample_id, hashlib.sha256(data).hexdigest()))
        images_hash = combine_image_hashes(pairs)

    lines = "".join(sample_line(s) + "\n" for s in dataset.samples)
    write_bytes_atomic(lines.encode("utf-8"), out / SAMPLES_NAME)

    manifest = dataset.manifest(images_hash)
    write_bytes_atomic(
        (json.dumps(manifest, indent=2, ensure_ascii=False) + "\n").encode("utf-8"),
        out / MANIFEST_NAME,
    )
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    samples_path = path / SAMPLES_NAME
    if not samples_path.exists():
        raise InputError(f"not a dataset directory (missing {SAMPLES_NAME}): {path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    samples = []
    with open(samples_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(VqaSample.from_json_dict(json.loads(line)))
    known = {"name", "seed", "version", "n_samples", "counts", "samples_hash", "images_hash"}
    extra = {k: v for k, v in manifest.items() if k not in known}
    return Dataset(name=manifest["name"], seed=manifest["seed"], samples=samples, extra=extra)


def largest_remainder_allocation(weights: list[int], total: int) -> list[int]:
    """Split `total` across strata proportionally to `weights`.

    Floor of each quota first, then the leftover goes to the strata with the
    largest fractional remainders (earlier strata win ties).
    """
    if total < 0:
        raise InputError(f"allocation total must be >= 0, got {total}")
    weight_sum = sum(weights)
    if weight_sum == 0:
        if total > 0:
            raise InputError("cannot allocate a positive total over empty strata")
        return [0] * len(weights)
    quotas = [w * total / weight_sum for w in weights]
    alloc = [int(q) for q in quotas]
    leftover = total - sum(alloc)
    remainders = sorted(
        range(len(weights)), key=lambda i: (-(quotas[i] - alloc[i]), i)
    )
    for i in remainders[:leftover]:
        alloc[i] += 1
    return alloc
