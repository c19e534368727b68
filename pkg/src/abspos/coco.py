"""COCO-derived absolute-position datasets.

Reads standard COCO instances annotations and emits one question per
(image, category) pair where the category occurs exactly once in the image.
The answer region is the bounding-box center mapped on the native image
dimensions; non-square aspect ratios are kept as-is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import (
    Dataset,
    VqaSample,
    derive_rng,
    largest_remainder_allocation,
    shuffled_options,
    stable_id,
)
from .errors import AnnotationParseError, InputError
from .grid import ImageGeometry, Region, cell_of_point, region_of_point

COCO_TAG = "coco"


@dataclass
class ImageInfo:
    file_name: str
    width: int
    height: int


@dataclass
class Instance:
    category: str
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    iscrowd: bool = False


@dataclass
class AnnotationIndex:
    images: dict[int, ImageInfo] = field(default_factory=dict)
    instances: dict[int, list[Instance]] = field(default_factory=dict)
    categories: dict[int, str] = field(default_factory=dict)
    warnings: dict[str, int] = field(
        default_factory=lambda: {
            "unknown_image": 0,
            "unknown_category": 0,
            "missing_dims": 0,
            "clamped_bbox": 0,
        }
    )

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_instances(self) -> int:
        return sum(len(v) for v in self.instances.values())

    @property
    def n_categories(self) -> int:
        return len(self.categories)


def _clamp_bbox(bbox, width, height) -> tuple[tuple[float, float, float, float], bool]:
    x, y, w, h = bbox
    cx = min(max(x, 0.0), width)
    cy = min(max(y, 0.0), height)
    cw = min(max(w, 0.0), width - cx)
    ch = min(max(h, 0.0), height - cy)
    clamped = (cx, cy, cw, ch) != (x, y, w, h)
    return (cx, cy, cw, ch), clamped


def ingest_annotations(path) -> AnnotationIndex:
    """Parse a COCO instances file into an index keyed by image id."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise AnnotationParseError(f"malformed annotation file {path}: {e.msg}", e.pos)
    if not isinstance(data, dict) or "images" not in data or "annotations" not in data:
        raise AnnotationParseError(f"{path} is not a COCO instances file")

    idx = AnnotationIndex()
    for cat in data.get("categories", []):
        idx.categories[cat["id"]] = cat["name"]
    for img in data["images"]:
        if img.get("width") is None or img.get("height") is None:
            idx.warnings["missing_dims"] += 1
            continue
        idx.images[img["id"]] = ImageInfo(
            file_name=img.get("file_name", f"{img['id']}.jpg"),
            width=int(img["width"]),
            height=int(img["height"]),
        )
        idx.instances.setdefault(img["id"], [])
    for ann in data["annotations"]:
        image_id = ann["image_id"]
        info = idx.images.get(image_id)
        if info is None:
            idx.warnings["unknown_image"] += 1
            continue
        category = idx.categories.get(ann["category_id"])
        if category is None:
            idx.warnings["unknown_category"] += 1
            continue
        bbox, clamped = _clamp_bbox(tuple(ann["bbox"]), info.width, info.height)
        if clamped:
            idx.warnings["clamped_bbox"] += 1
        idx.instances[image_id].append(
            Instance(category=category, bbox=bbox, iscrowd=bool(ann.get("iscrowd", 0)))
        )
    return idx


def build_coco_set(
    idx: AnnotationIndex,
    seed: int = 0,
    tag: str = COCO_TAG,
    source_split: str | None = None,
) -> Dataset:
    """One question per single-instance category.

    Crowd-flagged annotations count toward the per-category tally, so a
    category with one plain instance plus a crowd region yields no sample.
    """
    samples = []
    for image_id in sorted(idx.instances):
        info = idx.images[image_id]
        geom = ImageGeometry(info.width, info.height)
        tally: dict[str, list[Instance]] = {}
        for inst in idx.instances[image_id]:
            tally.setdefault(inst.category, []).append(inst)
        for category in sorted(tally):
            group = tally[category]
            if len(group) != 1:
                continue
            inst = group[0]
            x, y, w, h = inst.bbox
            cx, cy = x + w / 2.0, y + h / 2.0
            region = region_of_point(cx, cy, geom)
            cell = cell_of_point(cx, cy, geom)
            sample_id = stable_id(
                {
                    "tag": tag,
                    "image_id": image_id,
                    "file_name": info.file_name,
                    "category": category,
                    "bbox": list(inst.bbox),
                }
            )
            samples.append(
                VqaSample(
                    id=sample_id,
                    image_path=info.file_name,
                    question=f"Where is the {category}?",
                    options=shuffled_options(seed, sample_id),
                    gold=region.label,
                    target_cell=cell,
                    target_region=region,
                    meta={
                        "tag": tag,
                        "color": None,
                        "shape": None,
                        "size": None,
                        "n_distractors": 0,
                        "image_id": image_id,
                    },
                    category=category,
                    bbox=inst.bbox,
                    source_split=source_split,
                )
            )
    return Dataset(name=tag, seed=seed, samples=samples)


def split_train_val(
    dataset: Dataset, seed: int = 0, train_fraction: float = 0.8
) -> tuple[Dataset, Dataset]:
    """Image-disjoint split: all questions of an image land on one side."""
    if not (0 < train_fraction < 1):
        raise InputError(f"train fraction must be in (0, 1), got {train_fraction}")
    by_image: dict[object, list[VqaSample]] = {}
    for s in dataset.samples:
        by_image.setdefault(s.meta.get("image_id", s.image_path), []).append(s)
    image_keys = sorted(by_image, key=str)
    rng = derive_rng(seed, "coco-split")
    order = [image_keys[i] for i in rng.permutation(len(image_keys))]

    target = round(len(dataset.samples) * train_fraction)
    train_keys = set()
    count = 0
    for key in order:
        if count >= target:
            break
        train_keys.add(key)
        count += len(by_image[key])

    train = [s for s in dataset.samples if s.meta.get("image_id", s.image_path) in train_keys]
    val = [s for s in dataset.samples if s.meta.get("image_id", s.image_path) not in train_keys]
    return (
        Dataset(name=f"{dataset.name}-train", seed=seed, samples=train, extra=dataset.extra),
        Dataset(name=f"{dataset.name}-val", seed=seed, samples=val, extra=dataset.extra),
    )


def balanced_subset(dataset: Dataset, n: int = 1296, seed: int = 0) -> Dataset:
    """Region- and category-balanced selection of exactly n samples.

    Each region receives n/9 slots (largest remainder if n is not divisible).
    Within a region, categories are visited round-robin in order of ascending
    availability then name, taking one sample per visit (samples in id order),
    which maximizes the number of distinct categories included. A region with
    too little supply contributes what it has; the deficit is recorded.
    """
    if n > len(dataset.samples):
        raise InputError(f"subset size {n} exceeds dataset size {len(dataset.samples)}")
    if n <= 0:
        raise InputError(f"subset size must be positive, got {n}")

    by_region: dict[int, list[VqaSample]] = {i: [] for i in range(9)}
    for s in dataset.samples:
        by_region[s.target_region.row * 3 + s.target_region.col].append(s)

    quotas = largest_remainder_allocation([1] * 9, n)
    chosen: list[VqaSample] = []
    deficits = {}
    for region_idx in range(9):
        quota = quotas[region_idx]
        pool = by_region[region_idx]
        by_category: dict[str, list[VqaSample]] = {}
        for s in pool:
            key = s.category if s.category is not None else s.meta.get("shape") or "object"
            by_category.setdefault(key, []).append(s)
        for group in by_category.values():
            group.sort(key=lambda s: s.id)
        order = sorted(by_category, key=lambda c: (len(by_category[c]), c))

        taken = 0
        cursor = {c: 0 for c in order}
        while taken < quota:
            progressed = False
            for category in order:
                if taken >= quota:
                    break
                pos = cursor[category]
                if pos < len(by_category[category]):
                    chosen.append(by_category[category][pos])
                    cursor[category] = pos + 1
                    taken += 1
                    progressed = True
            if not progressed:
                break
        if taken < quota:
            deficits[Region(region_idx // 3, region_idx % 3).label] = quota - taken

    extra = {"requested": n, "per_region_quota": quotas}
    if deficits:
        extra["deficit"] = deficits
    return Dataset(name=f"{dataset.name}-balanced{n}", seed=seed, samples=chosen, extra=extra)
