"""Synthetic dataset construction.

The evaluation set enumerates every (color, shape, size, cell) combination of
the colored stimuli. The training set uses disjoint attribute combinations:
the plus shape in the six colors, and the four evaluation shapes in white.
Distractor augmentation and nested scale subsets derive new datasets from
either one.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterator

from .dataset import (
    Dataset,
    VqaSample,
    derive_rng,
    largest_remainder_allocation,
    shuffled_options,
    stable_id,
)
from .errors import InputError
from .grid import (
    Cell,
    Color,
    EVAL_COLORS,
    EVAL_SHAPES,
    SIZE_BY_KIND,
    SIZES,
    Shape,
    SYNTH_GEOMETRY,
    region_of_cell,
)
from .render import SceneObject, StimulusSpec, png_bytes, render_scene

EVAL_TAG = "synth-eval"
TRAIN_TAG = "synth-train"

TRAIN_FRACTION = 0.8
DISTRACTOR_COUNTS = (1, 3, 5)
DEFAULT_FRACTIONS = (1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0)


def _object_payload(obj: SceneObject) -> dict:
    return {
        "shape": obj.shape.name,
        "color": obj.color.name,
        "size": obj.size.kind,
        "cell": [obj.cell.row, obj.cell.col],
    }


def _spec_payload(spec: StimulusSpec, tag: str) -> dict:
    return {
        "tag": tag,
        "target": _object_payload(spec.target),
        "distractors": [_object_payload(d) for d in spec.distractors],
        "geom": [spec.geom.width, spec.geom.height],
    }


def make_vqa_sample(spec: StimulusSpec, tag: str, seed: int) -> VqaSample:
    """Build the VQA record for a stimulus; options shuffle per-sample."""
    target = spec.target
    sample_id = stable_id(_spec_payload(spec, tag))
    region = region_of_cell(target.cell)
    meta = {
        "tag": tag,
        "color": target.color.name,
        "shape": target.shape.name,
        "size": target.size.kind,
        "n_distractors": len(spec.distractors),
    }
    if spec.distractors:
        meta["distractors"] = [_object_payload(d) for d in spec.distractors]
    return VqaSample(
        id=sample_id,
        image_path=f"images/{sample_id}.png",
        question=f"Where is the {target.color.name} {target.shape.name}?",
        options=shuffled_options(seed, sample_id),
        gold=region.label,
        target_cell=target.cell,
        target_region=region,
        meta=meta,
    )


def scene_of_sample(sample: VqaSample) -> StimulusSpec:
    """Reconstruct the stimulus from a synthetic sample's stored attributes."""
    meta = sample.meta
    if meta.get("shape") is None:
        raise InputError(f"sample {sample.id} is not a synthetic stimulus")
    target = SceneObject(
        shape=Shape[meta["shape"]],
        color=Color[meta["color"]],
        size=SIZE_BY_KIND[meta["size"]],
        cell=sample.target_cell,
    )
    distractors = tuple(
        SceneObject(
            shape=Shape[d["shape"]],
            color=Color[d["color"]],
            size=SIZE_BY_KIND[d["size"]],
            cell=Cell(d["cell"][0], d["cell"][1]),
        )
        for d in meta.get("distractors", [])
    )
    return StimulusSpec(target=target, distractors=distractors, geom=SYNTH_GEOMETRY)


def iter_images(dataset: Dataset) -> Iterator[tuple[str, bytes]]:
    """Lazily render every sample's stimulus to PNG bytes."""
    for sample in dataset.samples:
        yield sample.id, png_bytes(render_scene(scene_of_sample(sample)))


def _all_cells() -> list[Cell]:
    return [Cell(r, c) for r in range(9) for c in range(9)]


def build_eval_set(seed: int = 0) -> Dataset:
    """Exhaustive evaluation set: 6 colors x 4 shapes x 2 sizes x 81 cells."""
    samples = []
    for color in EVAL_COLORS:
        for shape in EVAL_SHAPES:
            for size in SIZES:
                for cell in _all_cells():
                    spec = StimulusSpec(SceneObject(shape, color, size, cell))
                    samples.append(make_vqa_sample(spec, EVAL_TAG, seed))
    return Dataset(name=EVAL_TAG, seed=seed, samples=samples)


def build_train_set(seed: int = 0) -> tuple[Dataset, Dataset]:
    """Training stimuli (colored plusses + white shapes), split 80/20 per cell.

    Each cell holds 20 stimuli (12 plus, 8 white); 16 go to train and 4 to
    validation, chosen by a per-cell derived stream so the split is stratified
    and order-independent.
    """
    samples = []
    for color in EVAL_COLORS:
        for size in SIZES:
            for cell in _all_cells():
                spec = StimulusSpec(SceneObject(Shape.plus, color, size, cell))
                samples.append(make_vqa_sample(spec, TRAIN_TAG, seed))
    for shape in EVAL_SHAPES:
        for size in SIZES:
            for cell in _all_cells():
                spec = StimulusSpec(SceneObject(shape, Color.white, size, cell))
                samples.append(make_vqa_sample(spec, TRAIN_TAG, seed))

    by_cell: dict[Cell, list[VqaSample]] = {}
    for s in samples:
        by_cell.setdefault(s.target_cell, []).append(s)

    train_ids = set()
    for cell in _all_cells():
        group = by_cell[cell]
        n_train = round(len(group) * TRAIN_FRACTION)
        rng = derive_rng(seed, "train-split", cell.row, cell.col)
        order = rng.permutation(len(group))
        train_ids.update(group[i].id for i in order[:n_train])

    train = [s for s in samples if s.id in train_ids]
    val = [s for s in samples if s.id not in train_ids]
    return (
        Dataset(name=TRAIN_TAG, seed=seed, samples=train),
        Dataset(name=f"{TRAIN_TAG}-val", seed=seed, samples=val),
    )


def _distractor_attributes(
    target: SceneObject, rng, include_plus: bool
) -> tuple[Shape, Color]:
    """Attribute rule: distractors must differ from the target.

    White targets keep white and vary shape; colored plus targets keep the
    plus shape and vary color; colored evaluation targets vary within the
    evaluation palette, excluding the exact (color, shape) pair.
    """
    if target.color is Color.white:
        palette = [s for s in EVAL_SHAPES if s is not target.shape]
        if include_plus:
            palette.append(Shape.plus)
        return palette[int(rng.integers(len(palette)))], Color.white
    if target.shape is Shape.plus:
        palette = [c for c in EVAL_COLORS if c is not target.color]
        return Shape.plus, palette[int(rng.integers(len(palette)))]
    pairs = [
        (s, c)
        for c in EVAL_COLORS
        for s in EVAL_SHAPES
        if not (s is target.shape and c is target.color)
    ]
    return pairs[int(rng.integers(len(pairs)))]


def add_distractors(
    dataset: Dataset,
    k: int,
    seed: int = 0,
    allow_any_k: bool = False,
    include_plus: bool = False,
) -> Dataset:
    """Augment every sample with k distractors in distinct non-target cells."""
    if k == 0:
        return dataset
    if k not in DISTRACTOR_COUNTS and not allow_any_k:
        raise InputError(f"distractor count must be one of {DISTRACTOR_COUNTS}, got {k}")
    if k < 0 or k + 1 > 81:
        raise InputError(f"cannot place {k} distractors on an 81-cell grid")

    tag = f"{dataset.name}+{k}d"
    augmented = []
    for sample in dataset.samples:
        scene = scene_of_sample(sample)
        target = scene.target
        rng = derive_rng(seed, sample.id, "distractors")
        candidates = [c for c in _all_cells() if c != target.cell]
        picks = rng.choice(len(candidates), size=k, replace=False)
        distractors = []
        for idx in picks:
            shape, color = _distractor_attributes(target, rng, include_plus)
            distractors.append(SceneObject(shape, color, target.size, candidates[int(idx)]))
        new_spec = replace(scene, distractors=tuple(distractors))
        augmented.append(make_vqa_sample(new_spec, tag, seed))
    return Dataset(name=tag, seed=seed, samples=augmented, extra={"distractors": k})


def scale_subsets(
    dataset: Dataset,
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> list[Dataset]:
    """Nested stratified-by-cell subsets, one per percentage.

    Each cell's samples are shuffled once with a derived stream; a subset
    takes a per-cell prefix whose length comes from a largest-remainder
    allocation, so smaller subsets are contained in larger ones.
    """
    for f in fractions:
        if not (0 < f <= 100):
            raise InputError(f"fractions must lie in (0, 100], got {f}")

    cells = _all_cells()
    by_cell: dict[Cell, list[VqaSample]] = {c: [] for c in cells}
    for s in dataset.samples:
        by_cell[s.target_cell].append(s)
    orders = {}
    for cell in cells:
        rng = derive_rng(seed, "scale", cell.row, cell.col)
        orders[cell] = [by_cell[cell][i] for i in rng.permutation(len(by_cell[cell]))]
    weights = [len(by_cell[c]) for c in cells]
    total = len(dataset.samples)

    # Allocations are computed per fraction and made monotone across the
    # ascending ladder so prefix selection always nests.
    ascending = sorted(set(fractions))
    alloc_by_fraction: dict[float, list[int]] = {}
    prev = [0] * len(cells)
    for f in ascending:
        n_target = int(total * f / 100 + 0.5)
        if n_target == 0:
            raise InputError(f"fraction {f}% of {total} samples selects nothing")
        alloc = largest_remainder_allocation(weights, n_target)
        alloc = [max(a, p) for a, p in zip(alloc, prev)]
        alloc_by_fraction[f] = alloc
        prev = alloc

    subsets = []
    for f in fractions:
        alloc = alloc_by_fraction[f]
        chosen_ids = set()
        for cell, take in zip(cells, alloc):
            chosen_ids.update(s.id for s in orders[cell][:take])
        samples = [s for s in dataset.samples if s.id in chosen_ids]
        subsets.append(
            Dataset(
                name=f"{dataset.name}@{f:g}pct",
                seed=seed,
                samples=samples,
                extra={"fraction": f, "parent": dataset.name},
            )
        )
    return subsets
