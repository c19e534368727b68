import json
from collections import Counter

import pytest

from abspos.coco import (
    balanced_subset,
    build_coco_set,
    ingest_annotations,
    split_train_val,
)
from abspos.dataset import Dataset, VqaSample
from abspos.errors import AnnotationParseError, InputError
from abspos.grid import Cell, ImageGeometry, POSITION_LABELS, Region, region_of_point


def write_annotations(tmp_path, images, annotations, categories=None):
    if categories is None:
        cat_ids = sorted({a["category_id"] for a in annotations})
        categories = [{"id": i, "name": f"cat{i}"} for i in cat_ids]
    path = tmp_path / "instances.json"
    path.write_text(
        json.dumps({"images": images, "annotations": annotations, "categories": categories})
    )
    return path


BASIC_CATEGORIES = [{"id": 1, "name": "person"}, {"id": 2, "name": "dog"}]


def test_ingest_minimal_fixture(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[
            {"id": 1, "file_name": "a.jpg", "width": 640, "height": 480},
            {"id": 2, "file_name": "b.jpg", "width": 300, "height": 300},
        ],
        annotations=[
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
            {"id": 11, "image_id": 1, "category_id": 2, "bbox": [50, 50, 20, 20]},
            {"id": 12, "image_id": 2, "category_id": 1, "bbox": [100, 100, 30, 30]},
        ],
        categories=BASIC_CATEGORIES,
    )
    idx = ingest_annotations(path)
    assert idx.n_images == 2
    assert idx.n_instances == 3
    assert idx.n_categories == 2
    assert all(v == 0 for v in idx.warnings.values())


def test_ingest_unknown_image_counts_warning(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[{"id": 1, "file_name": "a.jpg", "width": 100, "height": 100}],
        annotations=[
            {"id": 10, "image_id": 999, "category_id": 1, "bbox": [0, 0, 5, 5]},
        ],
        categories=BASIC_CATEGORIES,
    )
    idx = ingest_annotations(path)
    assert idx.warnings["unknown_image"] == 1
    assert idx.n_instances == 0


def test_ingest_missing_dims_skips_image(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[
            {"id": 1, "file_name": "a.jpg", "width": 100, "height": 100},
            {"id": 2, "file_name": "b.jpg"},
        ],
        annotations=[],
        categories=BASIC_CATEGORIES,
    )
    idx = ingest_annotations(path)
    assert idx.n_images == 1
    assert idx.warnings["missing_dims"] == 1


def test_ingest_clamps_out_of_bounds_bbox(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[{"id": 1, "file_name": "a.jpg", "width": 100, "height": 100}],
        annotations=[
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [90, 90, 30, 30]},
        ],
        categories=BASIC_CATEGORIES,
    )
    idx = ingest_annotations(path)
    assert idx.warnings["clamped_bbox"] == 1
    (inst,) = idx.instances[1]
    assert inst.bbox == (90, 90, 10, 10)


def test_ingest_malformed_reports_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"images": [}')
    with pytest.raises(AnnotationParseError) as err:
        ingest_annotations(path)
    assert err.value.byte_offset == 12
    assert "byte 12" in str(err.value)


def test_ingest_rejects_non_coco_json(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"foo": 1}')
    with pytest.raises(AnnotationParseError):
        ingest_annotations(path)


def test_single_instance_rule(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[{"id": 1, "file_name": "a.jpg", "width": 300, "height": 300}],
        annotations=[
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 50, 50]},
            {"id": 11, "image_id": 1, "category_id": 1, "bbox": [200, 200, 50, 50]},
            {"id": 12, "image_id": 1, "category_id": 2, "bbox": [0, 0, 10, 10]},
        ],
        categories=BASIC_CATEGORIES,
    )
    ds = build_coco_set(ingest_annotations(path))
    assert len(ds) == 1
    (sample,) = ds.samples
    assert sample.category == "dog"
    assert sample.question == "Where is the dog?"
    assert sample.gold == "top left"  # bbox (0,0,10,10) center (5,5)


def test_crowd_counts_toward_single_instance(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[{"id": 1, "file_name": "a.jpg", "width": 300, "height": 300}],
        annotations=[
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 50, 50]},
            {"id": 11, "image_id": 1, "category_id": 1, "bbox": [100, 100, 80, 80], "iscrowd": 1},
        ],
        categories=BASIC_CATEGORIES,
    )
    ds = build_coco_set(ingest_annotations(path))
    assert len(ds) == 0


def test_gold_recomputes_from_bbox_center(tmp_path):
    images = []
    annotations = []
    for i in range(12):
        images.append({"id": i, "file_name": f"{i}.jpg", "width": 640, "height": 360})
        annotations.append(
            {
                "id": 100 + i,
                "image_id": i,
                "category_id": 1 + i % 2,
                "bbox": [floor := (i * 47) % 500, (i * 91) % 300, 40, 30],
            }
        )
    path = write_annotations(tmp_path, images, annotations, BASIC_CATEGORIES)
    ds = build_coco_set(ingest_annotations(path))
    assert len(ds) == 12
    for s in ds.samples:
        x, y, w, h = s.bbox
        geom = ImageGeometry(640, 360)
        assert region_of_point(x + w / 2, y + h / 2, geom).label == s.gold


def test_options_are_valid_permutations(tmp_path):
    path = write_annotations(
        tmp_path,
        images=[{"id": 1, "file_name": "a.jpg", "width": 300, "height": 300}],
        annotations=[{"id": 10, "image_id": 1, "category_id": 1, "bbox": [10, 10, 30, 30]}],
        categories=BASIC_CATEGORIES,
    )
    ds = build_coco_set(ingest_annotations(path), seed=0)
    (sample,) = ds.samples
    assert sorted(sample.options) == sorted(POSITION_LABELS)
    again = build_coco_set(ingest_annotations(path), seed=0)
    assert again.samples[0].options == sample.options


def make_split_fixture(tmp_path):
    images = []
    annotations = []
    ann_id = 0
    for i in range(10):
        images.append({"id": i, "file_name": f"{i}.jpg", "width": 400, "height": 400})
        for j in range(2):  # two single-instance categories per image
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": i,
                    "category_id": 1 + j,
                    "bbox": [10 + 30 * j, 10 + 20 * i, 20, 20],
                }
            )
            ann_id += 1
    return write_annotations(tmp_path, images, annotations, BASIC_CATEGORIES)


def test_split_is_image_disjoint(tmp_path):
    ds = build_coco_set(ingest_annotations(make_split_fixture(tmp_path)))
    assert len(ds) == 20
    train, val = split_train_val(ds, seed=0)
    train_imgs = {s.meta["image_id"] for s in train.samples}
    val_imgs = {s.meta["image_id"] for s in val.samples}
    assert train_imgs & val_imgs == set()
    assert len(train) + len(val) == 20
    assert len(train) == 16  # 80% exactly here: 2 questions per image


def test_split_deterministic(tmp_path):
    ds = build_coco_set(ingest_annotations(make_split_fixture(tmp_path)))
    a_train, _ = split_train_val(ds, seed=5)
    b_train, _ = split_train_val(ds, seed=5)
    assert [s.id for s in a_train.samples] == [s.id for s in b_train.samples]
    c_train, _ = split_train_val(ds, seed=6)
    assert {s.id for s in a_train.samples} != {s.id for s in c_train.samples}


def region_sample(region_idx: int, category: str, i: int) -> VqaSample:
    region = Region(region_idx // 3, region_idx % 3)
    return VqaSample(
        id=f"r{region_idx}-{category}-{i:03d}",
        image_path=f"{category}/{i}.jpg",
        question=f"Where is the {category}?",
        options=list(POSITION_LABELS),
        gold=region.label,
        target_cell=Cell(region.row * 3 + 1, region.col * 3 + 1),
        target_region=region,
        meta={"tag": "coco", "color": None, "shape": None, "size": None,
              "n_distractors": 0, "image_id": f"{region_idx}-{category}-{i}"},
        category=category,
        bbox=(0.0, 0.0, 1.0, 1.0),
        source_split="train",
    )


def ample_fixture(categories=12, per_cat=20):
    samples = []
    for region_idx in range(9):
        for c in range(categories):
            for i in range(per_cat):
                samples.append(region_sample(region_idx, f"cat{c:02d}", i))
    return Dataset("fixture", 0, samples)


def oracle_balanced_selection(dataset: Dataset, n: int) -> set[str]:
    """Independent reimplementation of the documented selection rule."""
    per_region_quota = n // 9
    leftover = n - 9 * per_region_quota
    chosen = set()
    for region_idx in range(9):
        quota = per_region_quota + (1 if region_idx < leftover else 0)
        pool = [s for s in dataset.samples
                if s.target_region.row * 3 + s.target_region.col == region_idx]
        groups = {}
        for s in pool:
            groups.setdefault(s.category, []).append(s)
        for g in groups.values():
            g.sort(key=lambda s: s.id)
        order = sorted(groups, key=lambda c: (len(groups[c]), c))
        taken = 0
        while taken < quota:
            advanced = False
            for cat in order:
                if taken >= quota:
                    break
                if groups[cat]:
                    chosen.add(groups[cat].pop(0).id)
                    taken += 1
                    advanced = True
            if not advanced:
                break
    return chosen


def test_balanced_subset_matches_oracle():
    ds = ample_fixture()
    subset = balanced_subset(ds, n=1296, seed=0)
    assert len(subset) == 1296
    counts = Counter(s.target_region for s in subset.samples)
    assert set(counts.values()) == {144}
    assert {s.id for s in subset.samples} == oracle_balanced_selection(ds, 1296)


def test_balanced_subset_maximal_category_spread():
    ds = ample_fixture(categories=12, per_cat=20)
    subset = balanced_subset(ds, n=1296, seed=0)
    for region_idx in range(9):
        cats = Counter(
            s.category for s in subset.samples
            if s.target_region.row * 3 + s.target_region.col == region_idx
        )
        assert len(cats) == 12  # every category included
        assert set(cats.values()) == {12}  # 144 slots / 12 categories


def test_balanced_subset_scarce_categories_first():
    samples = []
    for region_idx in range(9):
        samples.extend(region_sample(region_idx, "rare", i) for i in range(1))
        samples.extend(region_sample(region_idx, "common", i) for i in range(30))
    ds = Dataset("skewed", 0, samples)
    subset = balanced_subset(ds, n=18, seed=0)
    per_region = Counter(
        (s.target_region, s.category) for s in subset.samples
    )
    for region_idx in range(9):
        region = Region(region_idx // 3, region_idx % 3)
        assert per_region[(region, "rare")] == 1
        assert per_region[(region, "common")] == 1


def test_balanced_subset_tiny():
    ds = ample_fixture(categories=2, per_cat=1)
    subset = balanced_subset(ds, n=9, seed=0)
    counts = Counter(s.target_region for s in subset.samples)
    assert set(counts.values()) == {1}


def test_balanced_subset_reports_deficit():
    samples = [region_sample(i, "cat", j) for i in range(9) for j in range(2)]
    samples = [s for s in samples if s.target_region != Region(0, 0)]
    ds = Dataset("short", 0, samples)
    subset = balanced_subset(ds, n=9, seed=0)
    assert subset.extra["deficit"] == {"top left": 1}
    assert len(subset) == 8


def test_balanced_subset_rejects_oversize():
    ds = ample_fixture(categories=1, per_cat=1)
    with pytest.raises(InputError):
        balanced_subset(ds, n=100, seed=0)


def test_single_instance_recount_invariant(tmp_path):
    path = make_split_fixture(tmp_path)
    idx = ingest_annotations(path)
    ds = build_coco_set(idx)
    for s in ds.samples:
        image_id = s.meta["image_id"]
        count = sum(1 for inst in idx.instances[image_id] if inst.category == s.category)
        assert count == 1
