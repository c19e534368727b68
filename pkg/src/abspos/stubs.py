"""Stub predictors: reference inputs for exercising the scorer end to end."""

from __future__ import annotations

import json
from pathlib import Path

from .dataset import Dataset, derive_rng
from .grid import POSITION_LABELS
from .render import write_bytes_atomic


def oracle_predictions(dataset: Dataset) -> list[dict]:
    """Echo each sample's gold label."""
    return [{"sample_id": s.id, "raw_text": s.gold} for s in dataset.samples]


def constant_predictions(dataset: Dataset, label: str) -> list[dict]:
    return [{"sample_id": s.id, "raw_text": label} for s in dataset.samples]


def random_predictions(dataset: Dataset, seed: int = 0) -> list[dict]:
    """Uniform label choice from a per-sample derived stream."""
    records = []
    for s in dataset.samples:
        rng = derive_rng(seed, s.id, "stub-random")
        records.append(
            {"sample_id": s.id, "raw_text": POSITION_LABELS[int(rng.integers(9))]}
        )
    return records


def oracle_retrieval_predictions(dataset: Dataset, dim: int = 16, seed: int = 0) -> list[dict]:
    """Embeddings whose cosine argmax lands on the gold option."""
    records = []
    for s in dataset.samples:
        rng = derive_rng(seed, s.id, "stub-retrieval")
        cands = rng.normal(size=(9, dim))
        image = cands[s.options.index(s.gold)].copy()
        records.append(
            {
                "sample_id": s.id,
                "image_emb": image.tolist(),
                "candidate_embs": cands.tolist(),
            }
        )
    return records


def save_predictions(records: list[dict], path) -> Path:
    path = Path(path)
    lines = "".join(json.dumps(r) + "\n" for r in records)
    write_bytes_atomic(lines.encode("utf-8"), path)
    return path
