"""Reading dataset directories produced by the abspos toolkit."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import INSTRUCTION_PREFIX


@dataclass
class SampleRecord:
    """One line of samples.jsonl, plus resolved paths."""

    sample_id: str
    question: str
    options: list[str]
    gold: str
    image_path: Path | None

    @property
    def prompt(self) -> str:
        return f"{INSTRUCTION_PREFIX} {self.question}"

    def candidate_texts(self) -> list[str]:
        # retrieval candidates: the question followed by each option, in order
        return [f"{self.question} {label}" for label in self.options]


def load_samples(dataset_dir, limit: int | None = None) -> list[SampleRecord]:
    root = Path(dataset_dir)
    samples_path = root / "samples.jsonl"
    if not samples_path.exists():
        raise FileNotFoundError(f"not a dataset directory (no samples.jsonl): {root}")
    records = []
    with open(samples_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            image = root / d["image_path"]
            records.append(
                SampleRecord(
                    sample_id=d["id"],
                    question=d["question"],
                    options=list(d["options"]),
                    gold=d["gold"],
                    image_path=image if image.exists() else None,
                )
            )
            if limit is not None and len(records) >= limit:
                break
    return records


def existing_ids(path) -> set[str]:
    """Ids already present in a line-delimited output file (for resuming)."""
    path = Path(path)
    if not path.exists():
        return set()
    ids = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ids.add(json.loads(line)["sample_id"])
    return ids
