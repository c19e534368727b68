"""Scoring of model outputs: answer parsing, accuracy maps, retrieval mode.

A raw text answer is valid only if it contains exactly one position label.
"center" is a substring of four compound labels, so compound labels are
matched first and their tokens masked before standalone "center" tokens are
counted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, VqaSample
from .errors import InputError
from .grid import LABEL_INDEX, POSITION_LABELS
from .render import write_bytes_atomic

INVALID = "invalid"
NO_DATA = "no-data"

_COMPOUND_LABELS = {
    tuple(label.split()): label for label in POSITION_LABELS if label != "center"
}

_NORMALIZE_RE = re.compile(r"[^a-z0-9]+")


def parse_answer(raw_text: str) -> tuple[str | None, bool]:
    """Extract the single position label from a model's raw output.

    Normalization lowercases and turns punctuation into spaces. Two-word
    labels are matched greedily left to right with their tokens masked;
    remaining standalone "center" tokens count as the bare label. The answer
    is valid iff exactly one label occurrence is found.
    """
    text = _NORMALIZE_RE.sub(" ", raw_text.lower())
    tokens = text.split()
    consumed = [False] * len(tokens)

    found: list[str] = []
    i = 0
    while i < len(tokens) - 1:
        pair = (tokens[i], tokens[i + 1])
        if pair in _COMPOUND_LABELS:
            found.append(_COMPOUND_LABELS[pair])
            consumed[i] = consumed[i + 1] = True
            i += 2
        else:
            i += 1
    for i, token in enumerate(tokens):
        if token == "center" and not consumed[i]:
            found.append("center")

    if len(found) == 1:
        return found[0], True
    return None, False


@dataclass
class Prediction:
    """A model's answer for one sample: raw text, or retrieval embeddings."""

    sample_id: str
    raw_text: str | None = None
    image_emb: np.ndarray | None = None
    candidate_embs: np.ndarray | None = None

    def __post_init__(self):
        has_text = self.raw_text is not None
        has_emb = self.image_emb is not None or self.candidate_embs is not None
        if has_text and has_emb:
            raise InputError(f"prediction {self.sample_id} mixes text and embeddings")
        if has_emb and (self.image_emb is None or self.candidate_embs is None):
            raise InputError(f"prediction {self.sample_id} misses one embedding side")


def load_predictions(path, retrieval: bool = False) -> list[Prediction]:
    """Read line-delimited prediction records."""
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f"{path}:{lineno}: malformed prediction record: {e.msg}")
            if "sample_id" not in rec:
                raise InputError(f"{path}:{lineno}: prediction record lacks sample_id")
            if retrieval:
                if "image_emb" not in rec or "candidate_embs" not in rec:
                    raise InputError(
                        f"{path}:{lineno}: retrieval record needs image_emb and candidate_embs"
                    )
                preds.append(
                    Prediction(
                        sample_id=rec["sample_id"],
                        image_emb=np.asarray(rec["image_emb"], dtype=np.float64),
                        candidate_embs=np.asarray(rec["candidate_embs"], dtype=np.float64),
                    )
                )
            else:
                preds.append(Prediction(sample_id=rec["sample_id"], raw_text=rec.get("raw_text", "")))
    return preds


def build_retrieval_candidates(sample: VqaSample) -> list[str]:
    """Nine retrieval texts: the question followed by each option, in order."""
    return [f"{sample.question} {label}" for label in sample.options]


def retrieval_select(image_emb: np.ndarray, candidate_embs: np.ndarray) -> int:
    """Index of the candidate with highest cosine similarity (ties: lowest)."""
    image_emb = np.asarray(image_emb, dtype=np.float64)
    candidate_embs = np.asarray(candidate_embs, dtype=np.float64)
    if candidate_embs.ndim != 2 or candidate_embs.shape[1] != image_emb.shape[0]:
        raise InputError(
            f"candidate shape {candidate_embs.shape} incompatible with image dim {image_emb.shape}"
        )
    img_norm = np.linalg.norm(image_emb)
    cand_norms = np.linalg.norm(candidate_embs, axis=1)
    if img_norm == 0 or (cand_norms == 0).any():
        raise InputError("zero-norm embedding")
    sims = candidate_embs @ image_emb / (cand_norms * img_norm)
    return int(np.argmax(sims))


def _resolve_label(pred: Prediction | None, sample: VqaSample) -> tuple[str | None, bool]:
    if pred is None:
        return None, False
    if pred.raw_text is not None:
        return parse_answer(pred.raw_text)
    if pred.candidate_embs.shape[0] != len(sample.options):
        raise InputError(f"prediction {pred.sample_id} has {pred.candidate_embs.shape[0]} candidates")
    idx = retrieval_select(pred.image_emb, pred.candidate_embs)
    return sample.options[idx], True


@dataclass
class EvalReport:
    overall_accuracy: float
    valid_rate: float
    per_label_accuracy: dict[str, float]
    per_label_support: dict[str, int]
    cell_accuracy: list[list[float]]
    cell_support: list[list[int]]
    region_accuracy: list[list[float]]
    region_support: list[list[int]]
    cell_majority: list[list[str]]
    region_majority: list[list[str]]
    n: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "valid_rate": self.valid_rate,
            "per_label_accuracy": self.per_label_accuracy,
            "per_label_support": self.per_label_support,
            "cell_accuracy": self.cell_accuracy,
            "cell_support": self.cell_support,
            "region_accuracy": self.region_accuracy,
            "region_support": self.region_support,
            "cell_majority": self.cell_majority,
            "region_majority": self.region_majority,
            "n": self.n,
        }


def _index_predictions(dataset: Dataset, preds: list[Prediction]) -> dict[str, Prediction]:
    known = {s.id for s in dataset.samples}
    by_id: dict[str, Prediction] = {}
    for p in preds:
        if p.sample_id not in known:
            raise InputError(f"prediction for unknown sample id {p.sample_id!r}")
        if p.sample_id in by_id:
            raise InputError(f"duplicate prediction for sample id {p.sample_id!r}")
        by_id[p.sample_id] = p
    return by_id


def _majority(counts: dict[str, int]) -> str:
    """Modal label; canonical order breaks ties, invalid loses all ties."""
    if not counts:
        return NO_DATA
    rank = dict(LABEL_INDEX)
    rank[INVALID] = len(POSITION_LABELS)
    return min(counts, key=lambda lab: (-counts[lab], rank[lab]))


def score(dataset: Dataset, preds: list[Prediction]) -> EvalReport:
    """Score predictions against a dataset; missing predictions are invalid."""
    by_id = _index_predictions(dataset, preds)

    cell_correct = np.zeros((9, 9), dtype=np.int64)
    cell_total = np.zeros((9, 9), dtype=np.int64)
    region_correct = np.zeros((3, 3), dtype=np.int64)
    region_total = np.zeros((3, 3), dtype=np.int64)
    label_correct = {label: 0 for label in POSITION_LABELS}
    label_total = {label: 0 for label in POSITION_LABELS}
    cell_votes: dict[tuple[int, int], dict[str, int]] = {}
    region_votes: dict[tuple[int, int], dict[str, int]] = {}

    n_valid = 0
    n_correct = 0
    n_missing = 0
    for sample in dataset.samples:
        pred = by_id.get(sample.id)
        if pred is None:
            n_missing += 1
        label, valid = _resolve_label(pred, sample)
        correct = valid and label == sample.gold
        n_valid += int(valid)
        n_correct += int(correct)

        c = sample.target_cell
        r = sample.target_region
        cell_total[c.row, c.col] += 1
        region_total[r.row, r.col] += 1
        label_total[sample.gold] += 1
        if correct:
            cell_correct[c.row, c.col] += 1
            region_correct[r.row, r.col] += 1
            label_correct[sample.gold] += 1

        vote = label if valid else INVALID
        cell_votes.setdefault((c.row, c.col), {}).setdefault(vote, 0)
        cell_votes[(c.row, c.col)][vote] += 1
        region_votes.setdefault((r.row, r.col), {}).setdefault(vote, 0)
        region_votes[(r.row, r.col)][vote] += 1

    total = len(dataset.samples)
    if total == 0:
        raise InputError("cannot score an empty dataset")

    with np.errstate(invalid="ignore"):
        cell_acc = np.where(cell_total > 0, cell_correct / np.maximum(cell_total, 1), 0.0)
        region_acc = np.where(region_total > 0, region_correct / np.maximum(region_total, 1), 0.0)

    return EvalReport(
        overall_accuracy=n_correct / total,
        valid_rate=n_valid / total,
        per_label_accuracy={
            lab: (label_correct[lab] / label_total[lab] if label_total[lab] else 0.0)
            for lab in POSITION_LABELS
        },
        per_label_support=dict(label_total),
        cell_accuracy=cell_acc.tolist(),
        cell_support=cell_total.tolist(),
        region_accuracy=region_acc.tolist(),
        region_support=region_total.tolist(),
        cell_majority=[
            [_majority(cell_votes.get((r, c), {})) for c in range(9)] for r in range(9)
        ],
        region_majority=[
            [_majority(region_votes.get((r, c), {})) for c in range(3)] for r in range(3)
        ],
        n={
            "samples": total,
            "predictions": len(by_id),
            "missing": n_missing,
            "valid": n_valid,
            "invalid": total - n_valid,
            "correct": n_correct,
        },
    )


def majority_vote_maps(
    dataset: Dataset, preds: list[Prediction]
) -> tuple[list[list[str]], list[list[str]]]:
    report = score(dataset, preds)
    return report.cell_majority, report.region_majority


# Color coding for the 3x3 majority map image: one saturated color per label,
# gray for invalid, black for no-data.
LABEL_PALETTE = {
    "top left": (255, 0, 0),
    "top center": (255, 128, 0),
    "top right": (255, 255, 0),
    "center left": (0, 255, 0),
    "center": (0, 255, 255),
    "center right": (0, 128, 255),
    "bottom left": (0, 0, 255),
    "bottom center": (128, 0, 255),
    "bottom right": (255, 0, 255),
    INVALID: (128, 128, 128),
    NO_DATA: (0, 0, 0),
}


def _csv_bytes(rows: list[list]) -> bytes:
    return ("\n".join(",".join(str(v) for v in row) for row in rows) + "\n").encode("utf-8")


def emit_reports(report: EvalReport, out_dir) -> None:
    """Write report.json plus CSV/PGM/PPM data artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_bytes_atomic(
        (json.dumps(report.to_json_dict(), indent=2) + "\n").encode("utf-8"),
        out / "report.json",
    )
    write_bytes_atomic(
        _csv_bytes([[f"{v:.6f}" for v in row] for row in report.cell_accuracy]),
        out / "cell_accuracy.csv",
    )
    write_bytes_atomic(_csv_bytes(report.cell_majority), out / "cell_majority.csv")

    heat = bytes(
        int(round(v * 255)) for row in report.cell_accuracy for v in row
    )
    write_bytes_atomic(b"P5\n9 9\n255\n" + heat, out / "heatmap.pgm")

    rgb = bytearray()
    for row in report.region_majority:
        for label in row:
            rgb.extend(LABEL_PALETTE[label])
    write_bytes_atomic(b"P6\n3 3\n255\n" + bytes(rgb), out / "region_majority.ppm")
