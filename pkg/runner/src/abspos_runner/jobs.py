"""Runner jobs: generation, retrieval embeddings, hidden-state dumps.

Output files are line-delimited JSON (or HSD1 binaries) in exactly the
shapes the abspos toolkit reads. Generation and embedding runs are
resumable: ids already present in the output file are skipped, and records
are appended one at a time.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .backends import Backend, canonical_label_index
from .data import SampleRecord, existing_ids, load_samples

HSD_MAGIC = b"HSD1"
HSD_VERSION = 1


def run_generate(backend: Backend, dataset_dir, out_path, limit: int | None = None) -> int:
    """Greedy text answers, one {sample_id, raw_text} record per sample."""
    samples = load_samples(dataset_dir, limit=limit)
    done = existing_ids(out_path)
    written = 0
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "a", encoding="utf-8") as fh:
        for sample in samples:
            if sample.sample_id in done:
                continue
            text = _run_step(backend, "generate", sample)
            fh.write(json.dumps({"sample_id": sample.sample_id, "raw_text": text}) + "\n")
            fh.flush()
            written += 1
    return written


def _run_step(backend: Backend, method: str, sample: SampleRecord):
    """Model failures (OOM included) are re-raised naming the sample."""
    try:
        return getattr(backend, method)(sample)
    except (NotImplementedError, FileNotFoundError):
        raise
    except Exception as e:
        raise RuntimeError(
            f"{backend.name} {method} failed on sample {sample.sample_id}: {e}"
        ) from e


def run_retrieval_embed(backend: Backend, dataset_dir, out_path, limit: int | None = None) -> int:
    """Image embedding plus nine candidate-text embeddings per sample."""
    samples = load_samples(dataset_dir, limit=limit)
    done = existing_ids(out_path)
    written = 0
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "a", encoding="utf-8") as fh:
        for sample in samples:
            if sample.sample_id in done:
                continue
            image, candidates = _run_step(backend, "embed", sample)
            candidates = np.asarray(candidates)
            if candidates.shape[0] != len(sample.options):
                raise ValueError(
                    f"backend emitted {candidates.shape[0]} candidates for {sample.sample_id}"
                )
            record = {
                "sample_id": sample.sample_id,
                "image_emb": np.asarray(image, dtype=float).tolist(),
                "candidate_embs": candidates.astype(float).tolist(),
            }
            fh.write(json.dumps(record) + "\n")
            fh.flush()
            written += 1
    return written


def _write_hsd1(path, layer_index: int, records: list[tuple[str, int, np.ndarray]]) -> None:
    dim = records[0][2].shape[0]
    parts = [HSD_MAGIC, struct.pack("<HHII", HSD_VERSION, layer_index, dim, len(records))]
    for sample_id, label_index, vector in records:
        sid = sample_id.encode("utf-8")
        parts.append(struct.pack("<H", len(sid)))
        parts.append(sid)
        parts.append(struct.pack("<B", label_index))
        parts.append(vector.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def run_dump_hidden(backend: Backend, dataset_dir, out_dir, limit: int | None = None) -> list[str]:
    """One HSD1 file per layer holding the final question-token vectors."""
    samples = load_samples(dataset_dir, limit=limit)
    if not samples:
        raise ValueError(f"no samples in {dataset_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_layer: list[list[tuple[str, int, np.ndarray]]] | None = None
    for sample in samples:
        states = _run_step(backend, "hidden_states", sample)
        if per_layer is None:
            per_layer = [[] for _ in range(states.shape[0])]
        if states.shape[0] != len(per_layer):
            raise ValueError(f"layer count changed at sample {sample.sample_id}")
        label_index = canonical_label_index(sample.gold)
        for layer, vector in enumerate(states):
            per_layer[layer].append((sample.sample_id, label_index, vector))

    files = []
    for layer, records in enumerate(per_layer):
        name = f"layer_{layer:03d}.hsd1"
        _write_hsd1(out / name, layer, records)
        files.append(name)
    (out / "manifest.json").write_text(json.dumps({"files": files}, indent=2) + "\n")
    return files
