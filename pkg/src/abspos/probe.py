"""Layer-wise linear probing of hidden representations.

Per-layer feature dumps are classified into the nine position labels with a
one-vs-rest linear SVM (hinge loss, L2 regularization) trained by
deterministic-shuffle stochastic subgradient descent, evaluated with
stratified k-fold cross-validation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import derive_rng
from .errors import InputError
from .grid import POSITION_LABELS
from .render import write_bytes_atomic

HSD_MAGIC = b"HSD1"
HSD_VERSION = 1
N_CLASSES = len(POSITION_LABELS)


@dataclass
class HiddenDump:
    """Fixed-dimension feature vectors with position labels for one layer."""

    layer_index: int
    features: np.ndarray  # (n, dim) float32
    labels: np.ndarray  # (n,) int, canonical label indices
    sample_ids: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or len(self.sample_ids) != n:
            raise InputError("dump records are inconsistent in length")
        if len(set(self.sample_ids)) != n:
            raise InputError(f"duplicate sample ids in layer {self.layer_index} dump")
        if n and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise InputError("label index out of range")

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def write_hidden_dump(dump: HiddenDump, path) -> None:
    parts = [
        HSD_MAGIC,
        struct.pack("<HHII", HSD_VERSION, dump.layer_index, dump.dim, len(dump.sample_ids)),
    ]
    for sid, label, feats in zip(dump.sample_ids, dump.labels, dump.features):
        sid_bytes = sid.encode("utf-8")
        parts.append(struct.pack("<H", len(sid_bytes)))
        parts.append(sid_bytes)
        parts.append(struct.pack("<B", int(label)))
        parts.append(feats.astype("<f4").tobytes())
    write_bytes_atomic(b"".join(parts), path)


def read_hidden_dump(path) -> HiddenDump:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != HSD_MAGIC:
        raise InputError(f"{path}: not a hidden-state dump (bad magic)")
    version, layer_index, dim, count = struct.unpack_from("<HHII", data, 4)
    if version != HSD_VERSION:
        raise InputError(f"{path}: unsupported dump version {version}")
    offset = 4 + struct.calcsize("<HHII")
    ids = []
    labels = np.empty(count, dtype=np.int64)
    features = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        ids.append(data[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        labels[i] = data[offset]
        offset += 1
        features[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
    if offset != len(data):
        raise InputError(f"{path}: trailing bytes after {count} records")
    return HiddenDump(layer_index=layer_index, features=features, labels=labels, sample_ids=ids)


def load_dump_dir(path) -> list[HiddenDump]:
    """Load every dump listed in the directory manifest (or all *.hsd1 files)."""
    path = Path(path)
    manifest = path / "manifest.json"
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            files = json.load(fh)["files"]
        paths = [path / f for f in files]
    else:
        paths = sorted(path.glob("*.hsd1"))
    if not paths:
        raise InputError(f"no hidden-state dumps found under {path}")
    return [read_hidden_dump(p) for p in paths]


@dataclass
class ProbeConfig:
    folds: int = 3
    c: float = 1.0
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise InputError(f"need at least 2 folds, got {self.folds}")
        if self.c <= 0:
            raise InputError(f"regularization C must be positive, got {self.c}")
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")


def standardize(
    train_features: np.ndarray, apply_to: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray | None, dict[str, np.ndarray]]:
    """Per-dimension zero-mean/unit-std using train statistics only.

    Zero-variance dimensions pass through unscaled. The same statistics are
    applied to the held-out features.
    """
    train_features = np.asarray(train_features, dtype=np.float64)
    if train_features.size == 0:
        raise InputError("cannot standardize an empty training set")
    mean = train_features.mean(axis=0)
    std = train_features.std(axis=0)
    scale = np.where(std == 0, 1.0, std)
    train_t = (train_features - mean) / scale
    applied = None
    if apply_to is not None:
        apply_to = np.asarray(apply_to, dtype=np.float64)
        if apply_to.shape[1] != train_features.shape[1]:
            raise InputError(
                f"dimension mismatch: train {train_features.shape[1]}, apply {apply_to.shape[1]}"
            )
        applied = (apply_to - mean) / scale
    return train_t, applied, {"mean": mean, "std": std}


def train_linear_svm(
    X: np.ndarray, y: np.ndarray, config: ProbeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """One-vs-rest hinge + L2 via stochastic subgradient descent.

    lambda = 1 / (C * n); step size 1/(lambda * t). Every epoch walks a fresh
    seed-derived permutation of the data, updating all nine binary problems
    per visited sample. Returns (weights (9, dim), biases (9,)).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, dim = X.shape
    if len(np.unique(y)) < 2:
        raise InputError("training data must contain at least two classes")

    lam = 1.0 / (config.c * n)
    rng = derive_rng(config.seed, "svm")
    # Bias handled as an extra always-one feature (regularized with the rest).
    Xa = np.hstack([X, np.ones((n, 1))])
    W = np.zeros((N_CLASSES, dim + 1))
    signs = np.full((N_CLASSES,), -1.0)

    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            x = Xa[i]
            ys = signs.copy()
            ys[y[i]] = 1.0
            margins = ys * (W @ x)
            W *= 1.0 - eta * lam
            violated = margins < 1.0
            if violated.any():
                W[violated] += np.outer(eta * ys[violated], x)
    return W[:, :-1], W[:, -1]


def svm_predict(weights: np.ndarray, biases: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Argmax class score; np.argmax takes the first (canonical) max on ties."""
    scores = np.asarray(X, dtype=np.float64) @ weights.T + biases
    return np.argmax(scores, axis=1)


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Disjoint covering folds, stratified within +/-1 per class."""
    labels = np.asarray(labels)
    assignments: list[list[int]] = [[] for _ in range(folds)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < folds:
            raise InputError(
                f"class {cls} has {len(idx)} examples, fewer than {folds} folds"
            )
        rng = derive_rng(seed, "folds", int(cls), len(idx))
        idx = idx[rng.permutation(len(idx))]
        for f, chunk in enumerate(np.array_split(idx, folds)):
            assignments[f].extend(chunk.tolist())
    return [np.array(sorted(a), dtype=np.int64) for a in assignments]


def cross_validate(dump: HiddenDump, config: ProbeConfig) -> dict:
    """Stratified k-fold accuracy of the linear probe on one layer."""
    folds = stratified_folds(dump.labels, config.folds, config.seed)
    accuracies = []
    all_idx = np.arange(len(dump.sample_ids))
    for held_out in folds:
        train_idx = np.setdiff1d(all_idx, held_out)
        X_train, X_test, _ = standardize(
            dump.features[train_idx], dump.features[held_out]
        )
        weights, biases = train_linear_svm(X_train, dump.labels[train_idx], config)
        pred = svm_predict(weights, biases, X_test)
        accuracies.append(float(np.mean(pred == dump.labels[held_out])))
    return {"mean_accuracy": float(np.mean(accuracies)), "per_fold": accuracies}


def layer_sweep(dumps: list[HiddenDump], config: ProbeConfig) -> list[dict]:
    """Cross-validate each layer; repeated dumps of a layer become one row.

    Rows are {layer, mean, std, runs}; std is the population spread of the
    per-run mean accuracies (0.0 for a single run).
    """
    if not dumps:
        raise InputError("no dumps to sweep")
    by_layer: dict[int, list[HiddenDump]] = {}
    for d in dumps:
        by_layer.setdefault(d.layer_index, []).append(d)
    rows = []
    for layer in sorted(by_layer):
        means = [cross_validate(d, config)["mean_accuracy"] for d in by_layer[layer]]
        rows.append(
            {
                "layer": layer,
                "mean": float(np.mean(means)),
                "std": float(np.std(means)),
                "runs": len(means),
            }
        )
    return rows


def sweep_csv_bytes(rows: list[dict]) -> bytes:
    lines = ["layer,mean,std"]
    for row in rows:
        lines.append(f"{row['layer']},{row['mean']:.6f},{row['std']:.6f}")
    return ("\n".join(lines) + "\n").encode("utf-8")
