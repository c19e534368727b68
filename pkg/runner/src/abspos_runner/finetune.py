"""LoRA fine-tuning on a dataset directory with a recorded train/val split.

The adapter trains on `<dataset>/train` and early-stops on the accuracy of
greedy predictions over `<dataset>/val`, judged by the abspos scorer (never
locally). Per-epoch metrics land in train_log.jsonl; the best adapter and the
resolved configuration are saved next to it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .backends import Backend, canonical_label_index
from .data import load_samples
from .jobs import run_generate
from .lora import DEFAULT_TARGETS, apply_lora, save_adapter
from .scoring import score_with_primary


@dataclass
class FinetuneConfig:
    rank: int = 32
    alpha: float = 64.0
    targets: tuple[str, ...] = DEFAULT_TARGETS
    epochs: int = 10
    patience: int = 2
    learning_rate: float = 1e-4
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.epochs <= 10):
            raise ValueError(f"epochs must be in 1..10, got {self.epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


def run_finetune(
    backend: Backend,
    dataset_dir,
    out_dir,
    config: FinetuneConfig,
    train_limit: int | None = None,
    val_limit: int | None = None,
) -> dict:
    """Returns {"epochs_run", "best_epoch", "best_val_accuracy", "stopped_early"}."""
    import torch

    if not backend.trainable:
        raise ValueError(f"backend {backend.name} is not trainable")

    root = Path(dataset_dir)
    train_dir, val_dir = root / "train", root / "val"
    if not train_dir.is_dir() or not val_dir.is_dir():
        raise FileNotFoundError(f"{root} has no recorded train/val split directories")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "finetune_config.json").write_text(
        json.dumps({"model": backend.name, **asdict(config)}, indent=2) + "\n"
    )

    model = backend.model
    adapted = apply_lora(model, config.rank, config.alpha, config.targets)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)
    torch.manual_seed(config.seed)

    train_samples = load_samples(train_dir, limit=train_limit)
    if not train_samples:
        raise ValueError(f"no training samples under {train_dir}")
    prepared = [backend.prepare_train(s) for s in train_samples]
    labels = [canonical_label_index(s.gold) for s in train_samples]

    log_path = out / "train_log.jsonl"
    best_acc, best_epoch = -1.0, -1
    epochs_run = 0
    stopped_early = False
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(json.dumps({"event": "start", "adapted_modules": adapted}) + "\n")
        for epoch in range(config.epochs):
            model.train()
            perm = torch.randperm(len(train_samples))
            total_loss = 0.0
            for start in range(0, len(perm), config.batch_size):
                batch = perm[start : start + config.batch_size].tolist()
                optimizer.zero_grad()
                loss = torch.stack(
                    [backend.train_loss(prepared[i], labels[i]) for i in batch]
                ).mean()
                loss.backward()
                optimizer.step()
                total_loss += float(loss.detach()) * len(batch)
            epochs_run = epoch + 1

            model.eval()
            preds_path = out / f"val_predictions_epoch{epoch:02d}.jsonl"
            run_generate(backend, val_dir, preds_path, limit=val_limit)
            report = score_with_primary(val_dir, preds_path, out / f"val_report_epoch{epoch:02d}")
            val_acc = report["overall_accuracy"]
            log.write(
                json.dumps(
                    {
                        "epoch": epoch,
                        "train_loss": total_loss / len(train_samples),
                        "val_accuracy": val_acc,
                        "val_valid_rate": report["valid_rate"],
                    }
                )
                + "\n"
            )
            log.flush()

            if val_acc > best_acc:
                best_acc, best_epoch = val_acc, epoch
                save_adapter(model, out / "adapter.pt")
            elif epoch - best_epoch >= config.patience:
                stopped_early = True
                log.write(json.dumps({"event": "early_stop", "epoch": epoch}) + "\n")
                break

    return {
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "best_val_accuracy": best_acc,
        "stopped_early": stopped_early,
    }
