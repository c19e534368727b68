"""Minimal LoRA adapters for torch Linear layers.

Adapters wrap the attention query/key/value projections; the base weights
stay frozen and only the low-rank A/B factors train.
"""

from __future__ import annotations

import torch
from torch import nn

DEFAULT_TARGETS = ("q_proj", "k_proj", "v_proj")


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        if rank < 1:
            raise ValueError(f"LoRA rank must be >= 1, got {rank}")
        self.base = base
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)
        self.scaling = alpha / rank
        self.base.weight.requires_grad_(False)
        if self.base.bias is not None:
            self.base.bias.requires_grad_(False)

    def forward(self, x):
        return self.base(x) + (x @ self.lora_a.T @ self.lora_b.T) * self.scaling


def apply_lora(model: nn.Module, rank: int, alpha: float, targets=DEFAULT_TARGETS) -> list[str]:
    """Freeze the model and wrap every targeted Linear; returns adapted names."""
    for p in model.parameters():
        p.requires_grad_(False)
    adapted = []
    for name, module in list(model.named_modules()):
        for child_name, child in list(module.named_children()):
            if child_name in targets and isinstance(child, nn.Linear):
                setattr(module, child_name, LoraLinear(child, rank, alpha))
                adapted.append(f"{name}.{child_name}" if name else child_name)
    if not adapted:
        raise ValueError(f"no Linear modules named {targets} found to adapt")
    return adapted


def lora_state_dict(model: nn.Module) -> dict:
    return {k: v for k, v in model.state_dict().items() if "lora_a" in k or "lora_b" in k}


def save_adapter(model: nn.Module, path) -> None:
    torch.save(lora_state_dict(model), path)


def load_adapter(model: nn.Module, path) -> None:
    state = torch.load(path, map_location="cpu", weights_only=True)
    missing = model.load_state_dict(state, strict=False).unexpected_keys
    if missing:
        raise ValueError(f"adapter does not match the model: {missing}")
