"""A tiny trainable vision-language classifier used as a local test model.

It is a genuine (if minuscule) multimodal transformer: the image becomes a
9x9 grid of intensity patches, the question becomes hashed token embeddings,
and stacked attention blocks with q/k/v projections process the joint
sequence. Answers come from a 9-way head over the final question token, so
generation is greedy by construction. It exists so the full pipeline
(generation, embeddings, hidden-state dumps, LoRA fine-tuning) can run
without downloading a real checkpoint.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
from torch import nn
from PIL import Image

GRID = 9
VOCAB = 64
POSITION_LABELS = (
    "top left", "top center", "top right",
    "center left", "center", "center right",
    "bottom left", "bottom center", "bottom right",
)
MAX_TEXT_TOKENS = 16


def image_patches(path) -> np.ndarray:
    """Mean grayscale intensity of each 9x9 grid block, in [0, 1]."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    h, w = gray.shape
    patches = np.empty((GRID, GRID), dtype=np.float32)
    for r in range(GRID):
        for c in range(GRID):
            y0, y1 = r * h // GRID, (r + 1) * h // GRID
            x0, x1 = c * w // GRID, (c + 1) * w // GRID
            patches[r, c] = gray[y0:y1, x0:x1].mean()
    return patches.reshape(-1)


def hash_tokens(text: str, max_tokens: int = MAX_TEXT_TOKENS) -> list[int]:
    """Stable hash-bucket token ids (python's hash() is salted per process)."""
    ids = []
    for word in text.lower().split()[:max_tokens]:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        ids.append(digest[0] % VOCAB)
    return ids or [0]


class SelfAttention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x):
        q, k, v = self.q_proj(x), self.k_proj(x), self.v_proj(x)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        return self.out_proj(attn @ v)


class Block(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.attn = SelfAttention(dim)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 2), nn.GELU(), nn.Linear(dim * 2, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TinyVlm(nn.Module):
    def __init__(self, dim: int = 32, layers: int = 2, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.dim = dim
        self.patch_proj = nn.Linear(1, dim)
        self.patch_pos = nn.Parameter(torch.randn(GRID * GRID, dim) * 0.02)
        self.token_emb = nn.Embedding(VOCAB, dim)
        self.token_pos = nn.Parameter(torch.randn(MAX_TEXT_TOKENS, dim) * 0.02)
        self.blocks = nn.ModuleList(Block(dim) for _ in range(layers))
        self.head = nn.Linear(dim, len(POSITION_LABELS))

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    def encode(self, patches: torch.Tensor, token_ids: torch.Tensor):
        """Returns per-layer hidden states of the final question token plus logits."""
        img = self.patch_proj(patches.unsqueeze(-1)) + self.patch_pos
        txt = self.token_emb(token_ids) + self.token_pos[: len(token_ids)]
        x = torch.cat([img, txt], dim=0).unsqueeze(0)
        finals = []
        for block in self.blocks:
            x = block(x)
            finals.append(x[0, -1])
        logits = self.head(finals[-1])
        return finals, logits

    def forward(self, patches: torch.Tensor, token_ids: torch.Tensor) -> torch.Tensor:
        _, logits = self.encode(patches, token_ids)
        return logits

    def predict_label(self, patches: torch.Tensor, token_ids: torch.Tensor) -> str:
        with torch.no_grad():
            logits = self(patches, token_ids)
        return POSITION_LABELS[int(torch.argmax(logits))]

    def text_embedding(self, text: str) -> np.ndarray:
        ids = torch.tensor(hash_tokens(text), dtype=torch.long)
        with torch.no_grad():
            emb = (self.token_emb(ids) + self.token_pos[: len(ids)]).mean(dim=0)
            emb = emb / emb.norm()
        return emb.numpy()

    def image_embedding(self, patches: torch.Tensor) -> np.ndarray:
        with torch.no_grad():
            img = self.patch_proj(patches.unsqueeze(-1)) + self.patch_pos
            x = img.unsqueeze(0)
            for block in self.blocks:
                x = block(x)
            emb = x[0].mean(dim=0)
            emb = emb / emb.norm()
        return emb.numpy()
