"""Model backends behind one small interface.

Identifiers:
  stub:oracle            echo the gold label (wiring checks)
  stub:constant:<label>  always answer <label>
  stub:random[:seed]     uniform random label per sample
  stub:empty             empty string (always invalid downstream)
  tiny[:seed]            local trainable toy VLM (see tiny.py)
  hf:<checkpoint>        transformers image-text-to-text checkpoint
  hf-clip:<checkpoint>   transformers dual-encoder (CLIP-style)

Stubs never read pixels; tiny and hf do. Only `generate`, `embed`, and
`hidden_states` are required, and backends may support a subset.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .data import SampleRecord


class Backend:
    name: str = "base"
    trainable = False

    def generate(self, sample: SampleRecord) -> str:
        raise NotImplementedError(f"{self.name} does not support generation")

    def embed(self, sample: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
        """Returns (image embedding, 9 candidate-text embeddings in option order)."""
        raise NotImplementedError(f"{self.name} does not support embeddings")

    def hidden_states(self, sample: SampleRecord) -> np.ndarray:
        """Returns (layers, dim): the final question-token vector per layer."""
        raise NotImplementedError(f"{self.name} does not support hidden states")

    # trainable backends also expose `model` (an nn.Module) plus the two
    # methods below, so the fine-tuning loop stays backend-agnostic
    def prepare_train(self, sample: SampleRecord):
        raise NotImplementedError(f"{self.name} is not trainable")

    def train_loss(self, prepared, label_index: int):
        raise NotImplementedError(f"{self.name} is not trainable")


def _hash_vector(text: str, dim: int = 32) -> np.ndarray:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


class StubBackend(Backend):
    """Deterministic answers without a model; supports every mode."""

    def __init__(self, mode: str, arg: str | None = None):
        self.mode = mode
        self.arg = arg
        self.name = f"stub:{mode}" + (f":{arg}" if arg else "")

    def generate(self, sample: SampleRecord) -> str:
        if self.mode == "oracle":
            return sample.gold
        if self.mode == "constant":
            return self.arg or "center"
        if self.mode == "empty":
            return ""
        if self.mode == "random":
            seed = self.arg or "0"
            digest = hashlib.sha256(f"{seed}:{sample.sample_id}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            return sample.options[int(rng.integers(len(sample.options)))]
        raise ValueError(f"unknown stub mode {self.mode!r}")

    def embed(self, sample: SampleRecord):
        # image embedding equals the gold candidate's text embedding, so the
        # cosine argmax lands on the gold option
        candidates = np.stack([_hash_vector(t) for t in sample.candidate_texts()])
        gold_text = f"{sample.question} {sample.gold}"
        return _hash_vector(gold_text), candidates

    def hidden_states(self, sample: SampleRecord) -> np.ndarray:
        # noise in early layers, fading into a clean gold-aligned one-hot
        digest = hashlib.sha256(f"hidden:{sample.sample_id}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        layers, dim = 6, 32
        one_hot = np.zeros(dim, dtype=np.float32)
        one_hot[canonical_label_index(sample.gold)] = 10.0
        states = rng.normal(size=(layers, dim)).astype(np.float32)
        for layer in range(layers):
            signal = max(0.0, (layer - 1) / (layers - 2))
            states[layer] = (1.0 - signal) * states[layer] + signal * one_hot
        return states


def canonical_label_index(label: str) -> int:
    order = (
        "top left", "top center", "top right",
        "center left", "center", "center right",
        "bottom left", "bottom center", "bottom right",
    )
    return order.index(label)


class TinyBackend(Backend):
    trainable = True

    def __init__(self, seed: int = 0, dim: int = 32, layers: int = 2):
        from .tiny import TinyVlm

        self.name = f"tiny:{seed}"
        self.model = TinyVlm(dim=dim, layers=layers, seed=seed)
        self.model.eval()

    def _inputs(self, sample: SampleRecord):
        import torch

        from .tiny import hash_tokens, image_patches

        if sample.image_path is None:
            raise FileNotFoundError(f"sample {sample.sample_id} has no image on disk")
        patches = torch.from_numpy(image_patches(sample.image_path))
        tokens = torch.tensor(hash_tokens(sample.prompt), dtype=torch.long)
        return patches, tokens

    def generate(self, sample: SampleRecord) -> str:
        patches, tokens = self._inputs(sample)
        return self.model.predict_label(patches, tokens)

    def embed(self, sample: SampleRecord):
        patches, _ = self._inputs(sample)
        image = self.model.image_embedding(patches)
        candidates = np.stack(
            [self.model.text_embedding(t) for t in sample.candidate_texts()]
        )
        return image, candidates

    def hidden_states(self, sample: SampleRecord) -> np.ndarray:
        import torch

        patches, tokens = self._inputs(sample)
        with torch.no_grad():
            finals, _ = self.model.encode(patches, tokens)
        return np.stack([f.numpy() for f in finals]).astype(np.float32)

    def prepare_train(self, sample: SampleRecord):
        return self._inputs(sample)

    def train_loss(self, prepared, label_index: int):
        import torch

        patches, tokens = prepared
        logits = self.model(patches, tokens)
        target = torch.tensor([label_index])
        return torch.nn.functional.cross_entropy(logits.unsqueeze(0), target)


class HfBackend(Backend):
    """Best-effort wrapper for transformers image-text-to-text checkpoints.

    Requires the checkpoint weights locally or a reachable hub; intended for
    GPU machines. Greedy decoding, batch size 1.
    """

    trainable = True

    def __init__(self, checkpoint: str, max_new_tokens: int = 16):
        from transformers import AutoModelForImageTextToText, AutoProcessor

        self.name = f"hf:{checkpoint}"
        self.processor = AutoProcessor.from_pretrained(checkpoint)
        self.model = AutoModelForImageTextToText.from_pretrained(checkpoint)
        self.model.eval()
        self.max_new_tokens = max_new_tokens

    def _open_image(self, sample: SampleRecord):
        from PIL import Image

        if sample.image_path is None:
            raise FileNotFoundError(f"sample {sample.sample_id} has no image on disk")
        return Image.open(sample.image_path).convert("RGB")

    def generate(self, sample: SampleRecord) -> str:
        import torch

        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "image"},
                    {"type": "text", "text": sample.prompt},
                ],
            }
        ]
        prompt = self.processor.apply_chat_template(messages, add_generation_prompt=True)
        inputs = self.processor(images=self._open_image(sample), text=prompt, return_tensors="pt")
        with torch.no_grad():
            out = self.model.generate(
                **inputs, do_sample=False, max_new_tokens=self.max_new_tokens
            )
        new_tokens = out[0][inputs["input_ids"].shape[1] :]
        return self.processor.decode(new_tokens, skip_special_tokens=True).strip()

    def prepare_train(self, sample: SampleRecord):
        return sample

    def train_loss(self, prepared: SampleRecord, label_index: int):
        # teacher-forced LM loss over prompt + gold answer (prompt unmasked;
        # adequate for adapter tuning, simple enough to survive API drift)
        labels_text = (
            "top left", "top center", "top right",
            "center left", "center", "center right",
            "bottom left", "bottom center", "bottom right",
        )[label_index]
        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "image"},
                    {"type": "text", "text": prepared.prompt},
                ],
            },
            {"role": "assistant", "content": [{"type": "text", "text": labels_text}]},
        ]
        text = self.processor.apply_chat_template(messages, add_generation_prompt=False)
        inputs = self.processor(images=self._open_image(prepared), text=text, return_tensors="pt")
        out = self.model(**inputs, labels=inputs["input_ids"])
        return out.loss

    def hidden_states(self, sample: SampleRecord) -> np.ndarray:
        import torch

        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "image"},
                    {"type": "text", "text": sample.prompt},
                ],
            }
        ]
        prompt = self.processor.apply_chat_template(messages, add_generation_prompt=False)
        inputs = self.processor(images=self._open_image(sample), text=prompt, return_tensors="pt")
        with torch.no_grad():
            out = self.model(**inputs, output_hidden_states=True)
        # one vector per decoder layer at the final question token
        return np.stack(
            [h[0, -1].float().numpy() for h in out.hidden_states[1:]]
        ).astype(np.float32)


class HfClipBackend(Backend):
    """Dual-encoder checkpoints scored by the toolkit's retrieval mode."""

    def __init__(self, checkpoint: str):
        from transformers import AutoModel, AutoProcessor

        self.name = f"hf-clip:{checkpoint}"
        self.processor = AutoProcessor.from_pretrained(checkpoint)
        self.model = AutoModel.from_pretrained(checkpoint)
        self.model.eval()

    def embed(self, sample: SampleRecord):
        import torch
        from PIL import Image

        if sample.image_path is None:
            raise FileNotFoundError(f"sample {sample.sample_id} has no image on disk")
        with torch.no_grad():
            image_inputs = self.processor(
                images=Image.open(sample.image_path).convert("RGB"), return_tensors="pt"
            )
            image = self.model.get_image_features(**image_inputs)[0]
            image = image / image.norm()
            text_inputs = self.processor(
                text=sample.candidate_texts(), return_tensors="pt", padding=True
            )
            texts = self.model.get_text_features(**text_inputs)
            texts = texts / texts.norm(dim=-1, keepdim=True)
        return image.numpy(), texts.numpy()


def make_backend(identifier: str) -> Backend:
    parts = identifier.split(":")
    kind = parts[0]
    if kind == "stub":
        if len(parts) < 2:
            raise ValueError("stub backend needs a mode, e.g. stub:oracle")
        return StubBackend(parts[1], ":".join(parts[2:]) or None)
    if kind == "tiny":
        seed = int(parts[1]) if len(parts) > 1 else 0
        return TinyBackend(seed=seed)
    if kind == "hf":
        return HfBackend(":".join(parts[1:]))
    if kind == "hf-clip":
        return HfClipBackend(":".join(parts[1:]))
    raise ValueError(f"unknown model identifier {identifier!r}")
