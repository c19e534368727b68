"""Thin adapter that runs models over absolute-position VQA dataset directories.

Emits prediction files, dual-encoder embedding files, and per-layer
hidden-state dumps in the formats the `abspos` toolkit consumes, and performs
LoRA fine-tuning. All correctness judgments (answer parsing, accuracy) live
in `abspos`; this package never scores anything itself.
"""

__version__ = "0.1.0"

INSTRUCTION_PREFIX = "Answer with as few words as possible."
