"""Delegating accuracy judgments to the abspos CLI.

The runner never parses or scores answers itself; it shells out to
`abspos eval score` and reads the report it writes back.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path


def score_with_primary(dataset_dir, predictions_path, out_dir) -> dict:
    """Run the toolkit scorer; returns the parsed report.json."""
    out_dir = Path(out_dir)
    cmd = [
        sys.executable,
        "-m",
        "abspos",
        "eval",
        "score",
        "--dataset",
        str(dataset_dir),
        "--predictions",
        str(predictions_path),
        "--out",
        str(out_dir),
    ]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"abspos eval score failed ({proc.returncode}): {proc.stderr.strip()}"
        )
    with open(out_dir / "report.json", encoding="utf-8") as fh:
        return json.load(fh)
