#!/usr/bin/env python3
"""Regenerate the shipped 9-entry benchmark dataset (refs + manifest)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from cadsmith.bench import build_fixture_dataset  # noqa: E402

if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "cadsmith" / "data" / "bench"
    manifest = build_fixture_dataset(out)
    print(f"wrote {len(manifest)} entries to {out}")
