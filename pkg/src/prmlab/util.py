"""Stable hashing, seed derivation, and JSON/JSONL helpers.

Everything here must be deterministic across processes and platforms, so no
use of Python's salted ``hash()``.
"""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

_PART_SEP = b"\x1f"


def stable_digest(*parts) -> str:
    """Hex digest of heterogeneous parts (strings, numbers, bytes)."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(repr(part).encode("utf-8"))
        h.update(_PART_SEP)
    return h.hexdigest()


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed derived from arbitrary parts."""
    return int(stable_digest(*parts)[:15], 16)


def prefix_digest(texts: Sequence[str]) -> str:
    """Stable key for a step-text prefix (empty prefix included)."""
    h = hashlib.blake2b(digest_size=8)
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\x1e")
    return h.hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_jsonl(path, records: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            f.write("\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def frac_to_str(value: Fraction | None) -> str | None:
    return None if value is None else str(value)


def frac_from_str(text: str | None) -> Fraction | None:
    return None if text is None else Fraction(text)
