"""Stage manifests and content-addressed caching.

Every pipeline stage writes a manifest.json next to its outputs: the stage
key (a digest of tool version, the stage's config slice, and input file
digests), output digests, counts, and timestamps. A stage is skipped when its
stored key matches the computed one and all output digests still verify, so
any single-byte corruption forces a rerun. Manifests also append to a
run-level log, which is never rewritten.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .util import dump_json, load_json, sha256_file


def stage_key(version: str, config_slice: dict, input_digests: dict) -> str:
    doc = json.dumps(
        {"version": version, "config": config_slice, "inputs": input_digests},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def digest_tree(stage_dir: Path, skip: tuple[str, ...] = ("manifest.json",)) -> dict[str, str]:
    """sha256 of every file under a stage directory, keyed by relative path."""
    stage_dir = Path(stage_dir)
    out = {}
    for path in sorted(stage_dir.rglob("*")):
        if path.is_file() and path.name not in skip:
            out[str(path.relative_to(stage_dir))] = sha256_file(path)
    return out


@dataclass
class StageManifest:
    stage: str
    key: str
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    started: str = ""
    ended: str = ""
    partial: bool = False
    version: str = ""

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "key": self.key,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "counts": self.counts,
            "started": self.started,
            "ended": self.ended,
            "partial": self.partial,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageManifest":
        return cls(**d)


def now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_manifest(run_dir: Path, stage_dir: Path, manifest: StageManifest) -> None:
    dump_json(Path(stage_dir) / "manifest.json", manifest.to_dict())
    log_path = Path(run_dir) / "manifest.log"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":")))
        f.write("\n")


def load_manifest(stage_dir: Path) -> StageManifest | None:
    path = Path(stage_dir) / "manifest.json"
    if not path.exists():
        return None
    return StageManifest.from_dict(load_json(path))


def outputs_verify(stage_dir: Path, manifest: StageManifest) -> bool:
    stage_dir = Path(stage_dir)
    for rel, digest in manifest.outputs.items():
        path = stage_dir / rel
        if not path.exists() or sha256_file(path) != digest:
            return False
    return True


def should_skip(stage_dir: Path, key: str) -> bool:
    manifest = load_manifest(stage_dir)
    return manifest is not None and manifest.key == key and outputs_verify(stage_dir, manifest)
