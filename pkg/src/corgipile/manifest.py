"""Run manifests: what produced an output directory, and how to produce it again."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from corgipile import __version__

MANIFEST_VERSION = 1
# bump when any CSV column set written by the CLI changes
CSV_SCHEMA_VERSION = 1


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="milliseconds")


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while chunk := f.read(1 << 20):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """One CLI invocation.

    ``argv`` is the subcommand's argument list as typed (without ``--out``);
    relative paths in it are resolved against ``cwd`` on replay.  ``outputs``
    maps each written file to its SHA-256 and whether it carries wall-clock
    timings (and so cannot be byte-identical across runs).
    """

    subcommand: str
    argv: list[str]
    flags: dict
    seed: int | None
    cwd: str
    dataset_checksums: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    manifest_version: int = MANIFEST_VERSION
    csv_schema_version: int = CSV_SCHEMA_VERSION
    started: str = field(default_factory=_now)
    finished: str | None = None
    outputs: dict[str, dict] = field(default_factory=dict)

    def add_output(self, path: str | os.PathLike, timing: bool = False) -> None:
        p = Path(path)
        self.outputs[p.name] = {"sha256": file_digest(p), "timing": timing}

    def finish(self) -> None:
        self.finished = _now()

    def write(self, out_dir: str | os.PathLike) -> Path:
        path = Path(out_dir) / f"{self.subcommand}.manifest.json"
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunManifest":
        with open(path) as f:
            obj = json.load(f)
        if obj.get("manifest_version") != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {obj.get('manifest_version')}")
        return cls(**obj)

    def deterministic_outputs(self) -> dict[str, str]:
        return {name: o["sha256"] for name, o in self.outputs.items() if not o["timing"]}
