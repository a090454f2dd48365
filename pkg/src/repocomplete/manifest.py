"""Run manifests: enough provenance to reproduce any output artifact.

The fingerprint hashes only deterministic fields (command, config, seed,
backend identity, input fingerprints), so re-running with the same inputs
yields the same fingerprint; wall-clock metadata lives outside the hash in
the sidecar file.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seed: int | None = None
    backend: str | None = None
    inputs: dict = field(default_factory=dict)   # name -> sha256 or fingerprint

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "command": self.command,
                "config": self.config,
                "seed": self.seed,
                "backend": self.backend,
                "inputs": self.inputs,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def write(self, path: Path) -> str:
        fp = self.fingerprint()
        body = {
            "fingerprint": fp,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "backend": self.backend,
            "inputs": self.inputs,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        Path(path).write_text(
            json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return fp


def sidecar_path(output: Path) -> Path:
    out = Path(output)
    return out.with_name(out.name + ".manifest.json")
