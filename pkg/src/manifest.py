"""Run manifest written next to every set of outputs."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Optional

MANIFEST_FILE = "manifest.json"


def get_version() -> str:
    """Return a display version like 'v0.1.0' (or 'Unknown')."""
    env_ver = (os.getenv("CPCSCAN_VERSION") or "").strip()
    if env_ver:
        return env_ver if env_ver.lower().startswith("v") else f"v{env_ver}"

    here = os.path.dirname(os.path.realpath(__file__))
    candidates = [
        os.path.join(here, "config.yaml"),  # src/config.yaml
        os.path.join(here, "..", "config.yaml"),  # repo root
        "config.yaml",
    ]

    for path in candidates:
        try:
            if os.path.exists(path):
                with open(path, "r", encoding="utf-8") as f:
                    for line in f:
                        s = line.strip()
                        if s.startswith("version:"):
                            v = s.split(":", 1)[1].strip().strip('"').strip("'")
                            if not v:
                                break
                            return v if v.lower().startswith("v") else f"v{v}"
        except OSError:
            pass

    return "Unknown"


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = field(default_factory=get_version)
    seed: Optional[int] = None
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def add_input(self, path: str) -> None:
        self.inputs[os.path.basename(path)] = file_digest(path)

    def add_output(self, path: str) -> None:
        self.outputs.append(os.path.basename(path))


def write_manifest(manifest: RunManifest, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_FILE)
    payload = asdict(manifest)
    payload["outputs"] = sorted(payload["outputs"])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    return path
