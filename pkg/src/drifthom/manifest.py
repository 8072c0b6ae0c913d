"""Run manifests: a canonical config hash, seeds, library versions, and a
complete inventory of the files a run wrote (with content digests, so
reruns can be compared byte for byte).

The config hash is taken over the flattened key-value view serialized as
JSON with sorted keys, which makes it invariant under section and key
reordering in the source file.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy
import scipy

from .config import ExperimentConfig, config_as_dict

PACKAGE_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(config_as_dict(cfg), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    base_seed: int
    versions: dict = field(default_factory=dict)
    created: str = ""
    files: dict = field(default_factory=dict)
    schema_version: int = 1


def new_manifest(subcommand: str, cfg: ExperimentConfig,
                 base_seed: int) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        config_hash=config_hash(cfg),
        base_seed=base_seed,
        versions={
            "drifthom": PACKAGE_VERSION,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
        },
        created=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )


def record_file(manifest: RunManifest, path: str) -> None:
    manifest.files[os.path.basename(path)] = file_digest(path)


def write_manifest(manifest: RunManifest, out_dir: str) -> str:
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
