"""On-disk artifact store with a content-addressed manifest.

Layout under the store root::

    manifest.json            stage records: input key, artifact paths + sha256
    scenarios/<split>.json   scenario set files
    datasets/*.bin           demonstration datasets
    checkpoints/run<i>/epoch<e>.ckpt
    runs/                    training curves and the run manifest
    matrices/                score matrices (csv + json sidecar)
    results/                 selection, sweeps, ablations, breakdowns
    report/                  report.md and svg plots

A stage is skipped when its recorded input key matches and every artifact
still hashes to its recorded digest. The manifest holds only relative paths
and digests, so two stores built from the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

MANIFEST = "manifest.json"
STORE_FORMAT = "soelab-store"
STORE_VERSION = 1


class StoreError(RuntimeError):
    pass


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_key(stage: str, params: dict, inputs: dict[str, str] | None = None) -> str:
    """Digest of a stage's parameters and upstream artifact digests."""
    doc = {"stage": stage, "params": params, "inputs": dict(sorted((inputs or {}).items()))}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class RunStore:
    def __init__(self, root, experiment_seed: int | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / MANIFEST
        if path.exists():
            self.manifest = json.loads(path.read_text())
            if self.manifest.get("format") != STORE_FORMAT or self.manifest.get("version") != STORE_VERSION:
                raise StoreError(f"{path}: not a version-{STORE_VERSION} store manifest")
        else:
            self.manifest = {"format": STORE_FORMAT, "version": STORE_VERSION, "experiment_seed": None, "stages": {}}
        if experiment_seed is not None:
            have = self.manifest["experiment_seed"]
            if have is not None and have != int(experiment_seed) and self.manifest["stages"]:
                raise StoreError(f"store {self.root} belongs to experiment_seed {have}; "
                                 f"use a new store for experiment_seed {experiment_seed}")
            self.manifest["experiment_seed"] = int(experiment_seed)
            self._flush()

    # -- paths ---------------------------------------------------------------
    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def subdir(self, rel: str) -> Path:
        p = self.root / rel
        p.mkdir(parents=True, exist_ok=True)
        return p

    def rel(self, path) -> str:
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()

    # -- manifest ------------------------------------------------------------
    def _flush(self) -> None:
        data = json.dumps(self.manifest, sort_keys=True, indent=1).encode() + b"\n"
        _write_atomic(self.root / MANIFEST, data)

    def record(self, stage: str) -> dict | None:
        return self.manifest["stages"].get(stage)

    def is_done(self, stage: str, key: str) -> bool:
        rec = self.record(stage)
        if rec is None or rec["key"] != key:
            return False
        for rel, digest in rec["artifacts"].items():
            p = self.root / rel
            if not p.exists() or file_digest(p) != digest:
                return False
        return True

    def commit(self, stage: str, key: str, paths, summary: dict | None = None) -> dict:
        arts = {self.rel(p): file_digest(p) for p in sorted(paths, key=lambda q: str(q))}
        rec = {"key": key, "artifacts": dict(sorted(arts.items())), "summary": summary or {}}
        self.manifest["stages"][stage] = rec
        self._flush()
        return rec

    def invalidate(self, stage: str) -> None:
        if self.manifest["stages"].pop(stage, None) is not None:
            self._flush()

    def artifact_digest(self, stage: str) -> str:
        """Combined digest of a completed stage's artifacts, used as a downstream input."""
        rec = self.record(stage)
        if rec is None:
            raise StoreError(f"stage {stage!r} has not been run in {self.root}")
        return hashlib.sha256(json.dumps(rec["artifacts"], sort_keys=True).encode()).hexdigest()

    # -- helpers -------------------------------------------------------------
    def write_json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        _write_atomic(p, json.dumps(obj, sort_keys=True, indent=1).encode() + b"\n")
        return p

    def read_json(self, rel: str):
        return json.loads((self.root / rel).read_text())

    def write_bytes(self, rel: str, data: bytes) -> Path:
        p = self.path(rel)
        _write_atomic(p, data)
        return p
