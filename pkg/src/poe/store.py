"""Pool persistence: a JSON manifest alongside one POEM file per component.

The manifest carries the task universe, per-file digests and byte sizes, the
distillation hyperparameters, and the input normalization constants, so a
serving process needs nothing else to answer queries.
"""

from __future__ import annotations

import json
import os
import time
from typing import Optional

from .artifact import ArtifactError, load_artifact, save_artifact
from .consolidate import ExpertPool, PoolIntegrityError
from .distill import ExpertRecord
from .tasks import TaskError, TaskUniverse

MANIFEST_NAME = "pool.json"


class StoreError(ValueError):
    """Unreadable or inconsistent pool directory."""


def save_pool(pool: ExpertPool, directory: str) -> str:
    """Write library.poem, expert_<id>.poem, and the manifest; returns the
    manifest path and fills in the pool's byte sizes."""
    os.makedirs(directory, exist_ok=True)
    pool.validate()
    lib_file = "library.poem"
    pool.library_bytes = save_artifact(
        pool.library, os.path.join(directory, lib_file), "library",
        meta={"digest": pool.library_digest},
    )
    experts_entry = {}
    for tid, rec in pool.experts.items():
        fname = f"expert_{tid}.poem"
        rec.byte_size = save_artifact(
            rec.head, os.path.join(directory, fname), "expert",
            meta={"task_id": tid, "library_digest": rec.library_digest, "provenance": rec.provenance},
        )
        experts_entry[tid] = {
            "file": fname,
            "bytes": rec.byte_size,
            "provenance": rec.provenance,
        }
    manifest = {
        "universe": pool.universe.to_dict(),
        "library": {"file": lib_file, "digest": pool.library_digest, "bytes": pool.library_bytes},
        "experts": experts_entry,
        "hyperparams": pool.hyperparams,
        "meta": {**pool.meta, "created_unix": time.time()},
    }
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def load_pool(path: str) -> ExpertPool:
    """Load a pool from a manifest path (or its directory), verifying file
    digests and cross-component consistency."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise StoreError(f"no pool manifest at {path}") from e
    except json.JSONDecodeError as e:
        raise StoreError(f"manifest is not valid JSON: {e}") from e

    base = os.path.dirname(path)
    try:
        universe = TaskUniverse.from_dict(manifest["universe"])
        lib_entry = manifest["library"]
        experts_entry = manifest["experts"]
        hyper = manifest.get("hyperparams", {})
    except (KeyError, TypeError, TaskError) as e:
        raise StoreError(f"malformed manifest: {e}") from e

    try:
        lib_art = load_artifact(os.path.join(base, lib_entry["file"]))
    except (ArtifactError, OSError, KeyError) as e:
        raise StoreError(f"library artifact unreadable: {e}") from e
    lib_digest = lib_art.digests.get("content", "")
    if lib_entry.get("digest") not in (None, lib_digest):
        raise PoolIntegrityError("library digest does not match the manifest")

    experts = {}
    for tid, entry in experts_entry.items():
        try:
            art = load_artifact(os.path.join(base, entry["file"]))
        except (ArtifactError, OSError, KeyError) as e:
            raise StoreError(f"expert {tid!r} artifact unreadable: {e}") from e
        experts[tid] = ExpertRecord(
            task_id=tid,
            head=art.component,
            library_digest=art.meta.get("library_digest", ""),
            provenance=art.meta.get("provenance", entry.get("provenance", "")),
            byte_size=art.byte_size,
            artifact_digest=art.artifact_digest,
        )

    pool = ExpertPool(
        universe=universe,
        library=lib_art.component,
        library_digest=lib_digest,
        experts=experts,
        hyperparams=hyper,
        library_bytes=lib_art.byte_size,
        meta=manifest.get("meta", {}),
    )
    pool.validate()
    return pool
