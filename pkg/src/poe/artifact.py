"""POEM binary weight container.

Layout:
    magic   "POEM" (4 bytes)
    version u16 little-endian
    header_len u32 little-endian
    header  JSON (utf-8): role, dtype, ordered tensor names+shapes,
            component description, digests, extra metadata
    payload tensors concatenated in header order, row-major float32 LE
    trailer CRC32 (IEEE) of header+payload, u32 little-endian

Headers contain nothing nondeterministic, so identical components serialize
to identical bytes and the artifact's own hash can serve as a content address.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .nets import (
    BlockNet,
    BranchedModel,
    HeadNet,
    LibraryNet,
    load_named_tensors,
    state_digest,
)

MAGIC = b"POEM"
VERSION = 1
ROLES = ("oracle", "library", "expert", "task-model")

_KIND_TO_CLASS = {
    "blocknet": BlockNet,
    "library": LibraryNet,
    "head": HeadNet,
    "branched": BranchedModel,
}


class ArtifactError(ValueError):
    """Malformed, corrupt, or inconsistent POEM data."""


@dataclass
class LoadedArtifact:
    role: str
    component: object
    meta: dict
    digests: dict
    byte_size: int
    artifact_digest: str  # sha256 of the full file bytes (content address)


def component_digest(component) -> str:
    return state_digest(component.named_tensors())


def artifact_bytes(component, role: str, meta: dict | None = None) -> bytes:
    """Serialize a component (BlockNet/LibraryNet/HeadNet/BranchedModel)."""
    if role not in ROLES:
        raise ArtifactError(f"unknown role {role!r}")
    named = component.named_tensors()
    if len(named) == 0:
        raise ArtifactError("refusing to write an artifact with no tensors")
    header = {
        "role": role,
        "dtype": "f32",
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
        "desc": component.describe(),
        "digests": {"content": state_digest(named)},
        "meta": dict(meta or {}),
    }
    if "library_digest" in header["meta"]:
        header["digests"]["library"] = header["meta"]["library_digest"]
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in named)
    crc = zlib.crc32(header_bytes + payload) & 0xFFFFFFFF
    return (
        MAGIC
        + struct.pack("<H", VERSION)
        + struct.pack("<I", len(header_bytes))
        + header_bytes
        + payload
        + struct.pack("<I", crc)
    )


def artifact_id(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def save_artifact(component, path: str, role: str, meta: dict | None = None) -> int:
    """Write the component; returns the byte size (feeds volume accounting)."""
    blob = artifact_bytes(component, role, meta)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)


def parse_artifact(blob: bytes) -> LoadedArtifact:
    """Strict parse: any malformed input raises ArtifactError, never crashes."""
    try:
        if len(blob) < 14:
            raise ArtifactError("artifact too short")
        if blob[:4] != MAGIC:
            raise ArtifactError("bad magic")
        (version,) = struct.unpack_from("<H", blob, 4)
        if version != VERSION:
            raise ArtifactError(f"unsupported version {version}")
        (header_len,) = struct.unpack_from("<I", blob, 6)
        header_end = 10 + header_len
        if header_len == 0 or header_end + 4 > len(blob):
            raise ArtifactError("header length out of bounds")
        header_bytes = blob[10:header_end]
        payload = blob[header_end:-4]
        (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
        if zlib.crc32(header_bytes + payload) & 0xFFFFFFFF != crc_stored:
            raise ArtifactError("CRC mismatch: artifact corrupt")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ArtifactError(f"header is not valid JSON: {e}") from e
        if not isinstance(header, dict):
            raise ArtifactError("header must be a JSON object")
        role = header.get("role")
        if role not in ROLES:
            raise ArtifactError(f"unknown role {role!r}")
        if header.get("dtype") != "f32":
            raise ArtifactError("unsupported dtype")
        tensors = header.get("tensors")
        desc = header.get("desc")
        if not isinstance(tensors, list) or not isinstance(desc, dict):
            raise ArtifactError("header missing tensors/desc")

        entries = {}
        offset = 0
        for spec in tensors:
            if not isinstance(spec, dict) or "name" not in spec or "shape" not in spec:
                raise ArtifactError("malformed tensor entry")
            shape = tuple(int(d) for d in spec["shape"])
            if any(d < 0 for d in shape):
                raise ArtifactError("negative tensor dimension")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            nbytes = count * 4
            if offset + nbytes > len(payload):
                raise ArtifactError("payload shorter than header promises")
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
            entries[str(spec["name"])] = arr
            offset += nbytes
        if offset != len(payload):
            raise ArtifactError("payload longer than header promises")

        kind = desc.get("kind")
        cls = _KIND_TO_CLASS.get(kind)
        if cls is None:
            raise ArtifactError(f"unknown component kind {kind!r}")
        component = cls.from_description(desc)
        load_named_tensors(component, entries)
        digests = header.get("digests", {})
        content = component_digest(component)
        if digests.get("content") not in (None, content):
            raise ArtifactError("content digest mismatch")
        return LoadedArtifact(
            role=role,
            component=component,
            meta=header.get("meta", {}),
            digests=digests,
            byte_size=len(blob),
            artifact_digest=artifact_id(blob),
        )
    except ArtifactError:
        raise
    except Exception as e:  # struct errors, bad shapes, ... -> typed error
        raise ArtifactError(f"malformed artifact: {type(e).__name__}: {e}") from e


def load_artifact(path: str) -> LoadedArtifact:
    with open(path, "rb") as f:
        blob = f.read()
    return parse_artifact(blob)
