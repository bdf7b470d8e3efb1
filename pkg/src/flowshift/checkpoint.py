"""Deterministic single-file checkpoints for a model plus its labeler.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header (sorted keys), then every array listed in the
header as raw little-endian float64 in header order. No timestamps or zip
metadata, so identical state always produces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .nn import Autoencoder, Layer
from .pseudo_label import LabelerState, labeler_from_dict, labeler_to_dict

MAGIC = b"FLOWSHFT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    model: Autoencoder
    labeler: LabelerState | None = None
    metadata: dict = field(default_factory=dict)


def _model_arrays(model: Autoencoder) -> tuple[dict, dict[str, np.ndarray]]:
    arch = {
        part: [layer.activation for layer in getattr(model, part)]
        for part in ("encoder", "decoder")
    }
    return arch, dict(model.named_parameters())


def to_bytes(ckpt: Checkpoint) -> bytes:
    arch, arrays = _model_arrays(ckpt.model)
    labeler_meta = None
    if ckpt.labeler is not None:
        labeler_meta, lab_arrays = labeler_to_dict(ckpt.labeler)
        arrays.update(lab_arrays)
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = {
        "architecture": arch,
        "arrays": entries,
        "labeler": labeler_meta,
        "metadata": ckpt.metadata,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(arrays[e["name"]], dtype="<f8").tobytes() for e in entries)
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + body


def from_bytes(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise DataError(f"{source}: truncated checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{source}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start : start + head_len])
    except ValueError as exc:
        raise DataError(f"{source}: corrupt checkpoint header") from exc
    offset = start + head_len
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"{source}: truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(e["shape"]).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise DataError(f"{source}: trailing bytes after arrays")
    parts = {}
    for part, activations in header["architecture"].items():
        parts[part] = [
            Layer(arrays[f"{part}.{i}.weight"], arrays[f"{part}.{i}.bias"], act)
            for i, act in enumerate(activations)
        ]
    model = Autoencoder(parts["encoder"], parts["decoder"])
    labeler = labeler_from_dict(header["labeler"], arrays) if header["labeler"] is not None else None
    return Checkpoint(model, labeler, header["metadata"])


def content_hash(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def save(ckpt: Checkpoint, path) -> str:
    """Write ``ckpt`` to ``path``; returns the sha256 of the written bytes."""
    blob = to_bytes(ckpt)
    Path(path).write_bytes(blob)
    return content_hash(blob)


def save_versioned(ckpt: Checkpoint, directory, stem: str = "model") -> tuple[Path, str]:
    """Write to ``<stem>-<hash12>.ckpt`` without touching existing files of other content."""
    blob = to_bytes(ckpt)
    digest = content_hash(blob)
    path = Path(directory) / f"{stem}-{digest[:12]}.ckpt"
    if not path.exists():
        path.write_bytes(blob)
    return path, digest


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    return from_bytes(path.read_bytes(), str(path))


def file_hash(path) -> str:
    return content_hash(Path(path).read_bytes())
