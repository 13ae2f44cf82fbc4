"""
Model checkpoints: one binary file per trained model plus a JSON sidecar with
experiment provenance.

File layout:
    8 bytes   magic b"MUHARCKP"
    4 bytes   format version, uint32 little-endian
    4 bytes   header length n, uint32 little-endian
    n bytes   UTF-8 JSON header (model kind, architecture, blob table, Adam step, RNG state)
    rest      float32 little-endian blobs in header order
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from utils.errors import ChecksumError, MissingCheckpointError, VersionMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"MUHARCKP"
CHECKPOINT_VERSION = 1
BLOB_DTYPE = np.dtype("<f4")
CHECKPOINT_SUFFIX = ".ckpt"
SIDECAR_SUFFIX = ".json"


@dataclass
class Checkpoint:
    kind: str
    architecture: dict
    parameters: dict  # name -> float32 array
    optimizer_state: dict = None
    rng_state: dict = None
    metadata: dict = field(default_factory=dict)


def git_blob_hash(data):
    """
    Content hash the way git names blobs: sha1 of 'blob <len>\\0' + content

    Parameters:
    data (bytes): File content

    Returns:
    str: Hex digest
    """
    digest = hashlib.sha1()
    digest.update(f"blob {len(data)}\0".encode("ascii"))
    digest.update(data)
    return digest.hexdigest()


def _blobs(group, arrays):
    for name in sorted(arrays) if group != "param" else arrays:
        yield group, name, np.ascontiguousarray(arrays[name], dtype=BLOB_DTYPE)


def encode_checkpoint(checkpoint):
    """Serialize a Checkpoint to bytes"""
    groups = [("param", checkpoint.parameters)]
    adam = checkpoint.optimizer_state
    if adam:
        groups += [("adam_m", adam["m"]), ("adam_v", adam["v"])]

    table, payload, offset = [], [], 0
    for group, arrays in groups:
        for kind, name, array in _blobs(group, arrays):
            data = array.tobytes(order="C")
            table.append({"group": kind, "name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(data)})
            payload.append(data)
            offset += len(data)

    header = {
        "kind": checkpoint.kind,
        "architecture": checkpoint.architecture,
        "blobs": table,
        "adam_t": adam["t"] if adam else None,
        "rng_state": checkpoint.rng_state,
        "metadata": checkpoint.metadata,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix = MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
    return prefix + header_bytes + b"".join(payload)


def decode_checkpoint(data, source="<bytes>"):
    """Parse bytes written by encode_checkpoint"""
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise ChecksumError(f"{source}: not a checkpoint file")
    version, header_length = struct.unpack("<II", data[len(MAGIC):len(MAGIC) + 8])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{source}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start:start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumError(f"{source}: unreadable checkpoint header") from e
    body = data[start + header_length:]

    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for blob in header["blobs"]:
        end = blob["offset"] + blob["nbytes"]
        if end > len(body):
            raise ChecksumError(f"{source}: checkpoint is truncated at blob {blob['name']}")
        array = np.frombuffer(body[blob["offset"]:end], dtype=BLOB_DTYPE).reshape(blob["shape"]).copy()
        groups[blob["group"]][blob["name"]] = array

    optimizer_state = None
    if header.get("adam_t") is not None:
        optimizer_state = {"t": header["adam_t"], "m": groups["adam_m"], "v": groups["adam_v"]}
    return Checkpoint(
        kind=header["kind"],
        architecture=header["architecture"],
        parameters=groups["param"],
        optimizer_state=optimizer_state,
        rng_state=header.get("rng_state"),
        metadata=header.get("metadata") or {},
    )


def save_checkpoint(path, checkpoint, sidecar=None):
    """
    Write a checkpoint and, when given, its provenance sidecar

    Parameters:
    path (str | Path): Target .ckpt file
    checkpoint (Checkpoint): Model state
    sidecar (dict): Provenance fields (config, seed, dataset checksum, loss curve)

    Returns:
    str: git-style content hash of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(checkpoint)
    path.write_bytes(data)
    content_hash = git_blob_hash(data)
    if sidecar is not None:
        record = dict(sidecar)
        record["kind"] = checkpoint.kind
        record["content_hash"] = content_hash
        sidecar_path(path).write_text(json.dumps(record, indent=1, sort_keys=True))
    logger.info(f"Saved {checkpoint.kind} checkpoint {path} ({len(data)} bytes, {content_hash[:12]})")
    return content_hash


def sidecar_path(path):
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def load_checkpoint(path):
    """
    Read a checkpoint file

    Parameters:
    path (str | Path): .ckpt file

    Returns:
    Checkpoint: Stored state, with the content hash in metadata['content_hash']
    """
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint not found: {path} (run 'train' first)")
    data = path.read_bytes()
    checkpoint = decode_checkpoint(data, str(path))
    checkpoint.metadata["content_hash"] = git_blob_hash(data)
    return checkpoint


def load_sidecar(path):
    target = sidecar_path(path)
    if not target.exists():
        raise MissingCheckpointError(f"checkpoint sidecar not found: {target}")
    return json.loads(target.read_text())


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
