"""Binary checkpoint files.

Layout: magic ``MMCK1\\0``, little-endian u32 header length, UTF-8 JSON
header (metadata plus a manifest of name/shape/offset for every array),
concatenated little-endian float32 payloads, and a trailing u32 CRC32 over
everything after the magic.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MMCK1\0"
VERSION = 1


@dataclass
class Checkpoint:
    """Named float32 arrays plus JSON-serializable metadata."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in ckpt.arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps(
        {"version": VERSION, "meta": ckpt.meta, "entries": entries},
        ensure_ascii=False, separators=(",", ":"),
    ).encode("utf-8")
    body = struct.pack("<I", len(header)) + header + b"".join(blobs)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + body + struct.pack("<I", crc))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    if len(raw) < len(MAGIC) + 8:
        raise FormatError(f"{path}: truncated checkpoint")
    body, (crc,) = raw[len(MAGIC):-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: checkpoint CRC mismatch")
    (header_len,) = struct.unpack("<I", body[:4])
    if len(body) < 4 + header_len:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(body[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable checkpoint header: {exc}") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
    payload = body[4 + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise FormatError(f"{path}: array {entry['name']!r} overruns the payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        )
    return Checkpoint(arrays=arrays, meta=header.get("meta", {}))
