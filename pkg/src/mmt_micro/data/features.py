"""Binary feature-map storage and channel-wise normalization.

File layout: magic ``MMFV1\\0``; little-endian u32 count, channels, width;
count * channels * width * width little-endian float32 values in (item,
channel, row, col) order; trailing u32 CRC32 over every byte after the
magic.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import AlignmentError, FormatError

MAGIC = b"MMFV1\0"
NORM_EPS = 1e-8


@dataclass
class FeatureStore:
    """In-memory stack of (channels, width, width) maps for one split."""

    maps: np.ndarray  # (N, C, w, w) float32
    normalized: bool = False

    def __post_init__(self):
        self.maps = np.ascontiguousarray(self.maps, dtype=np.float32)
        if self.maps.ndim != 4 or self.maps.shape[2] != self.maps.shape[3]:
            raise FormatError(f"feature maps must be (n, channels, w, w), got {self.maps.shape}")

    @property
    def count(self) -> int:
        return self.maps.shape[0]

    @property
    def channels(self) -> int:
        return self.maps.shape[1]

    @property
    def width(self) -> int:
        return self.maps.shape[2]

    def __len__(self) -> int:
        return self.count

    def positions(self) -> np.ndarray:
        """Flatten grids to (n, width*width, channels) for attention."""
        n, c, w, _ = self.maps.shape
        return np.ascontiguousarray(self.maps.transpose(0, 2, 3, 1).reshape(n, w * w, c))

    def check_alignment(self, corpus_size: int, what: str = "corpus") -> None:
        if self.count != corpus_size:
            raise AlignmentError(
                f"feature store has {self.count} maps but {what} has {corpus_size} sentences"
            )


def normalize_channelwise(maps: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Scale each spatial position's channel vector to unit L2 norm
    (max(norm, eps) denominator, so zero columns stay zero). Idempotent."""
    maps = np.asarray(maps, dtype=np.float32)
    norms = np.sqrt((maps.astype(np.float64) ** 2).sum(axis=-3, keepdims=True))
    return (maps / np.maximum(norms, eps)).astype(np.float32)


def save_features(store: FeatureStore | np.ndarray, path: str | Path) -> None:
    maps = store.maps if isinstance(store, FeatureStore) else np.asarray(store, dtype=np.float32)
    n, c, w, w2 = maps.shape
    if w != w2:
        raise FormatError(f"feature maps must be square, got {maps.shape}")
    body = struct.pack("<III", n, c, w) + np.ascontiguousarray(maps, dtype="<f4").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + body + struct.pack("<I", crc))


def load_features(path: str | Path, normalize: bool = False) -> FeatureStore:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise FormatError(f"{path}: not a feature file (bad magic)")
    if len(raw) < len(MAGIC) + 12 + 4:
        raise FormatError(f"{path}: truncated feature file")
    body, (crc,) = raw[len(MAGIC):-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: feature file CRC mismatch")
    n, c, w = struct.unpack("<III", body[:12])
    expected = 12 + 4 * n * c * w * w
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload size {len(body) - 12} does not match header "
            f"({n} x {c} x {w} x {w} float32)"
        )
    maps = np.frombuffer(body[12:], dtype="<f4").reshape(n, c, w, w).copy()
    if normalize:
        return FeatureStore(maps=normalize_channelwise(maps), normalized=True)
    return FeatureStore(maps=maps, normalized=False)
