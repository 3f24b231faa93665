"""Parallel corpora and padded batch iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import AlignmentError, ConfigError
from ..tensor import Rng
from .vocab import BOS_ID, EOS_ID, PAD_ID, Vocabulary

log = logging.getLogger(__name__)


@dataclass
class ParallelCorpus:
    """Aligned source/target token-list sentences for one split."""

    src: list[list[str]]
    tgt: list[list[str]]
    split: str = "train"

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise AlignmentError(
                f"{self.split}: {len(self.src)} source vs {len(self.tgt)} target sentences"
            )
        for side, sentences in (("source", self.src), ("target", self.tgt)):
            for i, sent in enumerate(sentences):
                if not sent:
                    raise ConfigError(f"{self.split}: empty {side} sentence at line {i + 1}")

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class Batch:
    """Padded index arrays plus masks; ``indices`` aligns feature rows."""

    src_ids: np.ndarray    # (B, S) int64
    src_mask: np.ndarray   # (B, S) float32, 1 = valid
    tgt_in: np.ndarray     # (B, T) decoder inputs, starts with BOS
    tgt_ref: np.ndarray    # (B, T) references, ends with EOS
    tgt_mask: np.ndarray   # (B, T) float32 over references
    indices: np.ndarray    # (B,) corpus positions
    features: np.ndarray | None = None  # (B, P, C) when attached


def index_corpus(corpus: ParallelCorpus, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    """Map subword sentences to id arrays."""
    return [
        (np.asarray(src_vocab.encode(s), dtype=np.int64),
         np.asarray(tgt_vocab.encode(t), dtype=np.int64))
        for s, t in zip(corpus.src, corpus.tgt)
    ]


def make_batches(
    indexed,
    batch_size: int,
    rng: Rng | None = None,
    *,
    max_len: int = 100,
    features: np.ndarray | None = None,
) -> list[Batch]:
    """Chunk the (optionally shuffled) corpus into padded batches.

    Sentences longer than ``max_len`` subwords are truncated with a
    warning. Passing the same seeded rng state reproduces the epoch order.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    n = len(indexed)
    if features is not None and len(features) != n:
        raise AlignmentError(f"feature store has {len(features)} items for {n} sentences")
    order = rng.permutation(n) if rng is not None else np.arange(n)

    truncated = 0
    batches = []
    for start in range(0, n, batch_size):
        chunk = order[start : start + batch_size]
        srcs, tgts = [], []
        for i in chunk:
            s, t = indexed[int(i)]
            if len(s) > max_len or len(t) > max_len:
                truncated += 1
                s, t = s[:max_len], t[:max_len]
            srcs.append(s)
            tgts.append(t)
        s_len = max(len(s) for s in srcs)
        t_len = max(len(t) for t in tgts) + 1  # room for BOS/EOS framing
        b = len(chunk)
        src_ids = np.full((b, s_len), PAD_ID, dtype=np.int64)
        src_mask = np.zeros((b, s_len), dtype=np.float32)
        tgt_in = np.full((b, t_len), PAD_ID, dtype=np.int64)
        tgt_ref = np.full((b, t_len), PAD_ID, dtype=np.int64)
        tgt_mask = np.zeros((b, t_len), dtype=np.float32)
        for row, (s, t) in enumerate(zip(srcs, tgts)):
            src_ids[row, : len(s)] = s
            src_mask[row, : len(s)] = 1.0
            tgt_in[row, 0] = BOS_ID
            tgt_in[row, 1 : len(t) + 1] = t
            tgt_ref[row, : len(t)] = t
            tgt_ref[row, len(t)] = EOS_ID
            tgt_mask[row, : len(t) + 1] = 1.0
        batches.append(
            Batch(
                src_ids=src_ids, src_mask=src_mask,
                tgt_in=tgt_in, tgt_ref=tgt_ref, tgt_mask=tgt_mask,
                indices=chunk.astype(np.int64),
                features=None if features is None else features[chunk],
            )
        )
    if truncated:
        log.warning("truncated %d sentences beyond %d subwords", truncated, max_len)
    return batches
