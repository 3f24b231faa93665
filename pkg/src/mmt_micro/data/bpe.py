"""Byte pair encoding: joint merge learning, greedy application, and the
plain-text model format.

Words are symbol tuples whose last symbol carries an end-of-word mark.
Applied segmentations tag every non-final piece with ``@@`` so joining the
pieces and dropping the markers recovers the original tokens exactly.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, FormatError

END_MARK = "</w>"
JOIN_MARK = "@@"


@dataclass
class BpeModel:
    """Ordered merge list; application order equals learned order."""

    merges: list[tuple[str, str]]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def merge_count(self) -> int:
        return len(self.merges)


def _symbolize(word: str) -> tuple[str, ...]:
    chars = list(word)
    chars[-1] += END_MARK
    return tuple(chars)


def _merge_word(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpora, n_merges: int) -> BpeModel:
    """Learn ``n_merges`` merges over the joint word frequencies of all
    corpora (token-list sentences). Ties break on the lexicographically
    smallest pair; stops early when no pair is left."""
    if n_merges < 1:
        raise ConfigError(f"n_merges must be at least 1, got {n_merges}")
    words: Counter[str] = Counter()
    for corpus in corpora:
        for sentence in corpus:
            words.update(sentence)
    if not words:
        raise ConfigError("cannot learn merges from empty corpora")

    vocab = Counter({_symbolize(w): f for w, f in words.items()})
    merges: list[tuple[str, str]] = []
    for _ in range(n_merges):
        pairs: Counter[tuple[str, str]] = Counter()
        for symbols, freq in vocab.items():
            for a, b in zip(symbols, symbols[1:]):
                pairs[(a, b)] += freq
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        merged = Counter()
        for symbols, freq in vocab.items():
            merged[_merge_word(symbols, best)] += freq
        vocab = merged
    return BpeModel(merges=merges)


def _segment(model: BpeModel, word: str) -> list[str]:
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    symbols = _symbolize(word)
    for pair in model.merges:
        if len(symbols) == 1:
            break
        symbols = _merge_word(symbols, pair)
    pieces = [s + JOIN_MARK for s in symbols[:-1]]
    pieces.append(symbols[-1][: -len(END_MARK)])
    model._cache[word] = pieces
    return pieces


def apply_bpe(model: BpeModel, tokens) -> list[str]:
    """Greedy left-to-right application of the learned merges, in order."""
    out: list[str] = []
    for token in tokens:
        out.extend(_segment(model, token))
    return out


def remove_bpe(subwords) -> list[str]:
    """Invert ``apply_bpe``: join marked pieces back into tokens."""
    tokens: list[str] = []
    current = ""
    for piece in subwords:
        if piece.endswith(JOIN_MARK):
            current += piece[: -len(JOIN_MARK)]
        else:
            tokens.append(current + piece)
            current = ""
    if current:
        # dangling continuation (e.g. truncated decoder output)
        tokens.append(current)
    return tokens


def save_bpe(model: BpeModel, path: str | Path) -> None:
    lines = [f"bpe v1 {model.merge_count}"]
    lines += [f"{a} {b}" for a, b in model.merges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_bpe(path: str | Path) -> BpeModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty merge file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "bpe" or head[1] != "v1":
        raise FormatError(f"{path}: bad merge file header {lines[0]!r}")
    try:
        count = int(head[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad merge count in header") from exc
    body = lines[1:]
    if len(body) != count:
        raise FormatError(f"{path}: header claims {count} merges, file has {len(body)}")
    merges = []
    for lineno, line in enumerate(body, start=2):
        parts = line.split(" ")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'left right', got {line!r}")
        merges.append((parts[0], parts[1]))
    return BpeModel(merges=merges)
