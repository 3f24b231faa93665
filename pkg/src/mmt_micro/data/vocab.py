"""Token/index vocabulary with fixed reserved specials."""

from __future__ import annotations

from collections import Counter
from pathlib import Path

from ..errors import FormatError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Bijective token <-> index map; indices 0..3 are the specials."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise FormatError(f"vocabulary must start with {SPECIALS}")
        if len(set(tokens)) != len(tokens):
            raise FormatError("vocabulary contains duplicate tokens")
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, sentences) -> "Vocabulary":
        """Frequency-then-lexicographic ordering after the specials."""
        freq: Counter[str] = Counter()
        for sentence in sentences:
            freq.update(sentence)
        for special in SPECIALS:
            freq.pop(special, None)
        ordered = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(list(SPECIALS) + [tok for tok, _ in ordered])

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list[int]:
        return [self._ids.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids, strip_specials: bool = True) -> list[str]:
        toks = [self._tokens[i] for i in ids]
        if strip_specials:
            toks = [t for t in toks if t not in SPECIALS]
        return toks

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if len(lines) < 4:
            raise FormatError(f"{path}: vocabulary file too short")
        return cls(lines)
