"""Text preprocessing: punctuation normalization, lowercasing, aggressive
hyphen splitting, whitespace cleanup.

The punctuation rule table below is the fixed, versioned definition of the
normalization step (see README for the documented behavior). Dash-class
punctuation becomes a free-standing hyphen token, while ASCII hyphens left
between word characters are split with the ``@-@`` join marker so the
original word is recoverable.
"""

from __future__ import annotations

import re
from pathlib import Path

from ..errors import FormatError

HYPHEN_JOINER = "@-@"

# applied in order, before lowercasing
PUNCT_RULES: tuple[tuple[str, str], ...] = (
    ("–", " - "),   # en dash
    ("—", " - "),   # em dash
    ("―", " - "),   # horizontal bar
    ("−", "-"),     # minus sign
    ("‘", "'"),     # left single quote
    ("’", "'"),     # right single quote
    ("‚", "'"),     # low single quote
    ("ʼ", "'"),     # modifier apostrophe
    ("“", '"'),     # left double quote
    ("”", '"'),     # right double quote
    ("„", '"'),     # low double quote
    ("«", '"'),     # left guillemet
    ("»", '"'),     # right guillemet
    ("…", "..."),   # ellipsis
    (" ", " "),     # no-break space
    (" ", " "),     # thin space
    (" ", " "),     # narrow no-break space
    ("´", "'"),     # acute accent
    ("`", "'"),     # grave accent
)

# a single ASCII hyphen directly between word characters
_HYPHEN_RE = re.compile(r"(?<=\w)-(?=\w)")
_WS_RE = re.compile(r"\s+")


def normalize_punctuation(text: str) -> str:
    for src, dst in PUNCT_RULES:
        text = text.replace(src, dst)
    return text


def split_hyphens(text: str) -> str:
    return _HYPHEN_RE.sub(f" {HYPHEN_JOINER} ", text)


def preprocess_text(line: str) -> str:
    """Normalize punctuation, lowercase, split intra-word hyphens, and
    collapse whitespace. Idempotent."""
    text = normalize_punctuation(line)
    text = text.lower()
    text = split_hyphens(text)
    return _WS_RE.sub(" ", text).strip()


def read_lines(path: str | Path) -> list[str]:
    """One sentence per line, strict UTF-8."""
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 ({exc})") from exc


def write_lines(path: str | Path, lines) -> None:
    """UTF-8, LF line endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
