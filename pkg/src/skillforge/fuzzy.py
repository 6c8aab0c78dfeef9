"""Token-sort ratio on top of the insert/delete (indel) edit distance.

The indel distance between ``a`` and ``b`` is ``|a| + |b| - 2 * LCS(a, b)``;
the LCS length is computed with the bit-parallel recurrence of Hyyrö, one
machine-word-style step per character of the second string.
"""
from __future__ import annotations

import re
import unicodedata
from typing import Mapping

_WS = re.compile(r"\s+")
_TR_UPPER = str.maketrans({"I": "ı", "İ": "i"})


def turkish_lower(text: str) -> str:
    """Lowercase with Turkish dotted/dotless i rules (``I`` -> ``ı``, ``İ`` -> ``i``)."""
    return unicodedata.normalize("NFC", text).translate(_TR_UPPER).lower()


def sort_tokens(text: str) -> str:
    return " ".join(sorted(_WS.split(turkish_lower(text).strip()))) if text.strip() else ""


def char_masks(text: str) -> dict[str, int]:
    masks: dict[str, int] = {}
    for i, ch in enumerate(text):
        masks[ch] = masks.get(ch, 0) | (1 << i)
    return masks


def lcs_length(a: str, b: str, masks: Mapping[str, int] | None = None) -> int:
    if not a or not b:
        return 0
    if masks is None:
        masks = char_masks(a)
    full = (1 << len(a)) - 1
    v = full
    for ch in b:
        u = v & masks.get(ch, 0)
        v = ((v + u) | (v - u)) & full
    return len(a) - bin(v).count("1")


def indel_distance(a: str, b: str) -> int:
    return len(a) + len(b) - 2 * lcs_length(a, b)


def ratio(a: str, b: str, masks: Mapping[str, int] | None = None) -> float:
    """100 * (1 - indel / (|a| + |b|)); two empty strings score 100."""
    total = len(a) + len(b)
    if total == 0:
        return 100.0
    indel = total - 2 * lcs_length(a, b, masks)
    return 100.0 * (1.0 - indel / total)


def token_sort_ratio(a: str, b: str) -> float:
    return ratio(sort_tokens(a), sort_tokens(b))
