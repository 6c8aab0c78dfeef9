"""Rule-based expansion of multi-skill spans into candidate single skills."""
from __future__ import annotations

import logging
import re
from typing import Sequence

from ..fuzzy import turkish_lower

log = logging.getLogger(__name__)

DEFAULT_DELIMITERS = ("ve", "veya", "ya da", ",", "/", "-")
# split off even when glued to a word ("Excel/Word", "iyi,")
_DETACHABLE = {",", "/"}


def _tokenize(text: str, delimiters: Sequence[str]) -> list[str]:
    detach = [d for d in delimiters if d in _DETACHABLE]
    tokens = []
    for raw in text.split():
        if detach:
            parts = re.split("(" + "|".join(re.escape(d) for d in detach) + ")", raw)
            tokens.extend(p for p in parts if p)
        else:
            tokens.append(raw)
    return tokens


def _delimiter_patterns(delimiters: Sequence[str]) -> list[list[str]]:
    pats = [turkish_lower(d).split() for d in delimiters if d.strip()]
    return sorted(pats, key=len, reverse=True)


def _find_delimiter(tokens: list[str], patterns: list[list[str]]) -> tuple[int, int] | None:
    """(start, end) token range of the leftmost delimiter, longest match first."""
    lowered = [turkish_lower(t) for t in tokens]
    for i in range(len(tokens)):
        for pat in patterns:
            if lowered[i : i + len(pat)] == pat:
                return i, i + len(pat)
    return None


def _dedup(items):
    seen = set()
    out = []
    for it in items:
        if it and it not in seen:
            seen.add(it)
            out.append(it)
    return out


def _split_once(left: list[str], right: list[str]) -> list[list[str]]:
    if len(left) != len(right):
        if len(right) > len(left):
            shared = right[1:]
            return [left + shared, right[:1] + shared]
        shared = left[:-1]
        return [shared + left[-1:], shared + right]
    prefix, suffix = left[:-1], right[1:]
    conjuncts = [left[-1], right[0]]
    full = [prefix + [c] + suffix for c in conjuncts]
    with_prefix = [prefix + [c] for c in conjuncts] if prefix else []
    with_suffix = [[c] + suffix for c in conjuncts] if suffix else []
    return full + with_prefix + with_suffix


def split_multiskill(
    span: str,
    delimiters: Sequence[str] = DEFAULT_DELIMITERS,
    warnings: list[str] | None = None,
) -> list[str]:
    """All single-skill readings of ``span``.

    Unequal sides: the longer side's words away from the delimiter are shared
    by both conjuncts. Equal sides: the outermost words become an optional
    prefix/suffix, giving up to three variants per conjunct. Further
    delimiters are handled by recursing on the outputs.
    """
    patterns = _delimiter_patterns(delimiters)
    tokens = _tokenize(span, delimiters)
    return _dedup(_expand(tokens, patterns, warnings))


def _expand(tokens: list[str], patterns, warnings) -> list[str]:
    found = _find_delimiter(tokens, patterns)
    if found is None:
        return [" ".join(tokens)] if tokens else []
    start, end = found
    left, right = tokens[:start], tokens[end:]
    # adjacent delimiters ("ve ,") collapse into one
    while right:
        nxt = _find_delimiter(right, patterns)
        if nxt is None or nxt[0] != 0:
            break
        right = right[nxt[1] :]
    if not left or not right:
        msg = f"delimiter at span edge in {' '.join(tokens)!r}; emitting the other side unchanged"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return _expand(left or right, patterns, warnings)
    out = []
    for piece in _split_once(left, right):
        out.extend(_expand(piece, patterns, warnings))
    return out


def has_delimiter(span: str, delimiters: Sequence[str] = DEFAULT_DELIMITERS) -> bool:
    return _find_delimiter(_tokenize(span, delimiters), _delimiter_patterns(delimiters)) is not None
