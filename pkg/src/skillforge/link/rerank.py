"""LLM reranking of retrieved candidates: prompt construction and parsing of
the model's reordered list back into a full permutation of candidate ids.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Sequence

from ..fuzzy import token_sort_ratio, turkish_lower
from ..prompts import template
from ..providers import ChatRequest
from ..taxonomy import Taxonomy
from .retrieval import Candidate, RankedList

log = logging.getLogger(__name__)

BASES = ("none", "key", "context", "context_description")
REASONING = ("none", "plain", "causal")
FUZZY_LINE_THRESHOLD = 85.0

_REASONING_ALIASES = {"reason": "plain", "plain": "plain", "causal": "causal"}
_HEADING = re.compile(r"(?:s[ıi]ralama|ranking)\s*:", re.IGNORECASE)
_LIST_START = re.compile(r"^\s*(?:\*\*)?1\s*[.)]")
_MARKER = re.compile(r"^\s*(?:\d+\s*[.)\-:]|[-*•])\s*")
_DECOR = re.compile(r"[*_`\"“”'‘’]")


@dataclass(frozen=True)
class RerankStrategy:
    base: str = "none"
    reasoning: str = "none"

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown rerank base {self.base!r}")
        if self.reasoning not in REASONING:
            raise ValueError(f"unknown reasoning variant {self.reasoning!r}")
        if self.base == "none" and self.reasoning != "none":
            raise ValueError("reasoning requires a rerank base")

    @classmethod
    def parse(cls, text: str) -> "RerankStrategy":
        """``none``, ``key``, ``context``, ``context_description``, optionally
        prefixed with ``reason+`` or ``causal+``."""
        text = text.strip().lower().replace("-", "_")
        reasoning = "none"
        if "+" in text:
            head, text = text.split("+", 1)
            if head not in _REASONING_ALIASES:
                raise ValueError(f"unknown reasoning variant {head!r}")
            reasoning = _REASONING_ALIASES[head]
        return cls(text, reasoning)

    def __str__(self) -> str:
        if self.reasoning == "none":
            return self.base
        return f"{'reason' if self.reasoning == 'plain' else 'causal'}+{self.base}"

    @property
    def enabled(self) -> bool:
        return self.base != "none"

    @property
    def template_name(self) -> str:
        return {"none": "rerank", "plain": "reason_rerank", "causal": "causal_rerank"}[self.reasoning]


def _candidates(candidates: RankedList | Sequence[Candidate]) -> list[Candidate]:
    return list(candidates.candidates if isinstance(candidates, RankedList) else candidates)


def build_rerank_prompt(
    span: str,
    sentence_context: str,
    candidates: RankedList | Sequence[Candidate],
    strategy: RerankStrategy,
    taxonomy: Taxonomy | None = None,
    model: str = "gpt-4o",
    k: int = 10,
) -> ChatRequest:
    cands = _candidates(candidates)
    if not strategy.enabled:
        raise ValueError("rerank strategy 'none' has no prompt")
    if not 1 <= len(cands) <= k:
        raise ValueError(f"expected 1..{k} candidates, got {len(cands)}")
    if strategy.base == "context_description" and taxonomy is None:
        raise ValueError("context_description needs the taxonomy for descriptions")

    lines = [template(strategy.template_name), "", f"Yetenek: {span}"]
    if strategy.base in ("context", "context_description"):
        lines.append(f"Cümle: {sentence_context}")
    lines.append("ESCO yetenekleri:")
    for n, c in enumerate(cands, start=1):
        lines.append(f"{n}. {c.label}")
        if strategy.base == "context_description":
            desc = taxonomy[c.taxonomy_id].description.strip()
            if desc:
                lines.append(f"   Açıklama: {desc}")
    return ChatRequest(model, ({"role": "user", "content": "\n".join(lines)},), 0.0)


def _ranking_section(text: str, reasoning: str, warnings: list[str]) -> tuple[str, str]:
    """(ranking text, rationale text)."""
    if reasoning == "none":
        return text, ""
    heads = list(_HEADING.finditer(text))
    if heads:
        cut = heads[-1].end()
        return text[cut:], text[: heads[-1].start()].strip()
    lines = text.splitlines()
    starts = [i for i, line in enumerate(lines) if _LIST_START.match(line)]
    if starts:
        cut = starts[-1]
        return "\n".join(lines[cut:]), "\n".join(lines[:cut]).strip()
    warnings.append("no ranking heading or numbered list found; scanning whole response")
    return text, ""


def _clean(line: str) -> str:
    return turkish_lower(_DECOR.sub("", _MARKER.sub("", line))).strip(" \t.:;,")


def parse_rerank_response(
    text: str,
    candidates: RankedList | Sequence[Candidate],
    reasoning: str = "none",
    warnings: list[str] | None = None,
) -> list[str]:
    """Reordered candidate ids; always a full permutation of ``candidates``.

    Each line is matched to the candidate whose label it contains (longest
    label wins), else to the candidate with the best token-sort ratio if that
    reaches 85. Candidates never mentioned keep their retrieval order at the
    end of the list.
    """
    cands = _candidates(candidates)
    if not cands:
        raise ValueError("no candidates to rerank")
    warn: list[str] = [] if warnings is None else warnings
    section, _ = _ranking_section(text or "", reasoning, warn)

    labels = [turkish_lower(c.label).strip() for c in cands]
    by_length = sorted(range(len(cands)), key=lambda i: (-len(labels[i]), i))
    placed: list[int] = []
    used = set()
    for raw in section.splitlines():
        line = _clean(raw)
        if not line:
            continue
        hit = next((i for i in by_length if labels[i] and labels[i] in line), None)
        if hit is None:
            best, best_score = None, FUZZY_LINE_THRESHOLD
            for i, lab in enumerate(labels):
                s = token_sort_ratio(line, lab)
                if s >= best_score and (best is None or s > best_score):
                    best, best_score = i, s
            hit = best
        if hit is not None and hit not in used:
            used.add(hit)
            placed.append(hit)
    if not placed:
        msg = "parse degraded: no candidate recognized in rerank response"
        warn.append(msg)
        log.warning(msg)
    placed.extend(i for i in range(len(cands)) if i not in used)
    return [cands[i].taxonomy_id for i in placed]


def rationale(text: str, reasoning: str) -> str | None:
    if reasoning == "none":
        return None
    return _ranking_section(text or "", reasoning, [])[1] or None
