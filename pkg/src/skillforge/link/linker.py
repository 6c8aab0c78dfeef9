"""Span -> taxonomy id: multi-skill check, splitting, retrieval, reranking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..corpus import SkillSpan
from ..providers import CacheMissError, Provider, ProviderError
from ..taxonomy import Taxonomy
from .multiskill import MultiSkillModel, classify_multiskill
from .rerank import RerankStrategy, build_rerank_prompt, parse_rerank_response, rationale
from .retrieval import DEFAULT_K, EmbeddingRetriever, FuzzyRetriever, RankedList
from .splitter import DEFAULT_DELIMITERS, has_delimiter, split_multiskill

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkedSkill:
    span: SkillSpan
    query: str
    retrieved: RankedList
    ordering: tuple[str, ...]
    strategy: str = "none"
    rationale_text: str | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ordering", tuple(self.ordering))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if sorted(self.ordering) != sorted(self.retrieved.ids):
            raise ValueError("ordering must be a permutation of the retrieved ids")

    @property
    def chosen(self) -> str | None:
        return self.ordering[0] if self.ordering else None


@dataclass
class LinkConfig:
    k: int = DEFAULT_K
    delimiters: Sequence[str] = DEFAULT_DELIMITERS
    rerank_model: str = "gpt-4o"
    # sub-queries of a split span whose best retrieval score is below this are dropped
    min_subquery_score: float | None = None


def make_retriever(
    method: str,
    taxonomy: Taxonomy,
    provider: Provider | None = None,
    embedding_model: str | None = None,
    k: int = DEFAULT_K,
    index=None,
    passage_mode: str = "label",
):
    if method == "fuzzy":
        return FuzzyRetriever(k=k).fit(taxonomy)
    if method == "embedding":
        kw = {"model": embedding_model} if embedding_model else {}
        return EmbeddingRetriever(provider=provider, k=k, index=index, passage_mode=passage_mode, **kw).fit(taxonomy)
    raise ValueError(f"unknown retrieval method {method!r}")


def expand_span(
    span: SkillSpan,
    model: MultiSkillModel | None,
    delimiters: Sequence[str],
    warnings: list[str],
) -> list[str]:
    is_multi = classify_multiskill(span, model) if model is not None else span.is_multi
    if is_multi and has_delimiter(span.surface, delimiters):
        parts = split_multiskill(span.surface, delimiters, warnings)
        if parts:
            return parts
    return [span.surface]


def link(
    spans: Sequence[SkillSpan],
    taxonomy: Taxonomy,
    retriever,
    strategy: RerankStrategy | str = "none",
    provider: Provider | None = None,
    *,
    sentences: Mapping[tuple[str, int], str] | None = None,
    multiskill_model: MultiSkillModel | None = None,
    config: LinkConfig | None = None,
) -> list[LinkedSkill]:
    """Link every span; split multi-skill spans yield one result per sub-query.

    ``sentences`` maps (job_id, sentence_index) to the sentence text used by
    the context rerank prompts. Output order follows ``spans``.
    """
    if isinstance(strategy, str):
        strategy = RerankStrategy.parse(strategy)
    config = config or LinkConfig()
    if strategy.enabled and provider is None:
        raise ValueError("reranking needs a provider")
    sentences = sentences or {}

    jobs: list[tuple[SkillSpan, str, list[str]]] = []
    for span in spans:
        warns: list[str] = []
        for q in expand_span(span, multiskill_model, config.delimiters, warns):
            jobs.append((span, q, warns))

    unique = list(dict.fromkeys(q for _, q, _ in jobs))
    retrieved = dict(zip(unique, _retrieve_all(retriever, unique, config.k)))

    if config.min_subquery_score is not None:
        kept = []
        for span, q, warns in jobs:
            rl = retrieved[q]
            multi = sum(1 for s, _, _ in jobs if s is span) > 1
            if multi and (not rl.candidates or rl.candidates[0].score < config.min_subquery_score):
                continue
            kept.append((span, q, warns))
        jobs = kept

    def one(job):
        span, q, span_warns = job
        rl = retrieved[q]
        warns = list(span_warns)
        ordering = rl.ids
        why = None
        if strategy.enabled and rl.candidates:
            context = sentences.get((span.job_id, span.sentence_index), "")
            request = build_rerank_prompt(
                q, context, rl, strategy, taxonomy, config.rerank_model, max(config.k, len(rl))
            )
            try:
                text = provider.chat(request, stage="rerank").content
            except CacheMissError:
                raise
            except ProviderError as exc:
                warns.append(f"rerank failed, keeping retrieval order: {exc}")
                log.warning("rerank failed for %r: %s", q, exc)
            else:
                ordering = parse_rerank_response(text, rl, strategy.reasoning, warns)
                why = rationale(text, strategy.reasoning)
        return LinkedSkill(span, q, rl, ordering, str(strategy), why, warns)

    if provider is not None:
        return provider.map(one, jobs)
    return [one(j) for j in jobs]


def _retrieve_all(retriever, queries: list[str], k: int) -> list[RankedList]:
    if not queries:
        return []
    if hasattr(retriever, "predict") and getattr(retriever, "k", k) == k:
        return retriever.predict(queries)
    return [retriever.retrieve(q, k) for q in queries]
