"""Skill identification by prompting: few-shot prompt construction, marker
alignment back onto the gold tokenization, and ingestion of externally
tagged files.
"""
from __future__ import annotations

import bisect
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import (
    CorpusError,
    JobPosting,
    SkillSpan,
    TaggedSentence,
    iob_from_spans,
    load_corpus,
    spans_from_iob,
)
from .link.retrieval import query_text
from .prompts import SKILL_END, SKILL_START, template
from .providers import DEFAULT_EMBEDDING_MODEL, CacheMissError, ChatRequest, Provider, ProviderError

log = logging.getLogger(__name__)

KINDS = ("zero_shot", "static_few_shot", "dynamic_few_shot")
_KIND_ALIASES = {"zero": "zero_shot", "static": "static_few_shot", "dynamic": "dynamic_few_shot"}
_MARKER = re.compile(r"<?/?\s*skill_(start|end)\s*>", re.IGNORECASE)
_OUTPUT_LABEL = re.compile(r"^\s*(?:Çıktı|Output)\s*:\s*", re.IGNORECASE)


@dataclass(frozen=True)
class PromptStrategy:
    kind: str = "zero_shot"
    shots: int = 0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown prompt strategy {self.kind!r}")
        if kind == "zero_shot" and self.shots != 0:
            raise ValueError("zero_shot takes no examples")
        if kind != "zero_shot" and self.shots < 1:
            raise ValueError(f"{kind} needs shots >= 1")
        if kind == "static_few_shot" and self.shots % 2:
            raise ValueError("static few-shot needs an even number of shots (balanced examples)")

    def __str__(self) -> str:
        return self.kind if self.kind == "zero_shot" else f"{self.kind}:{self.shots}"


@dataclass
class TaggerOutput:
    job_id: str
    sentence_index: int
    sentence: TaggedSentence
    labels: tuple[str, ...]
    raw_llm_text: str | None = None
    alignment_warnings: list[str] = field(default_factory=list)
    area: str = ""

    def __post_init__(self):
        self.labels = tuple(self.labels)
        if len(self.labels) != len(self.sentence.tokens):
            raise ValueError("predicted labels do not match the token count")

    @property
    def predicted(self) -> TaggedSentence:
        return self.sentence.with_labels(self.labels)

    def spans(self) -> list[SkillSpan]:
        return spans_from_iob(self.predicted, self.job_id, self.sentence_index)


# ---------------------------------------------------------------- examples


def render_tagged(sentence: TaggedSentence) -> str:
    """Raw text with skill markers around each labeled span."""
    text = sentence.raw_text
    inserts: list[tuple[int, str]] = []
    for sp in spans_from_iob(sentence):
        inserts.append((sentence.tokens[sp.token_start].char_start, SKILL_START))
        inserts.append((sentence.tokens[sp.token_end - 1].char_end, SKILL_END))
    out, last = [], 0
    for pos, marker in inserts:
        out.append(text[last:pos])
        out.append(marker)
        last = pos
    out.append(text[last:])
    return "".join(out)


def has_skill(sentence: TaggedSentence) -> bool:
    return "B" in sentence.labels


@dataclass
class ExamplePool:
    """Labeled sentences (train + validation) with unit-norm embeddings."""

    sentences: list[TaggedSentence]
    embeddings: np.ndarray | None = None
    model: str = DEFAULT_EMBEDDING_MODEL
    source: tuple[str, ...] = ("train", "validation")

    def __post_init__(self):
        if self.embeddings is not None:
            E = np.asarray(self.embeddings, dtype=np.float64)
            if E.ndim != 2 or E.shape[0] != len(self.sentences):
                raise ValueError("one embedding row per pool sentence required")
            self.embeddings = E / np.linalg.norm(E, axis=1, keepdims=True)

    @classmethod
    def build(cls, sentences: Sequence[TaggedSentence], provider: Provider | None = None, model: str = DEFAULT_EMBEDDING_MODEL) -> "ExamplePool":
        sentences = list(sentences)
        emb = None
        if provider is not None and sentences:
            emb = provider.embed_matrix([query_text(s.raw_text, model) for s in sentences], model)
        return cls(sentences, emb, model)

    def __len__(self) -> int:
        return len(self.sentences)

    def nearest(self, vector, n: int) -> list[int]:
        """Indices of the ``n`` most cosine-similar pool sentences, ties by index."""
        if self.embeddings is None or not len(self):
            raise ValueError("dynamic few-shot needs a non-empty embedded pool")
        if n > len(self):
            raise ValueError(f"requested {n} examples from a pool of {len(self)}")
        q = np.asarray(vector, dtype=np.float64)
        if q.shape != (self.embeddings.shape[1],):
            raise ValueError("query embedding dimension does not match the pool")
        sims = self.embeddings @ (q / np.linalg.norm(q))
        order = np.lexsort((np.arange(len(sims)), -sims))
        return order[:n].tolist()

    def static_examples(self, shots: int) -> list[TaggedSentence]:
        """First ``shots/2`` sentences with skills and ``shots/2`` without,
        in pool order, interleaved."""
        half = shots // 2
        pos = [s for s in self.sentences if has_skill(s)][:half]
        neg = [s for s in self.sentences if not has_skill(s)][:half]
        if len(pos) < half or len(neg) < half:
            raise ValueError(f"pool cannot supply {half} sentences with and without skills")
        return [s for pair in zip(pos, neg) for s in pair]


def build_prompt(
    sentence: TaggedSentence,
    strategy: PromptStrategy,
    pool: ExamplePool | None = None,
    model: str = "claude-3-7-sonnet",
    query_vector=None,
    static: Sequence[TaggedSentence] | None = None,
) -> ChatRequest:
    """Instruction, then input/output example pairs, then the target sentence,
    all inline in one user message. Dynamic examples come nearest-first."""
    if strategy.kind == "zero_shot":
        examples: list[TaggedSentence] = []
    elif strategy.kind == "static_few_shot":
        if static is None:
            if pool is None:
                raise ValueError("static few-shot needs a configured example list or pool")
            static = pool.static_examples(strategy.shots)
        examples = list(static)[: strategy.shots]
    else:
        if pool is None or not len(pool):
            raise ValueError("dynamic few-shot needs a non-empty example pool")
        if strategy.shots > len(pool):
            raise ValueError(f"shots={strategy.shots} exceeds pool size {len(pool)}")
        if query_vector is None:
            raise ValueError("dynamic few-shot needs the target sentence embedding")
        examples = [pool.sentences[i] for i in pool.nearest(query_vector, strategy.shots)]

    parts = [template("identify"), ""]
    for ex in examples:
        parts += [f"Girdi: {ex.raw_text}", f"Çıktı: {render_tagged(ex)}", ""]
    parts += [f"Girdi: {sentence.raw_text}", "Çıktı:"]
    return ChatRequest(model, ({"role": "user", "content": "\n".join(parts)},), 0.0)


# --------------------------------------------------------------- alignment


def _normalize_ws(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to one space and trim; also return, for each
    output char, its index in ``text``."""
    out, src = [], []
    pending = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if out and pending is None:
                pending = i
            continue
        if pending is not None:
            out.append(" ")
            src.append(pending)
            pending = None
        out.append(ch)
        src.append(i)
    return "".join(out), src


def edit_alignment(a: str, b: str) -> list[int | None]:
    """For each char of ``a``, the index of the char of ``b`` it is aligned to
    (match or substitution) in a minimum unit-cost edit script, else None."""
    n, m = len(a), len(b)
    if a == b:
        return list(range(n))
    prev = list(range(m + 1))
    rows = [prev]
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ai != b[j - 1])
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            cur[j] = min(sub, dele, ins)
        rows.append(cur)
        prev = cur
    mapping: list[int | None] = [None] * n
    i, j = n, m
    while i > 0 and j > 0:
        d = rows[i][j]
        if d == rows[i - 1][j - 1] + (a[i - 1] != b[j - 1]):
            mapping[i - 1] = j - 1
            i, j = i - 1, j - 1
        elif d == rows[i - 1][j] + 1:
            i -= 1
        else:
            j -= 1
    return mapping


def _strip_markers(text: str, warnings: list[str]) -> tuple[str, list[tuple[int, int]]]:
    chunks, spans = [], []
    length = 0
    last = 0
    open_at = None
    for m in _MARKER.finditer(text):
        chunk = text[last : m.start()]
        chunks.append(chunk)
        length += len(chunk)
        last = m.end()
        if m.group(1).lower() == "start":
            if open_at is not None:
                warnings.append(f"unmatched {SKILL_START} at offset {open_at} dropped")
            open_at = length
        elif open_at is None:
            warnings.append(f"unmatched {SKILL_END} at offset {length} dropped")
        else:
            spans.append((open_at, length))
            open_at = None
    chunks.append(text[last:])
    if open_at is not None:
        warnings.append(f"unmatched {SKILL_START} at offset {open_at} dropped")
    return "".join(chunks), spans


def align_markers(original: TaggedSentence, llm_text: str) -> tuple[list[str], list[str]]:
    """Project marker-delimited spans in ``llm_text`` onto ``original``'s tokens.

    Returns (IOB labels, warnings). Boundaries snap outward to whole tokens.
    """
    if not llm_text or not llm_text.strip():
        raise ValueError("empty LLM output")
    warnings: list[str] = []
    text = unicodedata.normalize("NFC", llm_text)
    text = _OUTPUT_LABEL.sub("", text, count=1)
    stripped, marked = _strip_markers(text, warnings)

    a_norm, a_src = _normalize_ws(stripped)
    b_norm, b_src = _normalize_ws(original.raw_text)
    if a_norm != b_norm:
        warnings.append("LLM output differs from the input text; using edit alignment")
    mapping = edit_alignment(a_norm, b_norm)

    token_ranges: list[tuple[int, int]] = []
    for s, e in marked:
        lo = bisect.bisect_left(a_src, s)
        hi = bisect.bisect_left(a_src, e)
        hits = [mapping[j] for j in range(lo, hi) if mapping[j] is not None]
        if not hits:
            warnings.append(f"span {stripped[s:e]!r} has no counterpart in the input; dropped")
            continue
        raw_s, raw_e = b_src[min(hits)], b_src[max(hits)] + 1
        toks = [
            i for i, t in enumerate(original.tokens) if t.char_start < raw_e and t.char_end > raw_s
        ]
        if not toks:
            warnings.append(f"span {stripped[s:e]!r} covers no token; dropped")
            continue
        token_ranges.append((toks[0], toks[-1] + 1))

    merged: list[tuple[int, int]] = []
    for s, e in sorted(token_ranges):
        if merged and s < merged[-1][1]:
            warnings.append(f"overlapping spans merged at token {s}")
            merged[-1] = (merged[-1][0], max(merged[-1][1], e))
        else:
            merged.append((s, e))
    return iob_from_spans(merged, len(original.tokens)), warnings


# --------------------------------------------------------------- identify


def identify(
    postings: Sequence[JobPosting],
    strategy: PromptStrategy,
    provider: Provider,
    pool: ExamplePool | None = None,
    model: str = "claude-3-7-sonnet",
    fail_fast: bool = False,
    static: Sequence[TaggedSentence] | None = None,
) -> list[TaggerOutput]:
    """Tag every sentence of every posting; output order = input order.

    A provider failure marks that sentence all-O with a warning unless
    ``fail_fast``. Replay cache misses always propagate.
    """
    items = [(p, i, s) for p in postings for i, s in enumerate(p.sentences)]
    vectors = None
    if strategy.kind == "dynamic_few_shot":
        if pool is None or pool.embeddings is None:
            raise ValueError("dynamic few-shot needs an embedded example pool")
        if items:
            vectors = provider.embed_matrix([query_text(s.raw_text, pool.model) for _, _, s in items], pool.model)
    if strategy.kind == "static_few_shot" and static is None:
        if pool is None:
            raise ValueError("static few-shot needs a configured example list or pool")
        static = pool.static_examples(strategy.shots)

    def one(n: int) -> TaggerOutput:
        posting, idx, sent = items[n]
        qv = vectors[n] if vectors is not None else None
        request = build_prompt(sent, strategy, pool, model, qv, static)
        try:
            text = provider.chat(request, stage="identify").content
        except CacheMissError:
            raise
        except ProviderError as exc:
            if fail_fast:
                raise
            log.warning("identification failed for %s/%d: %s", posting.job_id, idx, exc)
            return TaggerOutput(posting.job_id, idx, sent, ("O",) * len(sent.tokens), None, [f"provider error: {exc}"], posting.area)
        if not text.strip():
            return TaggerOutput(posting.job_id, idx, sent, ("O",) * len(sent.tokens), text, ["empty LLM output"], posting.area)
        labels, warns = align_markers(sent, text)
        return TaggerOutput(posting.job_id, idx, sent, labels, text, warns, posting.area)

    return provider.map(one, range(len(items)))


def load_external_tags(path: str | Path, reference: Sequence[JobPosting] | None = None) -> list[TaggerOutput]:
    """Read a corpus-format file of predicted labels (e.g. from a fine-tuned
    sequence labeler). With ``reference``, job ids and tokens must match."""
    tagged = load_corpus(path)
    ref = {p.job_id: p for p in reference} if reference is not None else None
    outputs = []
    for p in tagged:
        gold_posting = None
        if ref is not None:
            gold_posting = ref.get(p.job_id)
            if gold_posting is None:
                raise CorpusError(f"job {p.job_id!r} is not in the reference corpus")
            if len(gold_posting.sentences) != len(p.sentences):
                raise CorpusError(f"job {p.job_id!r}: sentence count differs from the reference")
        for i, s in enumerate(p.sentences):
            base = s
            if gold_posting is not None:
                g = gold_posting.sentences[i]
                if g.words != s.words:
                    raise CorpusError(f"job {p.job_id!r} sentence {i}: tokens differ from the reference")
                base = g
            outputs.append(TaggerOutput(p.job_id, i, base, s.labels, None, [], p.area))
    return outputs


def outputs_to_postings(outputs: Sequence[TaggerOutput]) -> list[JobPosting]:
    by_job: dict[str, list[TaggerOutput]] = {}
    for o in outputs:
        by_job.setdefault(o.job_id, []).append(o)
    return [
        JobPosting(job_id, outs[0].area or "unknown", tuple(o.predicted for o in sorted(outs, key=lambda o: o.sentence_index)))
        for job_id, outs in by_job.items()
    ]


class LLMTagger(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`identify`: ``fit`` builds the example pool,
    ``transform`` tags postings."""

    def __init__(self, provider=None, kind="zero_shot", shots=0, model="claude-3-7-sonnet", embedding_model=DEFAULT_EMBEDDING_MODEL, fail_fast=False):
        self.provider = provider
        self.kind = kind
        self.shots = shots
        self.model = model
        self.embedding_model = embedding_model
        self.fail_fast = fail_fast

    def fit(self, X: Sequence[JobPosting], y=None):
        self.strategy_ = PromptStrategy(self.kind, self.shots)
        sentences = [s for p in X for s in p.sentences]
        embed = self.provider if self.strategy_.kind == "dynamic_few_shot" else None
        self.pool_ = ExamplePool.build(sentences, embed, self.embedding_model)
        return self

    def transform(self, X: Sequence[JobPosting]) -> list[TaggerOutput]:
        check_is_fitted(self, "pool_")
        return identify(X, self.strategy_, self.provider, self.pool_, self.model, self.fail_fast)
