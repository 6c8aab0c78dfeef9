"""Evaluation metrics for identification, linking and annotation agreement."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .corpus import SkillSpan
from .taxonomy import Relatedness, Taxonomy, relatedness

NONE_LABEL = "none"


def _span_bounds(span) -> tuple[int, int]:
    if isinstance(span, SkillSpan):
        return span.token_start, span.token_end
    start, end = span
    return int(start), int(end)


def _check_parallel(gold: Sequence, pred: Sequence) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} sentences but pred has {len(pred)}")


def _prf(p_num: float, p_den: float, r_num: float, r_den: float) -> tuple[float, float, float]:
    # both sides empty counts as perfect agreement
    if p_den == 0 and r_den == 0:
        return 1.0, 1.0, 1.0
    p = p_num / p_den if p_den else 0.0
    r = r_num / r_den if r_den else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


# ------------------------------------------------------------ identification


def conll_f1(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> dict[str, float]:
    """Exact-boundary span precision, recall and F1 over parallel sentences.

    Each sentence is a list of spans given as ``SkillSpan`` or (start, end).
    """
    _check_parallel(gold, pred)
    correct = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        gs = Counter(_span_bounds(s) for s in g)
        ps = Counter(_span_bounds(s) for s in p)
        correct += sum((gs & ps).values())
        n_gold += sum(gs.values())
        n_pred += sum(ps.values())
    precision, recall, f1 = _prf(correct, n_pred, correct, n_gold)
    return {"precision": precision, "recall": recall, "f1": f1}


@dataclass
class SpanMatchCounts:
    COR: int = 0
    INC: int = 0
    PAR: int = 0
    MIS: int = 0
    SPU: int = 0

    def __post_init__(self):
        if min(self.COR, self.INC, self.PAR, self.MIS, self.SPU) < 0:
            raise ValueError("match counts must be non-negative")

    def __add__(self, other: "SpanMatchCounts") -> "SpanMatchCounts":
        return SpanMatchCounts(*(a + b for a, b in zip(astuple_counts(self), astuple_counts(other))))

    @property
    def possible(self) -> int:
        return self.COR + self.INC + self.PAR + self.MIS

    @property
    def actual(self) -> int:
        return self.COR + self.INC + self.PAR + self.SPU


def astuple_counts(c: SpanMatchCounts) -> tuple[int, int, int, int, int]:
    return c.COR, c.INC, c.PAR, c.MIS, c.SPU


def match_sentence(gold: Sequence, pred: Sequence) -> SpanMatchCounts:
    """One-to-one matching for one sentence.

    Exact-boundary pairs are matched first. Remaining gold spans are then
    visited by start position; each takes the first unconsumed prediction
    (by start position) that overlaps it.
    """
    g_spans = sorted(_span_bounds(s) for s in gold)
    p_spans = sorted(_span_bounds(s) for s in pred)
    used = [False] * len(p_spans)
    counts = SpanMatchCounts()
    rest = []
    for g in g_spans:
        j = next((j for j, p in enumerate(p_spans) if not used[j] and p == g), None)
        if j is None:
            rest.append(g)
        else:
            used[j] = True
            counts.COR += 1
    for gs, ge in rest:
        for j, (ps, pe) in enumerate(p_spans):
            if used[j] or ps >= ge or pe <= gs:
                continue
            used[j] = True
            counts.PAR += 1
            break
        else:
            counts.MIS += 1
    counts.SPU = used.count(False)
    return counts


def muc_partial(gold: Sequence[Sequence], pred: Sequence[Sequence]) -> dict[str, Any]:
    """MUC partial-match scores, micro-averaged over all sentences."""
    _check_parallel(gold, pred)
    counts = SpanMatchCounts()
    for g, p in zip(gold, pred):
        counts = counts + match_sentence(g, p)
    credit = counts.COR + 0.5 * counts.PAR
    precision, recall, f1 = _prf(credit, counts.actual, credit, counts.possible)
    return {"precision": precision, "recall": recall, "f1": f1, "counts": counts}


# ------------------------------------------------------------------ linking


def hitrate_at_k(items: Iterable, k: int) -> float:
    """Fraction of items whose gold id is among the first ``k`` ranked ids.

    Items are ``(gold_id, ranked_ids)`` pairs or mappings with those keys;
    items without a gold id are skipped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = total = 0
    for item in items:
        if isinstance(item, Mapping):
            gold_id, ranked = item["gold_id"], item["ranked_ids"]
        else:
            gold_id, ranked = item
        if gold_id is None:
            continue
        total += 1
        hits += gold_id in list(ranked)[:k]
    if total == 0:
        raise ValueError("no items with a gold link")
    return hits / total


def end_to_end_score(gold: Mapping[str, Sequence[str]], pred: Mapping[str, Sequence[str]]) -> float:
    """Share of gold (job, skill) pairs whose skill was predicted for that job.

    Gold is a multiset per job, predictions a set per job.
    """
    total = sum(len(v) for v in gold.values())
    if total == 0:
        raise ValueError("gold has no skills")
    correct = 0
    for job_id, skills in gold.items():
        predicted = set(pred.get(job_id, ()))
        correct += sum(1 for s in skills if s in predicted)
    return correct / total


# ---------------------------------------------------------------- agreement


def coincidence_matrix(table: Mapping[Any, Mapping[Any, Any]]) -> tuple[list, list[list[float]]]:
    values: list = []
    units = []
    for annotations in table.values():
        labels = [v for v in annotations.values() if v is not None]
        if len(labels) >= 2:
            units.append(labels)
            values.extend(labels)
    vocab = sorted(set(values), key=str)
    pos = {v: i for i, v in enumerate(vocab)}
    o = [[0.0] * len(vocab) for _ in vocab]
    for labels in units:
        m = len(labels)
        c = Counter(labels)
        for a, na in c.items():
            for b, nb in c.items():
                pairs = na * (na - 1) if a == b else na * nb
                o[pos[a]][pos[b]] += pairs / (m - 1)
    return vocab, o


def krippendorff_alpha(table: Mapping[Any, Mapping[Any, Any]]) -> float:
    """Nominal Krippendorff's alpha from a unit -> annotator -> label table.

    Units with fewer than two labels are ignored. When every pairable value
    is identical the expected disagreement is zero and alpha is taken as 1.0.
    """
    pairable = [u for u in table.values() if sum(v is not None for v in u.values()) >= 2]
    if len(pairable) < 2:
        raise ValueError("need at least two units with two or more annotations")
    vocab, o = coincidence_matrix(table)
    n_c = [sum(row) for row in o]
    n = sum(n_c)
    d_o = sum(o[i][j] for i in range(len(vocab)) for j in range(len(vocab)) if i != j) / n
    d_e = sum(n_c[i] * n_c[j] for i in range(len(vocab)) for j in range(len(vocab)) if i != j) / (n * (n - 1))
    if d_e == 0:
        return 1.0
    return 1.0 - d_o / d_e


# ------------------------------------------------------------------- errors


class ErrorCategory(str, Enum):
    NOT_LABELED = "not_labeled"
    ONTOLOGICALLY_RELATED = "ontologically_related"
    NOT_RELATED_OR_RETRIEVED = "not_related_or_retrieved"
    NOT_RELATED = "not_related"


_RELATED = {Relatedness.ANCESTOR, Relatedness.DESCENDANT, Relatedness.SIBLING}


def categorize_errors(gold_link: str | None, predicted, retrieved, taxonomy: Taxonomy) -> ErrorCategory:
    """Error type of a wrong link. ``predicted`` is a taxonomy id or an object
    with a ``chosen`` attribute; ``retrieved`` is a ranked list or id list."""
    pred_id = getattr(predicted, "chosen", predicted)
    retrieved_ids = list(getattr(retrieved, "ids", retrieved))
    if pred_id is not None and pred_id not in taxonomy:
        raise KeyError(f"unknown taxonomy id {pred_id!r}")
    if gold_link is None or gold_link == NONE_LABEL:
        return ErrorCategory.NOT_LABELED
    if gold_link not in taxonomy:
        raise KeyError(f"unknown taxonomy id {gold_link!r}")
    if pred_id == gold_link:
        raise ValueError("prediction equals gold; nothing to categorize")
    if pred_id is not None and relatedness(pred_id, gold_link, taxonomy) in _RELATED:
        return ErrorCategory.ONTOLOGICALLY_RELATED
    if gold_link not in retrieved_ids:
        return ErrorCategory.NOT_RELATED_OR_RETRIEVED
    return ErrorCategory.NOT_RELATED


# ------------------------------------------------------------------- report


@dataclass
class EvalReport:
    metrics: dict[str, Any] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add(self, name: str, value) -> None:
        if isinstance(value, SpanMatchCounts):
            value = asdict(value)
        elif isinstance(value, Mapping):
            value = {k: asdict(v) if isinstance(v, SpanMatchCounts) else v for k, v in value.items()}
        self.metrics[name] = value

    def flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name, value in self.metrics.items():
            if isinstance(value, Mapping):
                for key, v in value.items():
                    if isinstance(v, Mapping):
                        for kk, vv in v.items():
                            out[f"{name}.{key}.{kk}"] = vv
                    else:
                        out[f"{name}.{key}"] = v
            else:
                out[name] = value
        return out

    def to_json(self) -> str:
        return json.dumps({"metrics": self.metrics, "notes": self.notes}, ensure_ascii=False, indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = self.flat()
        if not rows:
            return ""
        width = max(len(k) for k in rows)
        lines = []
        for key in sorted(rows):
            v = rows[key]
            shown = f"{v:.4f}" if isinstance(v, float) else str(v)
            lines.append(f"{key.ljust(width)}  {shown}")
        return "\n".join(lines)


def spans_by_sentence(spans: Iterable[SkillSpan], keys: Sequence[tuple[str, int]]) -> list[list[SkillSpan]]:
    """Group spans into the sentence order given by ``keys``."""
    index = {k: i for i, k in enumerate(keys)}
    out: list[list[SkillSpan]] = [[] for _ in keys]
    for sp in spans:
        out[index[(sp.job_id, sp.sentence_index)]].append(sp)
    return out

