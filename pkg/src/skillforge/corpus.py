"""Annotated job-posting corpus: data model, CoNLL-style I/O, IOB <-> span
conversion and the occupation-area aware train/validation/test split.

File layout (UTF-8, NFC)::

    # job_id = j1
    # area = Finans
    # text = Python bilen , Excel
    Python	B
    bilen	O
    ,	O
    Excel	B	multi	http://data.europa.eu/esco/skill/...

A blank line closes a sentence. The optional third and fourth columns only
appear on ``B`` rows and carry the multi-skill flag and the gold taxonomy link
(``-`` for "no link").
"""
from __future__ import annotations

import json
import random
import re
import unicodedata
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

LABELS = ("B", "I", "O")
_NO_VALUE = "-"
_MULTI = "multi"
_SINGLE = "single"


class CorpusError(ValueError):
    """Malformed corpus input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int

    def __post_init__(self):
        if self.char_start >= self.char_end:
            raise CorpusError(f"empty token span for {self.text!r}")


@dataclass(frozen=True)
class TaggedSentence:
    """Tokens with IOB labels.

    ``multi`` and ``links`` run parallel to ``tokens``; only the values at
    ``B`` positions are meaningful (span attributes).
    """

    tokens: tuple[Token, ...]
    labels: tuple[str, ...]
    raw_text: str
    multi: tuple[bool, ...] = ()
    links: tuple[str | None, ...] = ()

    def __post_init__(self):
        n = len(self.tokens)
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.multi:
            object.__setattr__(self, "multi", (False,) * n)
        if not self.links:
            object.__setattr__(self, "links", (None,) * n)
        object.__setattr__(self, "multi", tuple(self.multi))
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.labels) != n or len(self.multi) != n or len(self.links) != n:
            raise CorpusError(
                f"label count {len(self.labels)} does not match token count {n}"
            )
        check_iob(self.labels)

    @property
    def words(self) -> list[str]:
        return [t.text for t in self.tokens]

    def with_labels(self, labels: Sequence[str]) -> "TaggedSentence":
        """Same tokens, new labels, span attributes cleared."""
        return TaggedSentence(self.tokens, tuple(labels), self.raw_text)


@dataclass(frozen=True)
class JobPosting:
    job_id: str
    area: str
    sentences: tuple[TaggedSentence, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.job_id:
            raise CorpusError("empty job_id")
        if not self.area:
            raise CorpusError(f"posting {self.job_id!r} has no area")


@dataclass(frozen=True)
class SkillSpan:
    job_id: str
    sentence_index: int
    token_start: int
    token_end: int
    surface: str
    is_multi: bool = False
    gold_link: str | None = None

    def __post_init__(self):
        if self.token_start >= self.token_end:
            raise ValueError("token_start must be < token_end")

    @property
    def key(self) -> tuple[str, int, int, int]:
        return (self.job_id, self.sentence_index, self.token_start, self.token_end)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def __post_init__(self):
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen = set()
        for ids in (self.train, self.validation, self.test):
            for job_id in ids:
                if job_id in seen:
                    raise ValueError(f"job id {job_id!r} assigned twice")
                seen.add(job_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "train": list(self.train),
                "validation": list(self.validation),
                "test": list(self.test),
                "seed": self.seed,
            },
            ensure_ascii=False,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        d = json.loads(text)
        return cls(d["train"], d["validation"], d["test"], int(d["seed"]))


def check_iob(labels: Sequence[str]) -> None:
    prev = "O"
    for i, lab in enumerate(labels):
        if lab not in LABELS:
            raise CorpusError(f"unknown label {lab!r} at token {i}")
        if lab == "I" and prev == "O":
            raise CorpusError(f"I without preceding B at token {i}")
        prev = lab


def normalize_label(label: str) -> str:
    # "B-SKILL" style tags collapse to the single-type scheme
    label = label.strip()
    if len(label) > 2 and label[1] == "-" and label[0] in "BI":
        return label[0]
    return label


def tokenize(text: str) -> tuple[Token, ...]:
    """Whitespace tokenization with character offsets."""
    return tuple(Token(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text))


def sentence_from_text(text: str) -> TaggedSentence:
    """Unlabeled (all-O) sentence for raw input text."""
    tokens = tokenize(text)
    return TaggedSentence(tokens, ("O",) * len(tokens), text)


def _locate_tokens(words: Sequence[str], raw_text: str, line: int | None) -> tuple[Token, ...]:
    tokens = []
    cursor = 0
    for w in words:
        pos = raw_text.find(w, cursor)
        if pos < 0 or raw_text[cursor:pos].strip():
            raise CorpusError(f"token {w!r} not found in sentence text", line)
        tokens.append(Token(w, pos, pos + len(w)))
        cursor = pos + len(w)
    if raw_text[cursor:].strip():
        raise CorpusError("sentence text has characters not covered by tokens", line)
    return tuple(tokens)


def spans_from_iob(
    sentence: TaggedSentence, job_id: str = "", sentence_index: int = 0
) -> list[SkillSpan]:
    """One span per maximal ``B I*`` run, in textual order."""
    spans = []
    start = None
    labels = sentence.labels

    def close(end):
        words = sentence.words[start:end]
        spans.append(
            SkillSpan(
                job_id,
                sentence_index,
                start,
                end,
                " ".join(words),
                sentence.multi[start],
                sentence.links[start],
            )
        )

    for i, lab in enumerate(labels):
        if lab == "B":
            if start is not None:
                close(i)
            start = i
        elif lab == "O":
            if start is not None:
                close(i)
            start = None
    if start is not None:
        close(len(labels))
    return spans


def iob_from_spans(spans: Iterable[SkillSpan | tuple[int, int]], length: int) -> list[str]:
    """Inverse of :func:`spans_from_iob`; adjacent spans each get their own B."""
    labels = ["O"] * length
    for sp in spans:
        start, end = (sp.token_start, sp.token_end) if isinstance(sp, SkillSpan) else sp
        if not 0 <= start < end <= length:
            raise ValueError(f"span ({start}, {end}) outside sentence of length {length}")
        labels[start] = "B"
        for i in range(start + 1, end):
            labels[i] = "I"
    return labels


def posting_spans(posting: JobPosting) -> list[SkillSpan]:
    out = []
    for idx, sent in enumerate(posting.sentences):
        out.extend(spans_from_iob(sent, posting.job_id, idx))
    return out


# ---------------------------------------------------------------- file I/O

_HEADER = re.compile(r"^#\s*([A-Za-z_]+)\s*=\s?(.*)$")


def loads_corpus(text: str) -> list[JobPosting]:
    text = unicodedata.normalize("NFC", text)
    postings: list[JobPosting] = []
    seen_ids: dict[str, int] = {}

    job_id = area = None
    job_line = header_line = 0
    sentences: list[TaggedSentence] = []
    rows: list[tuple[int, list[str]]] = []
    sent_text: str | None = None

    def flush_sentence():
        nonlocal rows, sent_text
        if not rows:
            if sent_text is not None:
                raise CorpusError("sentence text without tokens", header_line)
            return
        first_line = rows[0][0]
        if job_id is None:
            raise CorpusError("tokens before any '# job_id' header", first_line)
        words, labels, multi, links = [], [], [], []
        prev = "O"
        for lineno, cols in rows:
            if len(cols) < 2 or len(cols) > 4:
                raise CorpusError(
                    f"expected 2-4 tab-separated columns, got {len(cols)}", lineno
                )
            word = cols[0]
            if not word or any(c.isspace() for c in word):
                raise CorpusError(f"invalid token {word!r}", lineno)
            lab = normalize_label(cols[1])
            if lab not in LABELS:
                raise CorpusError(f"unknown label {cols[1]!r}", lineno)
            if lab == "I" and prev == "O":
                raise CorpusError("I without preceding B", lineno)
            prev = lab
            is_multi = False
            link = None
            if len(cols) > 2:
                if lab != "B":
                    raise CorpusError("span attributes allowed on B rows only", lineno)
                if cols[2] not in (_MULTI, _SINGLE, _NO_VALUE):
                    raise CorpusError(f"bad multi-skill flag {cols[2]!r}", lineno)
                is_multi = cols[2] == _MULTI
                if len(cols) > 3 and cols[3] != _NO_VALUE:
                    link = cols[3]
            words.append(word)
            labels.append(lab)
            multi.append(is_multi)
            links.append(link)
        raw = sent_text if sent_text is not None else " ".join(words)
        tokens = _locate_tokens(words, raw, first_line)
        sentences.append(TaggedSentence(tokens, tuple(labels), raw, tuple(multi), tuple(links)))
        rows = []
        sent_text = None

    def flush_posting():
        nonlocal sentences
        flush_sentence()
        if job_id is None:
            return
        if not area:
            raise CorpusError(f"posting {job_id!r} has no '# area' header", job_line)
        postings.append(JobPosting(job_id, area, tuple(sentences)))
        sentences = []

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush_sentence()
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if not m:
                continue
            key, value = m.group(1), m.group(2)
            if key == "job_id":
                flush_posting()
                value = value.strip()
                if value in seen_ids:
                    raise CorpusError(
                        f"duplicate job_id {value!r} (first seen at line {seen_ids[value]})",
                        lineno,
                    )
                seen_ids[value] = lineno
                job_id, area, job_line = value, None, lineno
            elif key == "area":
                area = value.strip()
            elif key == "text":
                if rows:
                    flush_sentence()
                sent_text = value
                header_line = lineno
            continue
        rows.append((lineno, line.split("\t")))
    flush_posting()
    return postings


def load_corpus(path: str | Path) -> list[JobPosting]:
    return loads_corpus(Path(path).read_text(encoding="utf-8"))


def dumps_corpus(postings: Iterable[JobPosting]) -> str:
    lines = []
    for p in postings:
        lines.append(f"# job_id = {p.job_id}")
        lines.append(f"# area = {p.area}")
        for sent in p.sentences:
            lines.append(f"# text = {sent.raw_text}")
            for tok, lab, is_multi, link in zip(sent.tokens, sent.labels, sent.multi, sent.links):
                cols = [tok.text, lab]
                if lab == "B" and (is_multi or link):
                    cols.append(_MULTI if is_multi else _SINGLE)
                    if link:
                        cols.append(link)
                lines.append("\t".join(cols))
            lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def save_corpus(postings: Iterable[JobPosting], path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(postings), encoding="utf-8")


# ------------------------------------------------------------------ splits


def split_corpus(postings: Sequence[JobPosting], seed: int = 0) -> SplitSpec:
    """Per-area split.

    Areas with one posting go to train. Areas with more than six postings get
    floor(20%) test, floor(20%) validation, the rest train. Areas with 2-6
    postings get one test and one validation posting when they have at least
    three, otherwise everything goes to train.
    """
    if not postings:
        raise ValueError("cannot split an empty corpus")
    by_area: dict[str, list[str]] = defaultdict(list)
    for p in postings:
        if not p.area:
            raise ValueError(f"posting {p.job_id!r} has no area")
        by_area[p.area].append(p.job_id)

    rng = random.Random(seed)
    train, val, test = [], [], []
    for area in sorted(by_area):
        ids = sorted(by_area[area])
        rng.shuffle(ids)
        n = len(ids)
        if n > 6:
            n_test = n_val = n // 5
        elif n >= 3:
            n_test = n_val = 1
        else:
            n_test = n_val = 0
        test.extend(ids[:n_test])
        val.extend(ids[n_test : n_test + n_val])
        train.extend(ids[n_test + n_val :])
    return SplitSpec(train, val, test, seed)


def select(postings: Sequence[JobPosting], job_ids: Iterable[str]) -> list[JobPosting]:
    """Postings whose id is in ``job_ids``, in corpus order."""
    wanted = set(job_ids)
    return [p for p in postings if p.job_id in wanted]
