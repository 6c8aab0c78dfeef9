"""Deterministic stand-in for a chat/embedding endpoint.

Identification answers are derived from the gold corpus with a few
scripted defects; rerank answers move the gold candidate to the front;
embeddings are hashed character trigrams. Used to record the canned cache
and directly by unit tests.
"""
from __future__ import annotations

import hashlib
import re

import numpy as np

from skillforge.corpus import TaggedSentence, spans_from_iob
from skillforge.fuzzy import turkish_lower
from skillforge.identify import render_tagged

DIM = 20
_RERANK_ITEM = re.compile(r"^(\d+)\. (.+)$")


def _bucket(gram: str) -> int:
    return int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=4).digest(), "little") % DIM


def trigram_vector(text: str) -> list[float]:
    for prefix in ("query: ", "passage: "):
        if text.startswith(prefix):
            text = text[len(prefix):]
    padded = f"  {turkish_lower(text)}  "
    v = np.zeros(DIM)
    for i in range(len(padded) - 2):
        v[_bucket(padded[i : i + 3])] += 1.0
    if not v.any():
        v[0] = 1.0
    return [round(float(x), 6) for x in v / np.linalg.norm(v)]


def defect(raw_text: str) -> int:
    """0 exact, 1 drop last span, 2 widen first span, 3 typo outside spans."""
    return hashlib.md5(raw_text.encode("utf-8")).digest()[0] % 4


def tagged_answer(sentence: TaggedSentence) -> str:
    kind = defect(sentence.raw_text)
    spans = [(s.token_start, s.token_end) for s in spans_from_iob(sentence)]
    if kind == 1 and spans:
        spans = spans[:-1]
    elif kind == 2 and spans and spans[0][1] < len(sentence.tokens):
        s, e = spans[0]
        if len(spans) < 2 or spans[1][0] > e:
            spans[0] = (s, e + 1)
    labels = ["O"] * len(sentence.tokens)
    for s, e in spans:
        labels[s] = "B"
        labels[s + 1 : e] = ["I"] * (e - s - 1)
    text = render_tagged(sentence.with_labels(labels))
    if kind == 3:
        # flip one character in the last untagged token
        tail = text.rfind(" ")
        if tail > 0 and "skill" not in text[tail:] and len(text) - tail > 2:
            text = text[: tail + 1] + text[tail + 1 :].swapcase()
    return text


class FakeBackend:
    """Callable transport: ``(url, body, headers) -> (status, json)``."""

    def __init__(self, sentences, gold_by_surface, fail_on=()):
        self.by_text = {s.raw_text: s for s in sentences}
        self.gold_by_surface = dict(gold_by_surface)
        self.fail_on = set(fail_on)
        self.calls = 0

    def __call__(self, url, body, headers):
        self.calls += 1
        if url.endswith("/embeddings"):
            data = [{"index": i, "embedding": trigram_vector(t)} for i, t in enumerate(body["input"])]
            return 200, {"data": data, "usage": {"prompt_tokens": 0}}
        prompt = body["messages"][-1]["content"]
        if any(f in prompt for f in self.fail_on):
            return 400, {"error": "rejected"}
        if "ESCO yetenekleri:" in prompt:
            content = self.rerank(prompt)
        else:
            target = prompt.rsplit("Girdi: ", 1)[1].rsplit("\nÇıktı:", 1)[0]
            sent = self.by_text.get(target)
            content = tagged_answer(sent) if sent is not None else target
        usage = {"prompt_tokens": len(prompt) // 4, "completion_tokens": len(content) // 4}
        if url.endswith("/messages"):
            return 200, {"content": [{"type": "text", "text": content}], "usage": {"input_tokens": usage["prompt_tokens"], "output_tokens": usage["completion_tokens"]}}
        return 200, {"choices": [{"message": {"role": "assistant", "content": content}}], "usage": usage}

    def rerank(self, prompt: str) -> str:
        query = re.search(r"^Yetenek: (.*)$", prompt, re.M).group(1)
        labels = [m.group(2) for m in map(_RERANK_ITEM.match, prompt.splitlines()) if m]
        gold = self.gold_by_surface.get(query)
        if gold in labels:
            labels.remove(gold)
            labels.insert(0, gold)
        return "\n".join(f"{i}. {lab}" for i, lab in enumerate(labels, start=1))
