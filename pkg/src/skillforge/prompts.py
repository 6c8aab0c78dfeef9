"""Prompt template assets shipped with the package."""
from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources

TEMPLATES = {
    "identify": "identify_tr.txt",
    "rerank": "rerank_tr.txt",
    "reason_rerank": "reason_rerank_tr.txt",
    "causal_rerank": "causal_rerank_tr.txt",
}

SKILL_START = "<skill_start>"
SKILL_END = "<skill_end>"


@lru_cache(maxsize=None)
def template(name: str) -> str:
    try:
        filename = TEMPLATES[name]
    except KeyError:
        raise KeyError(f"unknown template {name!r}") from None
    return resources.files("skillforge").joinpath("assets", filename).read_text(encoding="utf-8").strip()


def template_hash(name: str) -> str:
    return hashlib.sha256(template(name).encode("utf-8")).hexdigest()


def template_hashes() -> dict[str, str]:
    return {name: template_hash(name) for name in TEMPLATES}
