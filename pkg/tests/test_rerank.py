import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillforge.link.rerank import (
    RerankStrategy,
    build_rerank_prompt,
    parse_rerank_response,
    rationale,
)
from skillforge.link.retrieval import Candidate, RankedList
from skillforge.prompts import template


def ranked(labels):
    return RankedList("q", "fuzzy", tuple(Candidate(f"id{i}", lab, 1.0 - i / 100, i + 1) for i, lab in enumerate(labels)))


def load_cases(fixtures_dir):
    data = json.loads((fixtures_dir / "rerank_transcripts.json").read_text(encoding="utf-8"))
    return data["candidate_sets"], data["cases"]


def test_transcript_suite(fixtures_dir):
    sets, cases = load_cases(fixtures_dir)
    assert len(cases) >= 20
    for case in cases:
        rl = ranked(sets[case["set"]])
        label_of = {c.taxonomy_id: c.label for c in rl.candidates}
        warnings = []
        ids = parse_rerank_response(case["response"], rl, case["reasoning"], warnings)
        assert sorted(ids) == sorted(rl.ids), case["name"]
        assert [label_of[i] for i in ids] == case["expected"], case["name"]
        assert any("parse degraded" in w for w in warnings) == case.get("degraded", False), case["name"]


@given(st.text(max_size=300), st.sampled_from(["none", "plain", "causal"]))
def test_always_a_permutation(text, reasoning):
    rl = ranked(["araç sürmek", "forklift kullanmak", "stok kontrolü yapmak"])
    assert sorted(parse_rerank_response(text, rl, reasoning)) == sorted(rl.ids)


def test_strategy_parse_and_names():
    assert str(RerankStrategy.parse("causal+context-description")) == "causal+context_description"
    assert RerankStrategy.parse("reason+key").template_name == "reason_rerank"
    assert not RerankStrategy.parse("none").enabled
    with pytest.raises(ValueError):
        RerankStrategy.parse("reason+none")
    with pytest.raises(ValueError):
        RerankStrategy.parse("bogus")


def test_prompt_variants(taxonomy):
    rl = RankedList("q", "fuzzy", (Candidate("skl:arac", "araç sürmek", 0.9, 1), Candidate("skl:forklift", "forklift kullanmak", 0.5, 2)))
    key = build_rerank_prompt("araç kullanabilen", "Ehliyetli araç kullanabilen .", rl, RerankStrategy("key")).messages[0]["content"]
    assert key.startswith(template("rerank"))
    assert "Yetenek: araç kullanabilen" in key and "Cümle:" not in key
    assert "1. araç sürmek\n2. forklift kullanmak" in key
    ctx = build_rerank_prompt("x", "Cümle metni", rl, RerankStrategy("context")).messages[0]["content"]
    assert "Cümle: Cümle metni" in ctx and "Açıklama" not in ctx
    desc = build_rerank_prompt("x", "s", rl, RerankStrategy("context_description"), taxonomy).messages[0]["content"]
    assert "   Açıklama: Motorlu taşıt kullanmak." in desc
    causal = build_rerank_prompt("x", "s", rl, RerankStrategy("key", "causal")).messages[0]["content"]
    assert causal.startswith(template("causal_rerank"))


def test_prompt_preconditions():
    rl = ranked([f"l{i}" for i in range(11)])
    with pytest.raises(ValueError):
        build_rerank_prompt("x", "", rl, RerankStrategy("key"), k=10)
    with pytest.raises(ValueError):
        build_rerank_prompt("x", "", ranked(["a"]), RerankStrategy("context_description"))
    with pytest.raises(ValueError):
        build_rerank_prompt("x", "", ranked(["a"]), RerankStrategy("none"))


def test_prompt_is_deterministic():
    rl = ranked(["a b", "c d"])
    a = build_rerank_prompt("x", "s", rl, RerankStrategy("context"))
    b = build_rerank_prompt("x", "s", rl, RerankStrategy("context"))
    assert a.canonical_bytes() == b.canonical_bytes()


def test_rationale_extracted():
    text = "çünkü X\nSıralama:\n1. a"
    assert rationale(text, "plain") == "çünkü X"
    assert rationale(text, "none") is None
