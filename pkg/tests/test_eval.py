import json
import random

import krippendorff
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import alpha_pairwise, conll_bruteforce, e2e_bruteforce, hitrate_bruteforce, muc_bruteforce
from skillforge.corpus import SkillSpan
from skillforge.eval import (
    ErrorCategory,
    EvalReport,
    SpanMatchCounts,
    categorize_errors,
    conll_f1,
    end_to_end_score,
    hitrate_at_k,
    krippendorff_alpha,
    muc_partial,
    spans_by_sentence,
)

# ------------------------------------------------------------------ worked examples


def test_conll_examples():
    assert conll_f1([[(0, 2)]], [[(0, 2)]])["f1"] == 1.0
    assert conll_f1([[(0, 2)]], [[]]) == {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert conll_f1([[(0, 2)]], [[(0, 3)]])["f1"] == 0.0
    with pytest.raises(ValueError):
        conll_f1([[]], [])


def test_conll_accepts_skill_spans():
    sp = SkillSpan("j", 0, 1, 3, "a b")
    assert conll_f1([[sp]], [[(1, 3)]])["f1"] == 1.0


def test_muc_examples():
    r = muc_partial([[(0, 3)]], [[(0, 2)]])
    assert (r["precision"], r["recall"], r["f1"]) == (0.5, 0.5, 0.5)
    assert r["counts"] == SpanMatchCounts(PAR=1)
    r = muc_partial([[(0, 2), (4, 5)]], [[(0, 2), (4, 5)]])
    assert r["f1"] == 1.0 and r["counts"] == SpanMatchCounts(COR=2)
    r = muc_partial([[(0, 2)]], [[(3, 4)]])
    assert r["f1"] == 0.0 and r["counts"] == SpanMatchCounts(MIS=1, SPU=1)


def test_muc_greedy_in_order():
    # first gold takes the first overlapping prediction, second gold is then missing
    r = muc_partial([[(0, 2), (2, 4)]], [[(1, 3)]])
    assert r["counts"] == SpanMatchCounts(PAR=1, MIS=1)


def test_muc_exact_pairs_first():
    r = muc_partial([[(1, 2)]], [[(0, 2), (1, 2)]])
    assert r["counts"] == SpanMatchCounts(COR=1, SPU=1)
    r = muc_partial([[(0, 2), (1, 3)]], [[(1, 3)]])
    assert r["counts"] == SpanMatchCounts(COR=1, MIS=1)


def test_both_empty_is_perfect():
    assert conll_f1([[]], [[]])["f1"] == 1.0
    assert muc_partial([[]], [[]])["f1"] == 1.0


def test_hitrate_examples():
    assert hitrate_at_k([("a", ["a", "b"])] * 3, 1) == 1.0
    third = [("c", ["a", "b", "c"])] * 2
    assert hitrate_at_k(third, 1) == 0.0 and hitrate_at_k(third, 3) == 1.0
    items = [("a", ["a"]), ("b", ["x", "b"]), ("c", ["c"]), ("d", ["x", "y"])]
    assert hitrate_at_k(items, 2) == 0.75
    assert hitrate_at_k([{"gold_id": "a", "ranked_ids": ["a"]}, {"gold_id": None, "ranked_ids": []}], 1) == 1.0
    with pytest.raises(ValueError):
        hitrate_at_k([], 1)
    with pytest.raises(ValueError):
        hitrate_at_k(items, 0)


def test_e2e_examples():
    gold = {"j1": ["a", "b"], "j2": ["c"]}
    assert end_to_end_score(gold, {"j1": ["a"], "j2": ["c", "d"]}) == pytest.approx(2 / 3, abs=1e-12)
    assert end_to_end_score(gold, {"j1": ["a", "b", "z"], "j2": ["c"]}) == 1.0
    assert end_to_end_score(gold, {}) == 0.0
    # gold duplicates count twice, pred duplicates collapse
    assert end_to_end_score({"j": ["a", "a", "b"]}, {"j": ["a", "a"]}) == pytest.approx(2 / 3)


def test_alpha_examples():
    perfect = {u: {"x": lab, "y": lab} for u, lab in enumerate("abab")}
    assert krippendorff_alpha(perfect) == 1.0
    opposite = {u: {"x": "a", "y": "b"} for u in range(4)}
    assert krippendorff_alpha(opposite) < 0
    same = {u: {"x": "a", "y": "a"} for u in range(3)}
    assert krippendorff_alpha(same) == 1.0
    with pytest.raises(ValueError):
        krippendorff_alpha({0: {"x": "a", "y": "a"}, 1: {"x": "a"}})


def test_alpha_textbook_table():
    table = {
        1: {"A": "a", "B": "a", "C": "b"},
        2: {"A": "b", "B": "b", "C": "b"},
        3: {"A": "a", "B": "c", "C": None},
        4: {"A": "c", "B": "c", "C": "c"},
    }
    assert krippendorff_alpha(table) == pytest.approx(alpha_pairwise(table), abs=1e-9)


# ------------------------------------------------------------------ random oracles


def random_spans(rng, n_tokens=12, max_spans=4):
    spans = []
    for _ in range(rng.randint(0, max_spans)):
        a = rng.randrange(n_tokens)
        spans.append((a, rng.randint(a + 1, min(n_tokens, a + 4))))
    return spans


def random_sentences(rng):
    n = rng.randint(1, 10)
    return [random_spans(rng) for _ in range(n)], [random_spans(rng) for _ in range(n)]


def test_span_metrics_match_bruteforce():
    rng = random.Random(1)
    for _ in range(500):
        gold, pred = random_sentences(rng)
        r = conll_f1(gold, pred)
        assert (r["precision"], r["recall"], r["f1"]) == pytest.approx(conll_bruteforce(gold, pred), abs=1e-9)
        m = muc_partial(gold, pred)
        p, rc, f, counts = muc_bruteforce(gold, pred)
        assert (m["precision"], m["recall"], m["f1"]) == pytest.approx((p, rc, f), abs=1e-9)
        assert (m["counts"].COR, m["counts"].PAR, m["counts"].MIS, m["counts"].SPU) == counts
        assert m["counts"].INC == 0
        assert m["f1"] >= r["f1"] - 1e-12


def random_ranking_items(rng):
    ids = [f"s{i}" for i in range(15)]
    items = []
    for _ in range(rng.randint(1, 20)):
        ranked = rng.sample(ids, rng.randint(0, 12))
        gold = rng.choice(ids + [None]) if items else rng.choice(ids)
        items.append((gold, ranked))
    return items


def test_hitrate_matches_bruteforce_and_is_monotone():
    rng = random.Random(2)
    for _ in range(500):
        items = random_ranking_items(rng)
        prev = 0.0
        for k in range(1, 13):
            h = hitrate_at_k(items, k)
            assert h == pytest.approx(hitrate_bruteforce(items, k), abs=1e-9)
            assert 0.0 <= h <= 1.0 and h >= prev
            prev = h


def random_jobs(rng):
    labels = list("abcdefgh")
    gold = {f"j{i}": [rng.choice(labels) for _ in range(rng.randint(1, 5))] for i in range(rng.randint(1, 6))}
    pred = {j: [rng.choice(labels) for _ in range(rng.randint(0, 5))] for j in gold if rng.random() < 0.8}
    return gold, pred


def test_e2e_matches_bruteforce_and_is_monotone():
    rng = random.Random(3)
    for _ in range(500):
        gold, pred = random_jobs(rng)
        score = end_to_end_score(gold, pred)
        assert score == pytest.approx(e2e_bruteforce(gold, pred), abs=1e-9)
        job = rng.choice(list(gold))
        grown = {**pred, job: list(pred.get(job, [])) + [rng.choice("abcdefgh")]}
        assert end_to_end_score(gold, grown) >= score


def random_table(rng):
    labels = ["a", "b", "c", "none"][: rng.randint(2, 4)]
    table = {}
    for u in range(rng.randint(2, 10)):
        row = {f"r{a}": (rng.choice(labels) if rng.random() < 0.85 else None) for a in range(rng.randint(2, 4))}
        table[u] = row
    for u in range(2):  # guarantee two pairable units
        table[u]["r0"], table[u]["r1"] = rng.choice(labels), rng.choice(labels)
    return table


def test_alpha_matches_pairwise_and_reference_package():
    rng = random.Random(4)
    for _ in range(500):
        table = random_table(rng)
        a = krippendorff_alpha(table)
        assert a == pytest.approx(alpha_pairwise(table), abs=1e-9)
        coders = sorted({c for row in table.values() for c in row})
        code = {"a": 0, "b": 1, "c": 2, "none": 3}
        data = np.array([[code[table[u][c]] if table[u].get(c) is not None else np.nan for u in table] for c in coders])
        values = data[~np.isnan(data)]
        pairable = [u for u in table.values() if sum(v is not None for v in u.values()) >= 2]
        used = {v for u in pairable for v in u.values() if v is not None}
        if len(used) > 1:
            ref = krippendorff.alpha(reliability_data=data, level_of_measurement="nominal")
            assert a == pytest.approx(ref, abs=1e-9)
        assert len(values) > 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.permutations(["p", "q", "r", "s"]))
def test_alpha_relabel_invariant(seed, perm):
    table = random_table(random.Random(seed))
    rename = dict(zip(["a", "b", "c", "none"], perm))
    renamed = {u: {c: rename.get(v) if v is not None else None for c, v in row.items()} for u, row in table.items()}
    assert krippendorff_alpha(renamed) == pytest.approx(krippendorff_alpha(table), abs=1e-12)


span_lists = st.lists(st.tuples(st.integers(0, 10), st.integers(1, 4)).map(lambda t: (t[0], t[0] + t[1])), max_size=5)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(span_lists, span_lists), min_size=1, max_size=6))
def test_partial_credit_dominates(pairs):
    gold = [g for g, _ in pairs]
    pred = [p for _, p in pairs]
    assert muc_partial(gold, pred)["f1"] >= conll_f1(gold, pred)["f1"] - 1e-12


# ------------------------------------------------------------------ error types


def test_categorize_errors(taxonomy):
    retrieved = ["skl:python", "skl:java", "skl:sql"]
    assert categorize_errors(None, "skl:python", retrieved, taxonomy) is ErrorCategory.NOT_LABELED
    assert categorize_errors("none", "skl:python", retrieved, taxonomy) is ErrorCategory.NOT_LABELED
    # siblings under skl:bilgisayar
    assert categorize_errors("skl:java", "skl:python", retrieved, taxonomy) is ErrorCategory.ONTOLOGICALLY_RELATED
    # parent / child
    assert categorize_errors("skl:bilgisayar", "skl:python", retrieved, taxonomy) is ErrorCategory.ONTOLOGICALLY_RELATED
    assert categorize_errors("skl:vergi", "skl:python", retrieved, taxonomy) is ErrorCategory.NOT_RELATED_OR_RETRIEVED
    assert categorize_errors("skl:vergi", "skl:python", retrieved + ["skl:vergi"], taxonomy) is ErrorCategory.NOT_RELATED
    with pytest.raises(ValueError):
        categorize_errors("skl:python", "skl:python", retrieved, taxonomy)
    with pytest.raises(KeyError):
        categorize_errors("skl:python", "skl:yok", retrieved, taxonomy)


# ------------------------------------------------------------------ report


def test_report_formats():
    rep = EvalReport()
    rep.add("muc", muc_partial([[(0, 3)]], [[(0, 2)]]))
    rep.add("e2e", 2 / 3)
    flat = rep.flat()
    assert flat["muc.counts.PAR"] == 1 and flat["e2e"] == 2 / 3
    assert json.loads(rep.to_json())["metrics"]["muc"]["f1"] == 0.5
    assert "e2e" in rep.to_table() and "0.6667" in rep.to_table()


def test_spans_by_sentence():
    a, b = SkillSpan("j", 1, 0, 1, "x"), SkillSpan("k", 0, 0, 1, "y")
    assert spans_by_sentence([a, b], [("k", 0), ("j", 0), ("j", 1)]) == [[b], [], [a]]
