import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillforge.link.splitter import DEFAULT_DELIMITERS, has_delimiter, split_multiskill


def test_unequal_sides_share_far_tokens():
    assert split_multiskill("etkili ve anlaşılır iletişim") == ["etkili iletişim", "anlaşılır iletişim"]


def test_equal_sides_emit_six_variants():
    assert split_multiskill("İngilizceyi iyi ve güzel konuşma") == [
        "İngilizceyi iyi konuşma",
        "İngilizceyi güzel konuşma",
        "İngilizceyi iyi",
        "İngilizceyi güzel",
        "iyi konuşma",
        "güzel konuşma",
    ]


@pytest.mark.parametrize(
    "span, expected",
    [
        ("A ve B", ["A", "B"]),
        ("Python, Java", ["Python", "Java"]),
        ("Python / Java", ["Python", "Java"]),
        ("Excel ya da Word", ["Excel", "Word"]),
        ("Java veya C", ["Java", "C"]),
    ],
)
def test_single_word_sides(span, expected):
    assert split_multiskill(span) == expected


def test_multiple_delimiters_recurse_and_dedupe():
    out = split_multiskill("Python , Java ve SQL")
    assert out == list(dict.fromkeys(out))
    assert {"Python", "Java", "SQL"} <= set(out)


def test_edge_delimiter_warns():
    warnings = []
    assert split_multiskill("ve iletişim", warnings=warnings) == ["iletişim"]
    assert warnings


def test_no_delimiter_returns_span():
    assert split_multiskill("problem çözme") == ["problem çözme"]
    assert not has_delimiter("problem çözme", DEFAULT_DELIMITERS)
    assert has_delimiter("A ya da B", DEFAULT_DELIMITERS)


words = st.lists(st.sampled_from(["iyi", "hızlı", "Python", "yazılım", "geliştirme", "temel"]), min_size=1, max_size=3)


@given(words, words)
def test_outputs_are_nonempty_delimiter_free(left, right):
    span = " ".join(left) + " ve " + " ".join(right)
    out = split_multiskill(span)
    assert out and all(o.strip() for o in out)
    assert all(" ve " not in f" {o} " for o in out)
    assert len(out) == len(set(out))
