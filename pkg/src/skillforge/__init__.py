"""Skill identification in Turkish job postings and linking to a skill taxonomy."""

__version__ = "0.1.0"

from .corpus import JobPosting, SkillSpan, TaggedSentence, load_corpus, split_corpus  # noqa: E402
from .eval import conll_f1, end_to_end_score, hitrate_at_k, krippendorff_alpha, muc_partial  # noqa: E402
from .taxonomy import Taxonomy, load_taxonomy  # noqa: E402

__all__ = [
    "JobPosting",
    "SkillSpan",
    "TaggedSentence",
    "Taxonomy",
    "conll_f1",
    "end_to_end_score",
    "hitrate_at_k",
    "krippendorff_alpha",
    "load_corpus",
    "load_taxonomy",
    "muc_partial",
    "split_corpus",
]
