from .linker import LinkConfig, LinkedSkill, expand_span, link, make_retriever
from .multiskill import (
    MultiSkillClassifier,
    MultiSkillModel,
    classify_multiskill,
    train_multiskill,
)
from .rerank import RerankStrategy, build_rerank_prompt, parse_rerank_response
from .retrieval import (
    Candidate,
    EmbeddingIndex,
    EmbeddingRetriever,
    FuzzyRetriever,
    RankedList,
    build_index,
    retrieve_embedding,
    retrieve_fuzzy,
)
from .splitter import DEFAULT_DELIMITERS, split_multiskill

__all__ = [
    "Candidate",
    "DEFAULT_DELIMITERS",
    "EmbeddingIndex",
    "EmbeddingRetriever",
    "FuzzyRetriever",
    "LinkConfig",
    "LinkedSkill",
    "MultiSkillClassifier",
    "MultiSkillModel",
    "RankedList",
    "RerankStrategy",
    "build_index",
    "build_rerank_prompt",
    "classify_multiskill",
    "expand_span",
    "link",
    "make_retriever",
    "parse_rerank_response",
    "retrieve_embedding",
    "retrieve_fuzzy",
    "split_multiskill",
    "train_multiskill",
]
