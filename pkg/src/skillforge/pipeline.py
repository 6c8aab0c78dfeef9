"""One reproducible identify -> link -> evaluate run over the test split."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import ConfigError, cli_config_from_dict, read_toml
from .corpus import JobPosting, load_corpus, posting_spans, select, split_corpus
from .eval import EvalReport, conll_f1, end_to_end_score, hitrate_at_k, muc_partial, spans_by_sentence
from .identify import ExamplePool, PromptStrategy, TaggerOutput, identify, load_external_tags
from .link import EmbeddingIndex, LinkConfig, LinkedSkill, RerankStrategy, link, make_retriever
from .link.multiskill import MultiSkillModel
from .prompts import template_hashes
from .providers import MODES, Provider, UsageLedger
from .taxonomy import load_taxonomy

log = logging.getLogger(__name__)

HITRATE_KS = (1, 3, 5, 10)
IDENTIFY_KINDS = ("zero_shot", "static_few_shot", "dynamic_few_shot", "external", "gold")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@dataclass
class RunConfig:
    corpus: str
    skills: str
    relations: str | None = None
    seed: int = 0
    mode: str = "replay"
    cache_dir: str = "cache"
    out_dir: str = "out"
    jobs: int = 1
    identify_strategy: str = "zero_shot"
    shots: int = 0
    identify_model: str = "claude-3-7-sonnet"
    identify_provider: str = "llm"
    external_tags: str | None = None
    retrieval: str = "fuzzy"
    rerank: str = "none"
    rerank_model: str = "gpt-4o"
    rerank_provider: str = "llm"
    k: int = 10
    embedding_model: str = "multilingual-e5-large"
    embedding_provider: str = "embedding"
    passage_mode: str = "label"
    multiskill_model: str | None = None
    index: str | None = None
    min_subquery_score: float | None = None
    providers: dict[str, Any] = field(default_factory=dict)
    prices: dict[str, Any] = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.identify_strategy not in IDENTIFY_KINDS:
            raise ConfigError(f"identify strategy must be one of {IDENTIFY_KINDS}")
        if self.identify_strategy == "external" and not self.external_tags:
            raise ConfigError("identify strategy 'external' needs external_tags")
        if self.retrieval not in ("fuzzy", "embedding"):
            raise ConfigError("retrieval must be 'fuzzy' or 'embedding'")
        RerankStrategy.parse(self.rerank)
        if self.k < 1 or self.jobs < 1:
            raise ConfigError("k and jobs must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | Path = ".") -> "RunConfig":
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if key == "identify":
                flat.update({("identify_strategy" if k == "strategy" else f"identify_{k}" if k in ("model", "provider") else k): v for k, v in value.items()})
            elif key == "link":
                flat.update({(f"rerank_{k}" if k in ("model", "provider") else k): v for k, v in value.items()})
            else:
                flat[key] = value
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**flat, base_dir=str(base_dir)) if "base_dir" not in flat else cls(**flat)

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(read_toml(path), path.parent)

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def snapshot(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("base_dir")
        return d


@dataclass
class RunManifest:
    config: dict[str, Any]
    inputs: dict[str, str]
    metrics: dict[str, Any]
    ledger: dict[str, Any]
    warnings: list[str]
    models: dict[str, str]
    templates: dict[str, str]
    split: dict[str, list[str]]
    timestamp: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def prediction_record(item: LinkedSkill) -> dict[str, Any]:
    scores = {c.taxonomy_id: c.score for c in item.retrieved.candidates}
    return {
        "job_id": item.span.job_id,
        "sentence_index": item.span.sentence_index,
        "span": [item.span.token_start, item.span.token_end],
        "surface": item.span.surface,
        "query": item.query,
        "candidates": [{"id": i, "score": round(float(scores[i]), 6)} for i in item.ordering],
        "chosen": item.chosen,
        "strategy": item.strategy,
    }


def merged_ranking(orderings: Sequence[Sequence[str]]) -> list[str]:
    """Round-robin merge of sub-query orderings, first occurrence kept."""
    out: list[str] = []
    depth = max((len(o) for o in orderings), default=0)
    for rank in range(depth):
        for o in orderings:
            if rank < len(o) and o[rank] not in out:
                out.append(o[rank])
    return out


def group_by_span(results: Sequence[LinkedSkill]) -> dict[tuple, list[LinkedSkill]]:
    groups: dict[tuple, list[LinkedSkill]] = {}
    for r in results:
        groups.setdefault(r.span.key, []).append(r)
    return groups


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def _sentence_keys(postings: Sequence[JobPosting]) -> list[tuple[str, int]]:
    return [(p.job_id, i) for p in postings for i in range(len(p.sentences))]


def run(config: RunConfig, transport=None, timestamp: str | None = None) -> RunManifest:
    """Execute the run and write ``predictions.jsonl`` and ``manifest.json``
    into ``out_dir``. ``transport`` replaces the HTTP client (tests)."""
    cli = cli_config_from_dict({"providers": config.providers, "prices": config.prices})
    cli.cache_dir = config.cache_dir
    cli.mode = config.mode
    cli.jobs = config.jobs
    base = Path(config.base_dir)
    ledger = UsageLedger()

    uses_identify = config.identify_strategy not in ("external", "gold")
    strategy = RerankStrategy.parse(config.rerank)
    needs_embedding = config.retrieval == "embedding" or config.identify_strategy == "dynamic_few_shot"
    roles = []
    if uses_identify:
        roles.append(config.identify_provider)
    if strategy.enabled:
        roles.append(config.rerank_provider)
    if needs_embedding:
        roles.append(config.embedding_provider)
    providers: dict[str, Provider] = {}
    for name in dict.fromkeys(roles):
        providers[name] = cli.make_provider(name, ledger, transport, base)

    # preconditions: nothing runs until these hold
    if config.mode == "replay" and not config.path("cache_dir").is_dir():
        # an absent cache behaves as an empty one: the first lookup fails and names its hash
        log.warning("replay cache directory %s does not exist", config.path("cache_dir"))
    for prov in providers.values():
        _stage("config", prov.require_live)

    corpus_path = config.path("corpus")
    postings = _stage("corpus", load_corpus, corpus_path)
    taxonomy = _stage("taxonomy", load_taxonomy, config.path("skills"), config.path("relations"))
    split = split_corpus(postings, config.seed)
    test = select(postings, split.test)
    if not test:
        raise PipelineError("corpus", ValueError("test split is empty"))
    pool_postings = select(postings, split.train + split.validation)
    warnings: list[str] = []

    # identification
    if config.identify_strategy == "gold":
        outputs = [TaggerOutput(p.job_id, i, s, s.labels, None, [], p.area) for p in test for i, s in enumerate(p.sentences)]
    elif config.identify_strategy == "external":
        outputs = _stage("identify", load_external_tags, config.path("external_tags"), postings)
        wanted = set(split.test)
        outputs = [o for o in outputs if o.job_id in wanted]
    else:
        ps = PromptStrategy(config.identify_strategy, config.shots)
        sentences = [s for p in pool_postings for s in p.sentences]
        embed = providers.get(config.embedding_provider) if ps.kind == "dynamic_few_shot" else None
        pool = _stage("identify", ExamplePool.build, sentences, embed, config.embedding_model)
        outputs = _stage("identify", identify, test, ps, providers[config.identify_provider], pool, config.identify_model)
    for o in outputs:
        warnings.extend(f"identify {o.job_id}/{o.sentence_index}: {w}" for w in o.alignment_warnings)

    keys = _sentence_keys(test)
    gold_spans = [sp for p in test for sp in posting_spans(p)]
    pred_spans = [sp for o in outputs for sp in o.spans()]
    report = EvalReport()
    report.add("conll", conll_f1(spans_by_sentence(gold_spans, keys), spans_by_sentence(pred_spans, keys)))
    report.add("muc_partial", muc_partial(spans_by_sentence(gold_spans, keys), spans_by_sentence(pred_spans, keys)))

    # linking
    index = None
    if config.retrieval == "embedding" and config.index:
        index = _stage("link", EmbeddingIndex.load, config.path("index"))
    retriever = _stage(
        "link", make_retriever, config.retrieval, taxonomy, providers.get(config.embedding_provider), config.embedding_model, config.k, index, config.passage_mode
    )
    multiskill = _stage("link", MultiSkillModel.load, config.path("multiskill_model")) if config.multiskill_model else None
    link_cfg = LinkConfig(k=config.k, delimiters=cli.delimiters, rerank_model=config.rerank_model, min_subquery_score=config.min_subquery_score)
    sentences = {(p.job_id, i): s.raw_text for p in test for i, s in enumerate(p.sentences)}
    rerank_provider = providers.get(config.rerank_provider)

    def do_link(spans):
        return link(spans, taxonomy, retriever, strategy, rerank_provider, sentences=sentences, multiskill_model=multiskill, config=link_cfg)

    predicted = _stage("link", do_link, pred_spans)
    for r in predicted:
        warnings.extend(f"link {r.span.job_id}/{r.span.sentence_index} {r.query!r}: {w}" for w in r.warnings)

    linkable = [sp for sp in gold_spans if sp.gold_link]
    if linkable:
        gold_linked = group_by_span(_stage("link", do_link, linkable))
        items = [(sp.gold_link, merged_ranking([r.ordering for r in gold_linked.get(sp.key, [])])) for sp in linkable]
        report.add("hitrate", {f"@{k}": hitrate_at_k(items, k) for k in HITRATE_KS})

    gold_ids = {p.job_id: [sp.gold_link for sp in posting_spans(p) if sp.gold_link] for p in test}
    pred_ids: dict[str, list[str]] = {}
    for r in predicted:
        if r.chosen is not None:
            pred_ids.setdefault(r.span.job_id, []).append(r.chosen)
    if any(gold_ids.values()):
        report.add("end_to_end", end_to_end_score(gold_ids, pred_ids))

    out_dir = config.path("out_dir")
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(prediction_record(r), ensure_ascii=False, sort_keys=True) for r in predicted]
    (out_dir / "predictions.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    inputs = {"corpus": file_sha256(corpus_path), "skills": file_sha256(config.path("skills"))}
    if config.relations:
        inputs["relations"] = file_sha256(config.path("relations"))
    if config.external_tags:
        inputs["external_tags"] = file_sha256(config.path("external_tags"))
    models = {}
    if uses_identify:
        models["identify"] = config.identify_model
    if strategy.enabled:
        models["rerank"] = config.rerank_model
    if needs_embedding:
        models["embedding"] = config.embedding_model
    records = ledger.records
    ledger_info: dict[str, Any] = {"calls": len(records), "by_stage_model": ledger.totals()}
    try:
        ledger_info["cost_usd"] = ledger.cost(cli.prices)
    except Exception as exc:
        warnings.append(f"cost: {exc}")

    manifest = RunManifest(
        config=config.snapshot(),
        inputs=inputs,
        metrics=report.metrics,
        ledger=ledger_info,
        warnings=warnings,
        models=models,
        templates=template_hashes(),
        split={"train": list(split.train), "validation": list(split.validation), "test": list(split.test)},
        timestamp=timestamp if timestamp is not None else time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest
