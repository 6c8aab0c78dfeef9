"""Command line entry point: ``skillforge <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; data goes to stdout or ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import CliConfig, ConfigError, load_cli_config
from .corpus import dumps_corpus, load_corpus, posting_spans, save_corpus, split_corpus
from .eval import (
    EvalReport,
    conll_f1,
    end_to_end_score,
    hitrate_at_k,
    krippendorff_alpha,
    muc_partial,
    spans_by_sentence,
)
from .identify import ExamplePool, PromptStrategy, identify, outputs_to_postings
from .link import EmbeddingIndex, LinkConfig, RerankStrategy, build_index, link, make_retriever
from .link.multiskill import MultiSkillModel, train_multiskill
from .pipeline import PipelineError, RunConfig, merged_ranking, prediction_record, run
from .providers import ProviderError, UsageLedger, UsageRecord, ledger_cost
from .taxonomy import load_taxonomy, to_jsonl

log = logging.getLogger("skillforge")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
METRICS = ("conll", "muc", "hitrate", "e2e", "alpha")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_jsonl(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _filter_area(postings, area: str | None):
    if area is None:
        return postings
    return [p for p in postings if p.area == area]


def _provider(cfg: CliConfig, name: str, ledger: UsageLedger | None = None):
    return cfg.make_provider(name, ledger)


# ---------------------------------------------------------------- commands


def cmd_split(args, cfg: CliConfig) -> int:
    postings = load_corpus(args.input)
    spec = split_corpus(postings, args.seed)
    _write(spec.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_identify(args, cfg: CliConfig) -> int:
    postings = _filter_area(load_corpus(args.input), args.filter_area)
    shots = args.shots if args.shots is not None else (0 if args.strategy in ("zero", "zero_shot") else cfg.shots)
    strategy = PromptStrategy(args.strategy, shots)
    ledger = UsageLedger(args.ledger)
    provider = _provider(cfg, args.provider, ledger)
    provider.require_live()
    pool_postings = load_corpus(args.pool) if args.pool else []
    sentences = [s for p in pool_postings for s in p.sentences]
    embedder = _provider(cfg, args.embedding_provider) if strategy.kind == "dynamic_few_shot" else None
    if strategy.kind != "zero_shot" and not sentences:
        raise UsageError("few-shot strategies need --pool (labeled train/validation corpus)")
    pool = ExamplePool.build(sentences, embedder, args.embedding_model or cfg.embedding_model)
    outputs = identify(postings, strategy, provider, pool, args.model or cfg.identify_model, fail_fast=args.fail_fast)
    for o in outputs:
        for w in o.alignment_warnings:
            log.warning("%s/%d: %s", o.job_id, o.sentence_index, w)
    tagged = outputs_to_postings(outputs)
    if args.out:
        save_corpus(tagged, args.out)
    else:
        sys.stdout.write(dumps_corpus(tagged))
    return EXIT_OK


def _read_multiskill_examples(path: str) -> tuple[list[str], list[int]]:
    """Corpus file (span multi flags) or TSV lines ``label<TAB>span``."""
    if path.endswith((".conll", ".iob", ".txt")) and not path.endswith(".tsv"):
        spans = [sp for p in load_corpus(path) for sp in posting_spans(p)]
        return [sp.surface for sp in spans], [int(sp.is_multi) for sp in spans]
    texts, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{n}: expected '0|1<TAB>span'")
            labels.append(int(parts[0]))
            texts.append(parts[1])
    return texts, labels


def cmd_train_multiskill(args, cfg: CliConfig) -> int:
    texts, labels = _read_multiskill_examples(args.input)
    model = train_multiskill(texts, labels, C=args.C)
    model.save(args.out)
    print(f"trained on {len(texts)} spans, training accuracy {model.training_accuracy:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_index(args, cfg: CliConfig) -> int:
    taxonomy = load_taxonomy(args.skills, args.relations)
    provider = _provider(cfg, args.provider)
    provider.require_live()
    index = build_index(taxonomy, provider, args.model or cfg.embedding_model, args.passage_mode)
    index.save(args.out)
    print(f"indexed {len(index)} entries, dim {index.dim}", file=sys.stderr)
    return EXIT_OK


def cmd_taxonomy(args, cfg: CliConfig) -> int:
    _write(to_jsonl(load_taxonomy(args.skills, args.relations)), args.out)
    return EXIT_OK


def cmd_link(args, cfg: CliConfig) -> int:
    postings = _filter_area(load_corpus(args.input), args.filter_area)
    taxonomy = load_taxonomy(args.skills, args.relations)
    strategy = RerankStrategy.parse(args.rerank)
    k = args.k or cfg.k
    ledger = UsageLedger(args.ledger)
    embed = _provider(cfg, args.embedding_provider) if args.retrieval == "embedding" else None
    index = EmbeddingIndex.load(args.index) if args.index else None
    retriever = make_retriever(args.retrieval, taxonomy, embed, args.embedding_model or cfg.embedding_model, k, index)
    reranker = None
    if strategy.enabled:
        reranker = _provider(cfg, args.provider, ledger)
        reranker.require_live()
    model = MultiSkillModel.load(args.multiskill_model) if args.multiskill_model else None
    spans = [sp for p in postings for sp in posting_spans(p)]
    sentences = {(p.job_id, i): s.raw_text for p in postings for i, s in enumerate(p.sentences)}
    config = LinkConfig(k=k, delimiters=cfg.delimiters, rerank_model=args.model or cfg.rerank_model, min_subquery_score=cfg.min_subquery_score)
    results = link(spans, taxonomy, retriever, strategy, reranker, sentences=sentences, multiskill_model=model, config=config)
    text = "".join(json.dumps(prediction_record(r), ensure_ascii=False, sort_keys=True) + "\n" for r in results)
    _write(text, args.out)
    return EXIT_OK


def _hitrate_items(args) -> list:
    records = _read_jsonl(args.pred)
    if records and "ranked_ids" in records[0]:
        return [(r["gold_id"], r["ranked_ids"]) for r in records]
    if not args.gold:
        raise UsageError("--gold corpus is required with a predictions file")
    gold = _filter_area(load_corpus(args.gold), args.filter_area)
    by_span: dict[tuple, list] = {}
    for r in records:
        key = (r["job_id"], r["sentence_index"], *r["span"])
        by_span.setdefault(key, []).append(r)
    items = []
    for sp in (sp for p in gold for sp in posting_spans(p)):
        if not sp.gold_link:
            continue
        recs = by_span.get(sp.key, [])
        items.append((sp.gold_link, merged_ranking([[c["id"] for c in r["candidates"]] for r in recs])))
    return items


def _job_skills(path: str, area_jobs: set[str] | None) -> dict[str, list[str]]:
    if path.endswith(".jsonl") or path.endswith(".json"):
        out: dict[str, list[str]] = {}
        for r in _read_jsonl(path):
            if "skills" in r:
                out.setdefault(r["job_id"], []).extend(r["skills"])
            elif r.get("chosen") is not None:
                out.setdefault(r["job_id"], []).append(r["chosen"])
            else:
                out.setdefault(r["job_id"], [])
    else:
        out = {p.job_id: [sp.gold_link for sp in posting_spans(p) if sp.gold_link] for p in load_corpus(path)}
    if area_jobs is not None:
        out = {j: v for j, v in out.items() if j in area_jobs}
    return out


def cmd_eval(args, cfg: CliConfig) -> int:
    metric = args.metric
    report = EvalReport()
    if metric in ("conll", "muc"):
        if not args.gold:
            raise UsageError(f"--gold is required for {metric}")
        gold = _filter_area(load_corpus(args.gold), args.filter_area)
        pred = {p.job_id: p for p in load_corpus(args.pred)}
        keys = [(p.job_id, i) for p in gold for i in range(len(p.sentences))]
        g_spans = [sp for p in gold for sp in posting_spans(p)]
        p_spans = [sp for job in (p.job_id for p in gold) if job in pred for sp in posting_spans(pred[job])]
        missing = [p.job_id for p in gold if p.job_id not in pred]
        if missing:
            raise ValueError(f"predictions missing for jobs: {missing[:5]}")
        fn = conll_f1 if metric == "conll" else muc_partial
        report.add(metric, fn(spans_by_sentence(g_spans, keys), spans_by_sentence(p_spans, keys)))
        _write(report.to_json() + "\n" if args.format == "json" else report.to_table() + "\n", args.out)
        return EXIT_OK
    if metric == "hitrate":
        value = hitrate_at_k(_hitrate_items(args), args.k)
    elif metric == "e2e":
        if not args.gold:
            raise UsageError("--gold is required for e2e")
        jobs = None
        if args.filter_area is not None:
            if args.gold.endswith(".jsonl"):
                raise UsageError("--filter-area needs a corpus-format gold file")
            jobs = {p.job_id for p in load_corpus(args.gold) if p.area == args.filter_area}
        value = end_to_end_score(_job_skills(args.gold, jobs), _job_skills(args.pred, jobs))
    else:
        table: dict = {}
        for r in _read_jsonl(args.pred):
            table.setdefault(r["unit"], {})[r["annotator"]] = r["label"]
        value = krippendorff_alpha(table)
    _write(f"{value:.4f}\n" if args.format == "text" else json.dumps({metric: value}) + "\n", args.out)
    return EXIT_OK


def cmd_run(args, cfg: CliConfig) -> int:
    config = RunConfig.from_toml(args.config_file)
    if args.mode:
        config.mode = args.mode
    if args.jobs:
        config.jobs = args.jobs
    if args.cache_dir:
        config.cache_dir = str(Path(args.cache_dir).resolve())
    if args.out_dir:
        config.out_dir = str(Path(args.out_dir).resolve())
    manifest = run(config)
    sys.stdout.write(json.dumps(manifest.metrics, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_cost(args, cfg: CliConfig) -> int:
    if args.ledger:
        records = UsageLedger.load(args.ledger)
    else:
        if args.model is None:
            raise UsageError("give --ledger, or --model with token counts")
        records = [UsageRecord(args.model, args.prompt_tokens, args.completion_tokens, "identify", 0.0)]
    cost = ledger_cost(records, cfg.prices)
    print(f"{cost:.2f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--jobs", type=int, help="max concurrent provider calls")
    common.add_argument("--mode", choices=("live", "replay"))
    common.add_argument("--cache-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="skillforge", description="Skill identification and taxonomy linking for job postings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    add_parser = sub.add_parser

    def sub_parser(name, **kw):
        p = add_parser(name, parents=[common], **kw)
        if name != "run":
            p.add_argument("--config", help="TOML config file (defaults, providers, prices)")
        return p

    p = sub_parser("split", help="deterministic train/validation/test split")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub_parser("identify", help="tag skill spans with an LLM")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--strategy", default="zero_shot", help="zero_shot | static_few_shot | dynamic_few_shot (or zero/static/dynamic)")
    p.add_argument("--shots", type=int)
    p.add_argument("--model")
    p.add_argument("--pool", help="labeled corpus for few-shot examples")
    p.add_argument("--provider", default="llm")
    p.add_argument("--embedding-provider", default="embedding")
    p.add_argument("--embedding-model")
    p.add_argument("--ledger", help="append usage records to this JSONL file")
    p.add_argument("--fail-fast", action="store_true")
    p.add_argument("--filter-area")
    p.set_defaults(func=cmd_identify)

    p = sub_parser("train-multiskill", help="train the multi-skill span classifier")
    p.add_argument("--in", dest="input", required=True, help="corpus file or TSV of '0|1<TAB>span'")
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=1.0)
    p.set_defaults(func=cmd_train_multiskill)

    p = sub_parser("link", help="link tagged spans to taxonomy ids")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--skills", required=True)
    p.add_argument("--relations")
    p.add_argument("--retrieval", choices=("fuzzy", "embedding"), default="fuzzy")
    p.add_argument("--rerank", default="none")
    p.add_argument("--k", type=int)
    p.add_argument("--model", help="rerank model id")
    p.add_argument("--provider", default="llm")
    p.add_argument("--embedding-provider", default="embedding")
    p.add_argument("--embedding-model")
    p.add_argument("--index")
    p.add_argument("--multiskill-model")
    p.add_argument("--ledger")
    p.add_argument("--filter-area")
    p.add_argument("--out")
    p.set_defaults(func=cmd_link)

    p = sub_parser("index", help="embed the taxonomy into an index file")
    p.add_argument("--skills", required=True)
    p.add_argument("--relations")
    p.add_argument("--model")
    p.add_argument("--provider", default="embedding")
    p.add_argument("--passage-mode", choices=("label", "label+description"), default="label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub_parser("eval", help="compute a metric")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--filter-area")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub_parser("run", help="full pipeline from a run config")
    p.add_argument("--config", dest="config_file", required=True, help="run TOML")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_run)

    p = sub_parser("cost", help="price a usage ledger")
    p.add_argument("--ledger")
    p.add_argument("--model")
    p.add_argument("--prompt-tokens", type=int, default=0)
    p.add_argument("--completion-tokens", type=int, default=0)
    p.set_defaults(func=cmd_cost)

    p = sub_parser("taxonomy", help="dump the taxonomy as JSONL")
    p.add_argument("--skills", required=True)
    p.add_argument("--relations")
    p.add_argument("--out")
    p.set_defaults(func=cmd_taxonomy)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_cli_config(getattr(args, "config", None))
        if args.mode:
            cfg.mode = args.mode
        if args.cache_dir:
            cfg.cache_dir = args.cache_dir
        if args.jobs:
            cfg.jobs = args.jobs
        cfg.validate()
        return args.func(args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"skillforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PipelineError, ProviderError, ValueError, KeyError, OSError) as exc:
        print(f"skillforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
