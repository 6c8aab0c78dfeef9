import json

import pytest

from skillforge.pipeline import PipelineError, RunConfig, merged_ranking, run
from skillforge.prompts import template_hashes


def replay(fixtures_dir, out, name="run.toml"):
    cfg = RunConfig.from_toml(fixtures_dir / name)
    cfg.out_dir = str(out)
    return run(cfg, timestamp="2026-01-01T00:00:00Z")


def test_replay_matches_golden_and_repeats(fixtures_dir, tmp_path):
    m1 = replay(fixtures_dir, tmp_path / "a")
    m2 = replay(fixtures_dir, tmp_path / "b")
    p1 = (tmp_path / "a" / "predictions.jsonl").read_bytes()
    assert p1 == (tmp_path / "b" / "predictions.jsonl").read_bytes()
    assert p1 == (fixtures_dir / "golden" / "run" / "predictions.jsonl").read_bytes()
    golden = json.loads((fixtures_dir / "golden" / "run" / "metrics.json").read_text())
    assert json.loads(json.dumps(m1.metrics)) == golden
    assert (tmp_path / "a" / "manifest.json").read_text().replace(str(tmp_path / "a"), "") == (
        tmp_path / "b" / "manifest.json"
    ).read_text().replace(str(tmp_path / "b"), "")
    assert m2.ledger["calls"] == 0  # replay never calls out


def test_manifest_contents(fixtures_dir, tmp_path):
    m = replay(fixtures_dir, tmp_path)
    assert m.templates == template_hashes()
    assert m.models == {"identify": "claude-3-7-sonnet", "embedding": "multilingual-e5-large"}
    assert set(m.inputs) == {"corpus", "skills", "relations"}
    assert len(m.split["test"]) == 4
    rec = json.loads((tmp_path / "predictions.jsonl").read_text().splitlines()[0])
    assert set(rec) >= {"job_id", "sentence_index", "span", "surface", "candidates", "chosen", "strategy"}
    assert len(rec["candidates"]) == 10 and rec["chosen"] == rec["candidates"][0]["id"]


def test_rerank_improves_e2e(fixtures_dir, tmp_path):
    base = replay(fixtures_dir, tmp_path / "a").metrics
    rr = replay(fixtures_dir, tmp_path / "b", "run_rerank.toml").metrics
    assert rr["end_to_end"] > base["end_to_end"]
    golden = json.loads((fixtures_dir / "golden" / "run_rerank" / "metrics.json").read_text())
    assert json.loads(json.dumps(rr)) == golden


def test_live_without_credentials_aborts(fixtures_dir, tmp_path, monkeypatch):
    for var in ("SKILLFORGE_API_KEY", "SKILLFORGE_LLM_API_KEY", "SKILLFORGE_EMBEDDING_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    cfg = RunConfig.from_toml(fixtures_dir / "run.toml")
    cfg.mode = "live"
    cfg.out_dir = str(tmp_path / "out")
    with pytest.raises(PipelineError, match=r"^\[config\] live mode needs"):
        run(cfg)
    assert not (tmp_path / "out").exists()


def test_empty_cache_names_hash(fixtures_dir, tmp_path):
    cfg = RunConfig.from_toml(fixtures_dir / "run.toml")
    cfg.cache_dir = str(tmp_path / "nocache")
    cfg.out_dir = str(tmp_path / "out")
    with pytest.raises(PipelineError, match=r"cache miss in replay mode: [0-9a-f]{64}"):
        run(cfg)


def test_stage_tagged_errors(fixtures_dir, tmp_path):
    cfg = RunConfig.from_toml(fixtures_dir / "run.toml")
    cfg.corpus = str(tmp_path / "missing.conll")
    with pytest.raises(PipelineError, match=r"^\[corpus\]"):
        run(cfg)


def test_gold_identification_links_only(fixtures_dir, tmp_path):
    cfg = RunConfig.from_toml(fixtures_dir / "run.toml")
    cfg.identify_strategy = "gold"
    cfg.retrieval = "fuzzy"
    cfg.out_dir = str(tmp_path)
    m = run(cfg, timestamp="")
    assert m.metrics["conll"]["f1"] == 1.0 and "identify" not in m.models


def test_merged_ranking_round_robin():
    assert merged_ranking([["a", "b", "c"], ["d", "a", "e"]]) == ["a", "d", "b", "c", "e"]
    assert merged_ranking([]) == []
