"""TOML configuration shared by the CLI and the pipeline.

Precedence is flags > environment > config file > built-in defaults; the
CLI applies flags on top of what :func:`load_cli_config` returns.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .link.splitter import DEFAULT_DELIMITERS
from .providers import (
    ADAPTERS,
    DEFAULT_EMBEDDING_MODEL,
    DEFAULT_PRICES,
    MODES,
    ModelPrice,
    Provider,
    ResponseCache,
    UsageLedger,
    api_key_from_env,
    parse_price_table,
)

ENV_CONFIG = "SKILLFORGE_CONFIG"
ENV_CACHE = "SKILLFORGE_CACHE_DIR"
ENV_MODE = "SKILLFORGE_MODE"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProviderSettings:
    name: str
    base_url: str | None = None
    adapter: str = "openai"
    # name of the environment variable holding the key; never the key itself
    api_key_env: str | None = None

    def __post_init__(self):
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"provider {self.name!r}: unknown adapter {self.adapter!r}")

    def api_key(self, environ: Mapping[str, str] | None = None) -> str | None:
        env = os.environ if environ is None else environ
        if self.api_key_env:
            return env.get(self.api_key_env) or None
        return api_key_from_env(self.name, env)


@dataclass
class CliConfig:
    providers: dict[str, ProviderSettings] = field(default_factory=dict)
    prices: dict[str, ModelPrice] = field(default_factory=lambda: dict(DEFAULT_PRICES))
    k: int = 10
    shots: int = 0
    delimiters: tuple[str, ...] = DEFAULT_DELIMITERS
    min_subquery_score: float | None = None
    cache_dir: str = "cache"
    mode: str = "live"
    jobs: int = 4
    embedding_model: str = DEFAULT_EMBEDDING_MODEL
    identify_model: str = "claude-3-7-sonnet"
    rerank_model: str = "gpt-4o"

    def validate(self) -> "CliConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.shots < 0:
            raise ConfigError("shots must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.delimiters:
            raise ConfigError("at least one delimiter is required")
        return self

    def provider_settings(self, name: str) -> ProviderSettings:
        if name in self.providers:
            return self.providers[name]
        if "default" in self.providers:
            return replace(self.providers["default"], name=name)
        return ProviderSettings(name)

    def make_provider(self, name: str, ledger: UsageLedger | None = None, transport=None, base: Path | None = None) -> Provider:
        s = self.provider_settings(name)
        cache_dir = Path(self.cache_dir)
        if base is not None and not cache_dir.is_absolute():
            cache_dir = base / cache_dir
        return Provider(
            base_url=s.base_url,
            api_key=s.api_key(),
            adapter=s.adapter,
            cache=ResponseCache(cache_dir),
            mode=self.mode,
            ledger=ledger if ledger is not None else UsageLedger(),
            transport=transport,
            max_in_flight=self.jobs,
        )


def read_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _providers(section: Mapping[str, Any]) -> dict[str, ProviderSettings]:
    out = {}
    for name, body in section.items():
        if not isinstance(body, Mapping):
            raise ConfigError(f"[providers.{name}] must be a table")
        unknown = set(body) - {"base_url", "adapter", "api_key_env"}
        if unknown:
            raise ConfigError(f"[providers.{name}]: unknown keys {sorted(unknown)}")
        out[name] = ProviderSettings(name, body.get("base_url"), body.get("adapter", "openai"), body.get("api_key_env"))
    return out


def cli_config_from_dict(data: Mapping[str, Any]) -> CliConfig:
    cfg = CliConfig()
    if "providers" in data:
        cfg.providers = _providers(data["providers"])
    if "prices" in data:
        cfg.prices = {**cfg.prices, **parse_price_table(data["prices"])}
    d = data.get("defaults", {})
    for key in ("k", "shots", "jobs"):
        if key in d:
            setattr(cfg, key, int(d[key]))
    for key in ("cache_dir", "mode", "embedding_model", "identify_model", "rerank_model"):
        if key in d:
            setattr(cfg, key, str(d[key]))
    if "delimiters" in d:
        cfg.delimiters = tuple(d["delimiters"])
    if "min_subquery_score" in d:
        cfg.min_subquery_score = float(d["min_subquery_score"])
    return cfg


def load_cli_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> CliConfig:
    """File (explicit path or ``$SKILLFORGE_CONFIG``) then environment overrides."""
    env = os.environ if environ is None else environ
    path = path or env.get(ENV_CONFIG)
    cfg = cli_config_from_dict(read_toml(path)) if path else CliConfig()
    if env.get(ENV_CACHE):
        cfg.cache_dir = env[ENV_CACHE]
    if env.get(ENV_MODE):
        cfg.mode = env[ENV_MODE]
    return cfg.validate()
