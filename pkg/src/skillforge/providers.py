"""Chat-completion and embedding backends behind one small interface.

Every request is canonicalized to JSON and hashed (SHA-256); the response is
stored under ``<cache_dir>/<hash>.json``. In ``replay`` mode the network is
never touched and a miss is a hard error, which is what makes pipeline runs
reproducible byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

STAGES = ("identify", "rerank")
MODES = ("live", "replay")
DEFAULT_EMBEDDING_MODEL = "multilingual-e5-large"
API_KEY_ENV = "SKILLFORGE_API_KEY"


class ProviderError(RuntimeError):
    pass


class CacheMissError(ProviderError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"cache miss in replay mode: {key}")


class TransportFailure(ProviderError):
    """Connection-level failure; retried."""


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Mapping[str, str], ...]
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "messages", tuple({"role": m["role"], "content": m["content"]} for m in self.messages)
        )
        for m in self.messages:
            if m["role"] not in ("system", "user", "assistant"):
                raise ValueError(f"invalid message role {m['role']!r}")

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_payload()).encode("utf-8")

    def cache_key(self) -> str:
        return request_hash({"kind": "chat", **self.to_payload()})


@dataclass(frozen=True)
class UsageRecord:
    model: str
    prompt_tokens: int
    completion_tokens: int
    stage: str
    timestamp: float = 0.0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class ChatResult:
    content: str
    usage: UsageRecord | None
    cached: bool = False


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    model: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ModelPrice:
    input_usd_per_mtok: float
    output_usd_per_mtok: float

    def __post_init__(self):
        if self.input_usd_per_mtok < 0 or self.output_usd_per_mtok < 0:
            raise ValueError("prices must be non-negative")


PriceTable = Mapping[str, ModelPrice]

# April 2025 list prices
DEFAULT_PRICES: dict[str, ModelPrice] = {
    "claude-3-7-sonnet": ModelPrice(3.0, 15.0),
    "claude-3-7-sonnet-20250219": ModelPrice(3.0, 15.0),
    "gpt-4o": ModelPrice(5.0, 15.0),
    "gpt-4o-2024-05-13": ModelPrice(5.0, 15.0),
}


def ledger_cost(records: Iterable[UsageRecord], prices: PriceTable) -> float:
    total = 0.0
    for r in records:
        price = prices.get(r.model)
        if price is None:
            raise ProviderError(f"no price configured for model {r.model!r}")
        total += (
            r.prompt_tokens / 1e6 * price.input_usd_per_mtok
            + r.completion_tokens / 1e6 * price.output_usd_per_mtok
        )
    return total


def parse_price_table(table: Mapping[str, Mapping[str, float]]) -> dict[str, ModelPrice]:
    out = {}
    for model, v in table.items():
        try:
            inp = v["input"] if "input" in v else v["input_usd_per_mtok"]
            outp = v["output"] if "output" in v else v["output_usd_per_mtok"]
        except (KeyError, TypeError):
            raise ValueError(f"price for {model!r} needs 'input' and 'output' (USD per million tokens)") from None
        out[model] = ModelPrice(float(inp), float(outp))
    return out


# ------------------------------------------------------------ cache/ledger


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def request_hash(payload: Mapping) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed JSON files, written atomically (tmp file + rename)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict | None:
        try:
            return json.loads(self.path(key).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, key: str, value: Mapping) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=f".{key[:16]}", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(value, fh, ensure_ascii=False, indent=1, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, self.path(key))
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def __contains__(self, key: str) -> bool:
        return self.path(key).exists()

    def __len__(self) -> int:
        if not self.directory.exists():
            return 0
        return sum(1 for _ in self.directory.glob("*.json"))


class UsageLedger:
    """Append-only, thread-safe record of live (non-cached) chat calls."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._records: list[UsageRecord] = []
        self._lock = threading.Lock()

    def append(self, record: UsageRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(record)) + "\n")

    @property
    def records(self) -> list[UsageRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def totals(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for r in self.records:
            key = f"{r.stage}:{r.model}"
            t = out.setdefault(key, {"calls": 0, "prompt_tokens": 0, "completion_tokens": 0})
            t["calls"] += 1
            t["prompt_tokens"] += r.prompt_tokens
            t["completion_tokens"] += r.completion_tokens
        return out

    def cost(self, prices: PriceTable) -> float:
        return ledger_cost(self.records, prices)

    @classmethod
    def load(cls, path: str | Path) -> list[UsageRecord]:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return [UsageRecord(**json.loads(line)) for line in lines if line.strip()]


# ---------------------------------------------------------------- adapters


class OpenAIAdapter:
    """``POST /chat/completions`` and ``POST /embeddings`` request shapes."""

    name = "openai"
    chat_path = "/chat/completions"
    embed_path = "/embeddings"

    def headers(self, api_key: str | None) -> dict:
        h = {"Content-Type": "application/json"}
        if api_key:
            h["Authorization"] = f"Bearer {api_key}"
        return h

    def chat_body(self, request: ChatRequest) -> dict:
        return request.to_payload()

    def parse_chat(self, data: Mapping) -> tuple[str, int, int]:
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc!r}") from None
        usage = data.get("usage") or {}
        return content or "", int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))

    def embed_body(self, model: str, texts: Sequence[str]) -> dict:
        return {"model": model, "input": list(texts)}

    def parse_embed(self, data: Mapping, n: int) -> list[list[float]]:
        try:
            items = sorted(data["data"], key=lambda d: d.get("index", 0))
            vectors = [item["embedding"] for item in items]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embedding response: {exc!r}") from None
        if len(vectors) != n:
            raise ProviderError(f"expected {n} embeddings, got {len(vectors)}")
        return vectors


class AnthropicAdapter(OpenAIAdapter):
    """Messages API shape; system prompt is a top-level field."""

    name = "anthropic"
    chat_path = "/messages"
    max_tokens = 4096

    def headers(self, api_key: str | None) -> dict:
        h = {"Content-Type": "application/json", "anthropic-version": "2023-06-01"}
        if api_key:
            h["x-api-key"] = api_key
        return h

    def chat_body(self, request: ChatRequest) -> dict:
        system = "\n\n".join(m["content"] for m in request.messages if m["role"] == "system")
        body = {
            "model": request.model,
            "max_tokens": self.max_tokens,
            "temperature": request.temperature,
            "messages": [dict(m) for m in request.messages if m["role"] != "system"],
        }
        if system:
            body["system"] = system
        return body

    def parse_chat(self, data: Mapping) -> tuple[str, int, int]:
        try:
            content = "".join(
                block.get("text", "") for block in data["content"] if block.get("type") == "text"
            )
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {exc!r}") from None
        usage = data.get("usage") or {}
        return content, int(usage.get("input_tokens", 0)), int(usage.get("output_tokens", 0))

    def embed_body(self, model, texts):
        raise ProviderError("anthropic adapter has no embedding endpoint")


ADAPTERS = {"openai": OpenAIAdapter, "anthropic": AnthropicAdapter}

# (url, json body, headers) -> (status code, decoded json)
Transport = Callable[[str, dict, dict], tuple[int, Any]]


def httpx_transport(timeout: float = 60.0) -> Transport:
    import httpx

    client = httpx.Client(timeout=timeout)

    def send(url: str, body: dict, headers: dict) -> tuple[int, Any]:
        try:
            resp = client.post(url, json=body, headers=headers)
        except httpx.TransportError as exc:
            raise TransportFailure(str(exc)) from exc
        try:
            data = resp.json()
        except ValueError:
            data = {"error": resp.text[:500]}
        return resp.status_code, data

    return send


# ---------------------------------------------------------------- provider


@dataclass
class Provider:
    """One endpoint plus cache, ledger and retry policy.

    ``transport`` defaults to an httpx client and exists so tests can plug
    in canned responses.
    """

    base_url: str | None = None
    api_key: str | None = None
    adapter: str = "openai"
    cache: ResponseCache | None = None
    mode: str = "live"
    ledger: UsageLedger = field(default_factory=UsageLedger)
    transport: Transport | None = None
    max_attempts: int = 3
    backoff: Sequence[float] = (1.0, 4.0, 16.0)
    max_in_flight: int = 4
    embed_batch_size: int = 64
    sleep: Callable[[float], None] = time.sleep

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "replay" and self.cache is None:
            raise ValueError("replay mode requires a cache")
        if self.adapter not in ADAPTERS:
            raise ValueError(f"unknown adapter {self.adapter!r}")
        self._adapter = ADAPTERS[self.adapter]()
        self._dims: dict[str, int] = {}
        self._dim_lock = threading.Lock()

    @property
    def live_ready(self) -> bool:
        return bool(self.base_url) and (bool(self.api_key) or self.transport is not None)

    def require_live(self) -> None:
        if self.mode == "live" and not self.live_ready:
            raise ProviderError(
                f"live mode needs an endpoint URL and credentials (set {API_KEY_ENV})"
            )

    # --- transport with retry

    def _post(self, path: str, body: dict) -> Any:
        self.require_live()
        if self.transport is None:
            self.transport = httpx_transport()
        url = self.base_url.rstrip("/") + path
        headers = self._adapter.headers(self.api_key)
        last = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff[min(attempt - 1, len(self.backoff) - 1)]
                log.warning("retrying %s in %.1fs (attempt %d): %s", path, delay, attempt + 1, last)
                self.sleep(delay)
            try:
                status, data = self.transport(url, body, headers)
            except TransportFailure as exc:
                last = str(exc)
                continue
            if 200 <= status < 300:
                return data
            last = f"HTTP {status}: {str(data)[:200]}"
            if status != 429 and status < 500:
                break
        raise ProviderError(f"request to {path} failed after {attempt + 1} attempt(s): {last}")

    # --- chat

    def chat(self, request: ChatRequest, stage: str = "identify") -> ChatResult:
        key = request.cache_key()
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return ChatResult(hit["response"]["content"], None, cached=True)
            if self.mode == "replay":
                raise CacheMissError(key)
        data = self._post(self._adapter.chat_path, self._adapter.chat_body(request))
        content, p_tok, c_tok = self._adapter.parse_chat(data)
        usage = UsageRecord(request.model, p_tok, c_tok, stage, time.time())
        self.ledger.append(usage)
        if self.cache is not None:
            self.cache.put(
                key,
                {
                    "request": request.to_payload(),
                    "response": {
                        "content": content,
                        "usage": {"prompt_tokens": p_tok, "completion_tokens": c_tok},
                    },
                },
            )
        return ChatResult(content, usage)

    # --- embeddings

    @staticmethod
    def embedding_key(model: str, text: str) -> str:
        return request_hash({"kind": "embedding", "model": model, "input": text})

    def _check_vector(self, model: str, values: Sequence[float]) -> np.ndarray:
        vec = np.asarray(values, dtype=np.float64)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)) or np.linalg.norm(vec) == 0:
            raise ProviderError(f"invalid embedding from {model!r}")
        with self._dim_lock:
            dim = self._dims.setdefault(model, vec.shape[0])
        if vec.shape[0] != dim:
            raise ProviderError(
                f"embedding dimension {vec.shape[0]} differs from {dim} seen earlier for {model!r}"
            )
        return vec

    def embed(self, texts: Sequence[str], model: str = DEFAULT_EMBEDDING_MODEL) -> list[EmbeddingVector]:
        texts = list(texts)
        out: list[np.ndarray | None] = [None] * len(texts)
        missing: dict[str, list[int]] = {}
        for i, text in enumerate(texts):
            key = self.embedding_key(model, text)
            hit = self.cache.get(key) if self.cache is not None else None
            if hit is not None:
                out[i] = self._check_vector(model, hit["embedding"])
            elif self.mode == "replay":
                raise CacheMissError(key)
            else:
                missing.setdefault(text, []).append(i)

        pending = list(missing)
        for start in range(0, len(pending), self.embed_batch_size):
            batch = pending[start : start + self.embed_batch_size]
            data = self._post(self._adapter.embed_path, self._adapter.embed_body(model, batch))
            for text, values in zip(batch, self._adapter.parse_embed(data, len(batch))):
                vec = self._check_vector(model, values)
                if self.cache is not None:
                    self.cache.put(
                        self.embedding_key(model, text),
                        {"request": {"model": model, "input": text}, "embedding": vec.tolist()},
                    )
                for i in missing[text]:
                    out[i] = vec
        return [EmbeddingVector(v, model) for v in out]

    def embed_matrix(self, texts: Sequence[str], model: str = DEFAULT_EMBEDDING_MODEL) -> np.ndarray:
        vectors = self.embed(texts, model)
        if not vectors:
            return np.zeros((0, 0))
        return np.vstack([v.values for v in vectors])

    # --- fan-out

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
        """Apply ``fn`` with at most ``max_in_flight`` concurrent calls; input order kept."""
        items = list(items)
        if self.max_in_flight <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(fn, items))


def api_key_from_env(name: str | None = None, environ: Mapping[str, str] | None = None) -> str | None:
    """``SKILLFORGE_<NAME>_API_KEY`` wins over ``SKILLFORGE_API_KEY``."""
    env = os.environ if environ is None else environ
    if name:
        specific = env.get(f"SKILLFORGE_{name.upper()}_API_KEY")
        if specific:
            return specific
    return env.get(API_KEY_ENV) or None
