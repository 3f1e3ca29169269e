"""Synthetic minority-node generation: prompt building, chat/embedding providers,
response caching and oversampling plans.

Two provider families implement the same surface: a deterministic offline
provider for tests and CI, and remote providers speaking the OpenAI-compatible
JSON HTTP protocol (``POST {base}/chat/completions`` and ``POST
{base}/embeddings`` with ``Authorization: Bearer`` auth) so any vendor slots
in via configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = (
    "Write a short {domain} paper title and abstract about the topic {label}. "
    "Return the title on the first line and the abstract below it."
)
DEFAULT_SYSTEM = (
    "You generate realistic but fictional node content for graph datasets. "
    "Stay strictly on the requested topic."
)


class ProviderError(RuntimeError):
    """Transport failures, empty completions or malformed provider replies."""


class PromptError(ValueError):
    """Raised when a template cannot be rendered without leftovers."""


@dataclass(frozen=True)
class PromptTemplate:
    template: str = DEFAULT_TEMPLATE
    system: str = DEFAULT_SYSTEM
    domain: str = "computer science"


def build_prompt(template: PromptTemplate, class_label_text: str) -> str:
    """Render the user prompt for one class; deterministic in its inputs."""
    if not class_label_text:
        raise PromptError("class label text must be non-empty")
    try:
        return template.template.format(label=class_label_text, domain=template.domain)
    except (KeyError, IndexError) as exc:
        raise PromptError(f"unresolved placeholder in template: {exc}") from exc


@dataclass(frozen=True)
class SyntheticNode:
    """A generated minority node before graph insertion."""

    class_index: int
    text: str
    embedding: np.ndarray
    provider_id: str
    cache_key: str


@dataclass
class ProviderConfig:
    kind: str  # "offline" | "remote-chat" | "remote-embed"
    base_url: str = ""
    model: str = ""
    temperature: float = 0.8
    api_key_env: str = ""
    max_parallel: int = 4
    max_retries: int = 3
    retry_base_delay: float = 1.0
    timeout: float = 60.0
    cache_path: str | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind == "offline":
            if self.seed is None:
                raise ValueError("offline provider requires a seed")
        elif self.kind in ("remote-chat", "remote-embed"):
            if not self.base_url or not self.api_key_env:
                raise ValueError(f"{self.kind} provider requires base_url and api_key_env")
        else:
            raise ValueError(f"unknown provider kind {self.kind!r}")


class JsonlCache:
    """Append-only JSONL cache, one {key, kind, payload} record per line.

    Reads are lock-free once loaded; writes are serialized. ``path=None``
    keeps the cache in memory only.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if self.path and self.path.exists():
            with self.path.open() as f:
                for line in f:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._records[rec["key"]] = rec["payload"]

    def get(self, key: str):
        return self._records.get(key)

    def put(self, key: str, kind: str, payload) -> None:
        with self._lock:
            if key in self._records:
                return
            self._records[key] = payload
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as f:
                    f.write(json.dumps({"key": key, "kind": kind, "payload": payload}) + "\n")

    def __len__(self):
        return len(self._records)


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def chat_cache_key(model: str, prompt: str, index: int) -> str:
    return _digest("chat", model, prompt, str(index))


def embed_cache_key(model: str, text: str) -> str:
    return _digest("embed", model, text)


class OfflineProvider:
    """Deterministic chat + embedding double, a pure function of (class, index, seed).

    Generated text is a class-name template stamped with the sample index.
    Embeddings are the class centroid of clean-labeled training features plus
    seeded Gaussian jitter (sigma = ``jitter`` x per-feature std), which keeps
    the class geometry that a real language-model embedding would carry.
    """

    model_id = "offline"

    def __init__(self, centroids: np.ndarray, feature_std: np.ndarray,
                 label_texts: list[str], seed: int, jitter: float = 0.05):
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.feature_std = np.asarray(feature_std, dtype=np.float64)
        self.label_texts = list(label_texts)
        self.seed = int(seed)
        self.jitter = float(jitter)
        self.calls = 0

    @classmethod
    def from_graph(cls, graph: Graph, seed: int, label_texts: list[str] | None = None,
                   jitter: float = 0.05) -> "OfflineProvider":
        if label_texts is None:
            label_texts = [f"class_{c}" for c in range(graph.num_classes)]
        noisy = set(graph.noise_mask)
        centroids = np.zeros((graph.num_classes, graph.num_features))
        train = list(graph.train_mask)
        for c in range(graph.num_classes):
            clean = [i for i in train if graph.labels[i] == c and i not in noisy]
            rows = clean or [i for i in train if graph.labels[i] == c]
            if rows:
                centroids[c] = graph.features[rows].mean(axis=0)
        if train:
            feature_std = graph.features[train].std(axis=0)
        else:
            feature_std = graph.features.std(axis=0)
        return cls(centroids, feature_std, label_texts, seed, jitter)

    def _class_of(self, label: str) -> int | None:
        try:
            return self.label_texts.index(label)
        except ValueError:
            return None

    def complete(self, prompt: str, *, system: str = "", label: str = "",
                 index: int = 0, seed: int | None = None) -> str:
        self.calls += 1
        stamp = self.seed if seed is None else seed
        return (
            f"[{label}] synthetic node {index}: a generated record about {label} "
            f"(variant {stamp}-{index})."
        )

    def embed(self, texts: list[str]) -> np.ndarray:
        self.calls += 1
        dim = self.feature_std.shape[0]
        rows = np.zeros((len(texts), dim))
        for r, text in enumerate(texts):
            label = text[1:text.index("]")] if text.startswith("[") and "]" in text else ""
            c = self._class_of(label)
            rng = np.random.default_rng(
                int.from_bytes(_digest("offline-embed", str(self.seed), text).encode()[:8], "little")
            )
            noise = rng.standard_normal(dim) * (self.jitter * self.feature_std)
            if c is None:
                rows[r] = rng.standard_normal(dim) + noise
            else:
                rows[r] = self.centroids[c] + noise
        return rows

    def check_ready(self) -> None:
        pass


def _auth_headers(config: ProviderConfig) -> dict[str, str]:
    key = os.environ.get(config.api_key_env, "")
    if not key:
        raise ProviderError(f"environment variable {config.api_key_env!r} is not set")
    return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}


class _RemoteBase:
    def __init__(self, config: ProviderConfig, post=None, sleep=None):
        import time

        import requests

        self.config = config
        self._post = post or requests.post
        self._sleep = sleep or time.sleep
        self.calls = 0

    @property
    def model_id(self) -> str:
        return self.config.model

    def check_ready(self) -> None:
        _auth_headers(self.config)

    def _request(self, endpoint: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + endpoint
        headers = _auth_headers(self.config)
        delay = self.config.retry_base_delay
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                self.calls += 1
                resp = self._post(url, json=payload, headers=headers,
                                  timeout=self.config.timeout)
                resp.raise_for_status()
                return resp.json()
            except Exception as exc:  # noqa: BLE001 - transport errors vary by stack
                last_exc = exc
                log.warning("provider request failed (attempt %d/%d): %s",
                            attempt + 1, self.config.max_retries, exc)
                if attempt + 1 < self.config.max_retries:
                    self._sleep(delay)
                    delay *= 2
        raise ProviderError(
            f"request to {url} failed after {self.config.max_retries} attempts: {last_exc}"
        )


class RemoteChatProvider(_RemoteBase):
    """Chat-completion client for OpenAI-compatible endpoints."""

    def complete(self, prompt: str, *, system: str = "", label: str = "",
                 index: int = 0, seed: int | None = None) -> str:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": prompt})
        data = self._request(
            "/chat/completions",
            {"model": self.config.model, "messages": messages,
             "temperature": self.config.temperature},
        )
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat completion response: {data!r}") from exc
        if not text or not text.strip():
            raise ProviderError("provider returned an empty completion")
        return text


class RemoteEmbedProvider(_RemoteBase):
    """Embedding client for OpenAI-compatible endpoints."""

    def embed(self, texts: list[str]) -> np.ndarray:
        data = self._request("/embeddings",
                             {"model": self.config.model, "input": list(texts)})
        try:
            items = sorted(data["data"], key=lambda d: d["index"])
            vectors = [item["embedding"] for item in items]
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"malformed embeddings response: {data!r}") from exc
        if len(vectors) != len(texts):
            raise ProviderError(
                f"expected {len(texts)} embeddings, got {len(vectors)}"
            )
        lengths = {len(v) for v in vectors}
        if len(lengths) > 1:
            raise ProviderError(f"inconsistent embedding lengths in batch: {lengths}")
        return np.asarray(vectors, dtype=np.float64)


@dataclass
class Provider:
    """Chat + embedding endpoints bundled with their cache and prompt template."""

    chat: object
    embedder: object
    cache: JsonlCache = field(default_factory=JsonlCache)
    template: PromptTemplate = field(default_factory=PromptTemplate)
    max_parallel: int = 4
    embed_batch_size: int = 64

    @property
    def provider_id(self) -> str:
        return f"{self.chat.model_id}+{self.embedder.model_id}"

    def check_ready(self) -> None:
        self.chat.check_ready()
        self.embedder.check_ready()


def offline_provider(graph: Graph, seed: int, label_texts: list[str] | None = None,
                     cache_path=None, template: PromptTemplate | None = None) -> Provider:
    backend = OfflineProvider.from_graph(graph, seed, label_texts)
    return Provider(chat=backend, embedder=backend, cache=JsonlCache(cache_path),
                    template=template or PromptTemplate(), max_parallel=1)


def generate_minority_texts(provider: Provider, class_label_text: str,
                            count: int, seed: int, start_index: int = 0) -> list[str]:
    """Generate ``count`` texts for one class; cached by (model, prompt, index).

    ``start_index`` offsets the sample indices so that a later generation
    round requests fresh samples instead of replaying cached ones.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return []
    prompt = build_prompt(provider.template, class_label_text)
    model = provider.chat.model_id
    indices = range(start_index, start_index + count)
    keys = [chat_cache_key(model, prompt, i) for i in indices]
    texts: list[str | None] = [None] * count
    missing = []
    for i, key in enumerate(keys):
        hit = provider.cache.get(key)
        if hit is not None:
            texts[i] = hit["text"]
        else:
            missing.append(i)

    def fetch(i: int) -> str:
        return provider.chat.complete(
            prompt, system=provider.template.system,
            label=class_label_text, index=start_index + i, seed=seed,
        )

    if missing:
        if provider.max_parallel > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=provider.max_parallel) as pool:
                fetched = list(pool.map(fetch, missing))
        else:
            fetched = [fetch(i) for i in missing]
        for i, text in zip(missing, fetched):
            if not text:
                raise ProviderError(f"empty completion for sample {i}")
            texts[i] = text
            provider.cache.put(keys[i], "chat", {"text": text})
    return list(texts)  # type: ignore[arg-type]


def embed_texts(provider: Provider, texts: list[str]) -> np.ndarray:
    """Embed texts in input order, one row each; cached per (model, text)."""
    if not texts:
        raise ValueError("embed_texts requires a non-empty list of texts")
    if any(not t for t in texts):
        raise ValueError("texts must be non-empty strings")
    model = provider.embedder.model_id
    keys = [embed_cache_key(model, t) for t in texts]
    rows: list[np.ndarray | None] = [None] * len(texts)
    missing_texts: list[str] = []
    missing_pos: dict[str, list[int]] = {}
    for i, (text, key) in enumerate(zip(texts, keys)):
        hit = provider.cache.get(key)
        if hit is not None:
            rows[i] = np.asarray(hit["vector"], dtype=np.float64)
        elif text in missing_pos:
            missing_pos[text].append(i)
        else:
            missing_pos[text] = [i]
            missing_texts.append(text)

    for start in range(0, len(missing_texts), provider.embed_batch_size):
        chunk = missing_texts[start:start + provider.embed_batch_size]
        vectors = provider.embedder.embed(chunk)
        if vectors.shape[0] != len(chunk):
            raise ProviderError("embedding batch size mismatch")
        for text, vec in zip(chunk, vectors):
            provider.cache.put(embed_cache_key(model, text), "embed",
                               {"vector": vec.tolist()})
            for i in missing_pos[text]:
                rows[i] = vec

    lengths = {r.shape[-1] for r in rows}
    if len(lengths) > 1:
        raise ProviderError(f"inconsistent embedding lengths across the batch: {lengths}")
    return np.vstack([r.reshape(1, -1) for r in rows])


def plan_oversampling(counts: np.ndarray, scale: float) -> np.ndarray:
    """Per-class generation counts raising minorities to round(scale * max count)."""
    if not 0 < scale <= 1:
        raise ValueError(f"scale must be in (0, 1], got {scale}")
    counts = np.asarray(counts, dtype=np.int64)
    if counts.max(initial=0) <= 0:
        raise ValueError("all class counts are zero")
    target = int(np.floor(scale * counts.max() + 0.5))
    return np.maximum(0, target - counts)


def synthesize_nodes(provider: Provider, class_index: int, class_label_text: str,
                     count: int, seed: int, start_index: int = 0) -> list[SyntheticNode]:
    """Generate and embed ``count`` nodes of one class; labels are by construction."""
    texts = generate_minority_texts(provider, class_label_text, count, seed, start_index)
    if not texts:
        return []
    embeddings = embed_texts(provider, texts)
    prompt = build_prompt(provider.template, class_label_text)
    nodes = []
    for i, (text, vec) in enumerate(zip(texts, embeddings)):
        nodes.append(SyntheticNode(
            class_index=class_index,
            text=text,
            embedding=np.asarray(vec, dtype=np.float64),
            provider_id=provider.provider_id,
            cache_key=chat_cache_key(provider.chat.model_id, prompt, start_index + i),
        ))
    return nodes


def execute_plan(provider: Provider, plan: np.ndarray, label_texts: list[str],
                 seed: int, start_counts: np.ndarray | None = None
                 ) -> list[SyntheticNode]:
    """Run a per-class generation plan, class by class in index order.

    ``start_counts`` holds how many samples each class has already generated
    in earlier rounds, so new requests continue the per-class numbering.
    """
    plan = np.asarray(plan, dtype=np.int64)
    if start_counts is None:
        start_counts = np.zeros_like(plan)
    nodes: list[SyntheticNode] = []
    for c, count in enumerate(plan):
        if count > 0:
            nodes.extend(synthesize_nodes(provider, c, label_texts[c], int(count),
                                          seed, start_index=int(start_counts[c])))
    return nodes
