"""Concrete provider backends: scripted mock + HTTP chat completion,
deterministic hash / scripted / HTTP embeddings, and stub / HTTP image
generation.

The mock chat provider is a pure function of (request text fingerprint,
script table): identical requests always produce identical responses, across
threads and across process runs. Stateful failure injection for retry tests
lives in the separate ``FlakyChatProvider`` wrapper.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ContextOverflowError,
    FatalProviderError,
    RetryableProviderError,
)
from .llm import (
    ChatMessage,
    CompletionRequest,
    CompletionResponse,
    ImagePart,
    TextPart,
    Usage,
    estimate_usage,
    require_env_credential,
)

logger = logging.getLogger(__name__)

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".webp": "image/webp",
    ".svg": "image/svg+xml",
}


def media_type_for(path: str | Path) -> str:
    return _MEDIA_TYPES.get(Path(path).suffix.lower(), "image/png")


# ---------------------------------------------------------------------------
# Chat providers
# ---------------------------------------------------------------------------

@dataclass
class MockRule:
    contains: str
    responses: list[str]


class MockChatProvider:
    """Scripted chat backend.

    Lookup order for a request: exact fingerprint entry, then the first
    substring rule matching the request's concatenated text parts, then the
    default list. The matched list supplies the samples in order; if it is
    shorter than ``sample_count`` the last entry is repeated. No scripted
    answer raises FatalProviderError carrying the fingerprint so the script
    can be extended.
    """

    provider_id = "mock"

    def __init__(self, fingerprints: dict[str, list[str]] | None = None,
                 rules: list[MockRule] | None = None,
                 default: list[str] | None = None):
        self.fingerprints = dict(fingerprints or {})
        self.rules = list(rules or [])
        self.default = list(default) if default else None
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockChatProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [MockRule(r["contains"], list(r["responses"]))
                 for r in data.get("rules", [])]
        return cls(fingerprints=data.get("fingerprints"),
                   rules=rules, default=data.get("default"))

    def _lookup(self, request: CompletionRequest) -> list[str]:
        fp = request.fingerprint()
        if fp in self.fingerprints:
            return self.fingerprints[fp]
        text = "\n".join(request.text_parts())
        for rule in self.rules:
            if rule.contains in text:
                return rule.responses
        if self.default is not None:
            return self.default
        raise FatalProviderError(
            f"mock script has no response for request fingerprint {fp} "
            f"(first text part: {request.text_parts()[0][:80]!r})")

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(request)
        scripted = self._lookup(request)
        samples = tuple(scripted[i] if i < len(scripted) else scripted[-1]
                        for i in range(request.sample_count))
        return CompletionResponse(samples=samples,
                                  usage=estimate_usage(request, samples),
                                  latency=0.0)


class FlakyChatProvider:
    """Wrapper that fails the first ``fail_times`` calls, for retry tests."""

    def __init__(self, inner, fail_times: int = 1,
                 error: Exception | None = None):
        self.inner = inner
        self.provider_id = f"flaky+{inner.provider_id}"
        self.fail_times = fail_times
        self.error = error or RetryableProviderError("injected transient failure")
        self.attempts = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.attempts += 1
            n = self.attempts
        if n <= self.fail_times:
            raise self.error
        return self.inner.complete(request)


class HttpChatProvider:
    """Chat-completions HTTP backend (OpenAI-style wire format).

    The credential is read from the environment variable named in the
    config; absence is fatal at construction time, before any network call.
    Concurrent requests are bounded by ``max_in_flight``.
    """

    def __init__(self, endpoint: str, credential_env: str,
                 max_in_flight: int = 4, timeout: float = 120.0,
                 env: dict[str, str] | None = None):
        self.provider_id = f"http:{endpoint}"
        self.endpoint = endpoint
        self._api_key = require_env_credential(
            env if env is not None else dict(os.environ), credential_env, "chat backend")
        self._timeout = timeout
        self._semaphore = threading.BoundedSemaphore(max_in_flight)

    @staticmethod
    def _encode_message(message: ChatMessage) -> dict:
        content: list[dict] = []
        for part in message.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            elif isinstance(part, ImagePart):
                b64 = base64.b64encode(part.data).decode("ascii")
                content.append({"type": "image_url",
                                "image_url": {"url": f"data:{part.media_type};base64,{b64}"}})
        return {"role": message.role, "content": content}

    def _post(self, body: dict) -> dict:
        import httpx

        try:
            with self._semaphore:
                resp = httpx.post(
                    self.endpoint, json=body, timeout=self._timeout,
                    headers={"Authorization": f"Bearer {self._api_key}"})
        except httpx.HTTPError as exc:
            raise RetryableProviderError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise FatalProviderError(f"authentication rejected ({resp.status_code})")
        if resp.status_code == 400 and "context" in resp.text.lower():
            raise ContextOverflowError(resp.text[:500])
        if resp.status_code >= 400:
            raise RetryableProviderError(
                f"backend error {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import time as _time

        body = {
            "model": request.model_id,
            "messages": [self._encode_message(m) for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "n": request.sample_count,
        }
        start = _time.monotonic()
        data = self._post(body)
        samples = [c["message"]["content"] for c in data.get("choices", [])]
        if not samples:
            raise RetryableProviderError("backend returned no choices")
        # Backends that ignore n: top up with repeated single-sample calls.
        while len(samples) < request.sample_count:
            extra = self._post({**body, "n": 1})
            samples.append(extra["choices"][0]["message"]["content"])
        usage = data.get("usage", {})
        return CompletionResponse(
            samples=tuple(samples[:request.sample_count]),
            usage=Usage(prompt_tokens=int(usage.get("prompt_tokens", 0)),
                        output_tokens=int(usage.get("completion_tokens", 0))),
            latency=_time.monotonic() - start)


# ---------------------------------------------------------------------------
# Embedding providers
# ---------------------------------------------------------------------------

class HashEmbeddingProvider:
    """Deterministic offline embeddings: each text seeds a PRNG from its
    blake2b digest and draws a unit-normalised gaussian vector. Identical
    text always maps to the identical vector, across processes."""

    def __init__(self, dim: int = 32):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.provider_id = f"hash-{dim}"

    def _embed_one(self, text: str) -> np.ndarray:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "big")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        _check_texts(texts)
        return [self._embed_one(t) for t in texts]


class ScriptedEmbeddingProvider:
    """Test helper mapping exact texts to fixed vectors."""

    def __init__(self, vectors: dict[str, list[float]], dim: int,
                 provider_id: str = "scripted"):
        self.dim = dim
        self.provider_id = provider_id
        self._vectors = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}
        for k, v in self._vectors.items():
            if v.shape != (dim,):
                raise ValueError(f"vector for {k!r} has wrong dim")

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        _check_texts(texts)
        try:
            return [self._vectors[t] for t in texts]
        except KeyError as exc:
            raise FatalProviderError(f"no scripted embedding for {exc.args[0]!r}") from exc


class HttpEmbeddingProvider:
    """Embeddings over an HTTP endpoint (OpenAI-style `input` batch body)."""

    def __init__(self, endpoint: str, model: str, credential_env: str,
                 dim: int, timeout: float = 60.0, env: dict[str, str] | None = None):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.provider_id = f"http:{model}"
        self._api_key = require_env_credential(
            env if env is not None else dict(os.environ), credential_env,
            "embedding backend")
        self._timeout = timeout

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        import httpx

        _check_texts(texts)
        try:
            resp = httpx.post(self.endpoint,
                              json={"model": self.model, "input": texts},
                              timeout=self._timeout,
                              headers={"Authorization": f"Bearer {self._api_key}"})
        except httpx.HTTPError as exc:
            raise RetryableProviderError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise FatalProviderError(f"authentication rejected ({resp.status_code})")
        if resp.status_code >= 400:
            raise RetryableProviderError(f"backend error {resp.status_code}")
        vectors = [np.asarray(row["embedding"], dtype=float)
                   for row in resp.json()["data"]]
        for v in vectors:
            if v.shape != (self.dim,):
                raise FatalProviderError(
                    f"backend returned dim {v.shape[0]}, expected {self.dim}")
        return vectors


def _check_texts(texts: list[str]) -> None:
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise ValueError("texts must be non-empty strings")


# ---------------------------------------------------------------------------
# Image providers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratedImage:
    url: str
    media_type: str
    data: bytes | None = None
    failed: bool = False


class StubImageProvider:
    """Deterministic placeholder generator: emits a small SVG whose bytes and
    URL both derive from a stable hash of the description."""

    provider_id = "stub"

    def __init__(self, asset_dir: str | Path | None = None):
        self.asset_dir = Path(asset_dir) if asset_dir else None

    def generate(self, slot_id: str, description: str) -> GeneratedImage:
        digest = hashlib.sha256(description.encode("utf-8")).hexdigest()[:12]
        color = f"#{digest[:6]}"
        label = description.strip().splitlines()[0][:40]
        svg = (
            '<svg xmlns="http://www.w3.org/2000/svg" width="320" height="200">'
            f'<rect width="320" height="200" fill="{color}"/>'
            f'<text x="10" y="100" font-size="12" fill="#ffffff">{_svg_escape(label)}</text>'
            f"<!-- {digest} --></svg>"
        )
        url = f"assets/{slot_id}-{digest}.svg"
        data = svg.encode("utf-8")
        if self.asset_dir is not None:
            target = self.asset_dir / f"{slot_id}-{digest}.svg"
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        return GeneratedImage(url=url, media_type="image/svg+xml", data=data)


class HttpImageProvider:
    """Image generation over an HTTP endpoint; the backend returns a URL.
    An optional upload hook can relocate the asset after generation."""

    provider_id = "http-image"

    def __init__(self, endpoint: str, credential_env: str, model: str = "",
                 size: str = "1024x1024", timeout: float = 120.0,
                 env: dict[str, str] | None = None, upload_hook=None):
        self.endpoint = endpoint
        self.model = model
        self.size = size
        self._api_key = require_env_credential(
            env if env is not None else dict(os.environ), credential_env,
            "image backend")
        self._timeout = timeout
        self._upload_hook = upload_hook

    def generate(self, slot_id: str, description: str) -> GeneratedImage:
        import httpx

        body = {"prompt": description, "size": self.size, "n": 1}
        if self.model:
            body["model"] = self.model
        try:
            resp = httpx.post(self.endpoint, json=body, timeout=self._timeout,
                              headers={"Authorization": f"Bearer {self._api_key}"})
        except httpx.HTTPError as exc:
            raise RetryableProviderError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise FatalProviderError(f"authentication rejected ({resp.status_code})")
        if resp.status_code >= 400:
            raise RetryableProviderError(f"backend error {resp.status_code}")
        url = resp.json()["data"][0]["url"]
        if self._upload_hook is not None:
            url = self._upload_hook(slot_id, url)
        return GeneratedImage(url=url, media_type="image/png")
