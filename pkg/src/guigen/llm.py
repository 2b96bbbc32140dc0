"""Chat-completion data model, provider protocol and retry wrapper.

Every LLM interaction in the package goes through ``CompletionRequest`` /
``CompletionResponse`` and a provider object exposing ``complete()``.
Requests are fingerprinted by a stable hash of their text parts; the
fingerprint keys the scripted mock provider and is what generation traces
record.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from .errors import FatalProviderError, RetryableProviderError

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    data: bytes
    media_type: str


Part = TextPart | ImagePart


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("message parts must be non-empty")
        if self.role != "user" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("image parts are only allowed in user messages")

    @classmethod
    def system(cls, text: str) -> "ChatMessage":
        return cls("system", (TextPart(text),))

    @classmethod
    def user(cls, text: str, images: tuple[ImagePart, ...] = ()) -> "ChatMessage":
        return cls("user", (TextPart(text), *images))

    @classmethod
    def assistant(cls, text: str) -> "ChatMessage":
        return cls("assistant", (TextPart(text),))

    def text_content(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))

    def image_parts(self) -> tuple[ImagePart, ...]:
        return tuple(p for p in self.parts if isinstance(p, ImagePart))


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.5
    max_output_tokens: int = 4096
    sample_count: int = 1

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")

    def text_parts(self) -> list[str]:
        return [p.text for m in self.messages for p in m.parts if isinstance(p, TextPart)]

    def fingerprint(self) -> str:
        """Stable request identity: sha256 of all text parts joined by newlines.

        Image parts are deliberately excluded so scripts can be authored
        without binary content; documented in the README.
        """
        joined = "\n".join(self.text_parts())
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.prompt_tokens + other.prompt_tokens,
                     self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class CompletionResponse:
    samples: tuple[str, ...]
    usage: Usage = field(default_factory=Usage)
    latency: float = 0.0
    attempts: int = 1

    def __post_init__(self):
        if not self.samples:
            raise ValueError("samples must be non-empty")

    @property
    def text(self) -> str:
        return self.samples[0]


@runtime_checkable
class LlmProvider(Protocol):
    provider_id: str

    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_seconds: float = 0.5

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def complete_with_retry(provider: LlmProvider, request: CompletionRequest,
                        policy: RetryPolicy | None = None) -> CompletionResponse:
    """Call ``provider.complete`` retrying Retryable failures with exponential
    backoff. Fatal and context-overflow errors surface immediately; after
    ``max_attempts`` retryable failures the last error is raised.
    """
    policy = policy or RetryPolicy()
    last: RetryableProviderError | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            response = provider.complete(request)
        except RetryableProviderError as exc:
            last = exc
            if attempt < policy.max_attempts and policy.backoff_seconds > 0:
                time.sleep(policy.backoff_seconds * (2 ** (attempt - 1)))
            continue
        if attempt > 1:
            response = CompletionResponse(samples=response.samples, usage=response.usage,
                                          latency=response.latency, attempts=attempt)
        return response
    assert last is not None
    raise last


def estimate_usage(request: CompletionRequest, samples: tuple[str, ...]) -> Usage:
    """Deterministic whitespace-token estimate used by offline providers."""
    prompt = sum(len(t.split()) for t in request.text_parts())
    output = sum(len(s.split()) for s in samples)
    return Usage(prompt_tokens=prompt, output_tokens=output)


def require_env_credential(env: dict[str, str], var_name: str, backend: str) -> str:
    value = env.get(var_name, "")
    if not value:
        raise FatalProviderError(
            f"{backend}: credential environment variable {var_name!r} is not set")
    return value
