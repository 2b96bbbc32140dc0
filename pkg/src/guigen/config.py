"""Run configuration: provider selection, generation parameters, retrieval
parameters. Loaded from a JSON config file; CLI flags override file values.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .llm import RetryPolicy
from .providers import (
    HashEmbeddingProvider,
    HttpChatProvider,
    HttpEmbeddingProvider,
    HttpImageProvider,
    MockChatProvider,
    StubImageProvider,
)
from .tracing import GenerationSettings, zero_clock

DEFAULT_TEMPERATURE = 0.5
DEFAULT_TOP_N = 20
DEFAULT_FINE_SAMPLES = 3


@dataclass
class ChatBackendConfig:
    kind: str = "mock"  # mock | live
    script: str = ""  # mock: path to the script file
    endpoint: str = ""  # live: chat-completions URL
    credential_env: str = ""  # live: env var holding the API key
    model_id: str = "mock-model"
    max_in_flight: int = 4


@dataclass
class EmbeddingBackendConfig:
    kind: str = "hash"  # hash | live
    dim: int = 32
    endpoint: str = ""
    credential_env: str = ""
    model: str = ""


@dataclass
class ImageBackendConfig:
    kind: str = "stub"  # stub | live
    endpoint: str = ""
    credential_env: str = ""
    model: str = ""
    size: str = "1024x1024"


@dataclass
class RetrievalConfig:
    index: str = ""
    n: int = DEFAULT_TOP_N
    k: int = 5
    samples: int = DEFAULT_FINE_SAMPLES


@dataclass
class RunConfig:
    chat: ChatBackendConfig = field(default_factory=ChatBackendConfig)
    embedding: EmbeddingBackendConfig = field(default_factory=EmbeddingBackendConfig)
    image: ImageBackendConfig = field(default_factory=ImageBackendConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    repo: str = ""
    strategy: str = ""
    k: int = 0  # strategy parameter: loop count (scgg) / example count (ragg)
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = 4096
    retry_max_attempts: int = 3
    retry_backoff: float = 0.5
    out_dir: str = ""
    seed: int = 0
    concurrency: int = 4
    with_content: bool = False
    deterministic: bool | None = None  # default: true iff the chat backend is mock

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.chat.kind not in ("mock", "live"):
            raise ConfigError(f"unknown chat backend kind {self.chat.kind!r}")
        if self.chat.kind == "live" and not (self.chat.endpoint and self.chat.credential_env):
            raise ConfigError("live chat backend needs endpoint and credential_env")
        if self.chat.kind == "mock" and self.chat.endpoint:
            raise ConfigError("select exactly one chat backend: mock script or live endpoint")
        if self.embedding.kind not in ("hash", "live"):
            raise ConfigError(f"unknown embedding backend kind {self.embedding.kind!r}")
        if self.image.kind not in ("stub", "live"):
            raise ConfigError(f"unknown image backend kind {self.image.kind!r}")

    @property
    def is_deterministic(self) -> bool:
        if self.deterministic is not None:
            return self.deterministic
        return self.chat.kind == "mock"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        def sub(section, klass):
            raw = data.get(section, {})
            try:
                return klass(**raw)
            except TypeError as exc:
                raise ConfigError(f"bad {section} config: {exc}") from exc

        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kwargs = {key: value for key, value in data.items()
                  if key not in ("chat", "embedding", "image", "retrieval")}
        try:
            return cls(chat=sub("chat", ChatBackendConfig),
                       embedding=sub("embedding", EmbeddingBackendConfig),
                       image=sub("image", ImageBackendConfig),
                       retrieval=sub("retrieval", RetrievalConfig),
                       **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def snapshot(self) -> dict:
        return asdict(self)

    # ------------------------------------------------------------------
    # Provider construction
    # ------------------------------------------------------------------

    def build_chat_provider(self):
        if self.chat.kind == "mock":
            if not self.chat.script:
                raise ConfigError("mock chat backend needs a script path")
            try:
                return MockChatProvider.from_file(self.chat.script)
            except (OSError, ValueError, KeyError) as exc:
                raise ConfigError(f"cannot load mock script: {exc}") from exc
        return HttpChatProvider(endpoint=self.chat.endpoint,
                                credential_env=self.chat.credential_env,
                                max_in_flight=self.chat.max_in_flight)

    def build_embedding_provider(self):
        if self.embedding.kind == "hash":
            return HashEmbeddingProvider(dim=self.embedding.dim)
        if not (self.embedding.endpoint and self.embedding.credential_env):
            raise ConfigError("live embedding backend needs endpoint and credential_env")
        return HttpEmbeddingProvider(endpoint=self.embedding.endpoint,
                                     model=self.embedding.model,
                                     credential_env=self.embedding.credential_env,
                                     dim=self.embedding.dim)

    def build_image_provider(self, asset_dir: str | Path | None = None):
        if self.image.kind == "stub":
            return StubImageProvider(asset_dir=asset_dir)
        if not (self.image.endpoint and self.image.credential_env):
            raise ConfigError("live image backend needs endpoint and credential_env")
        return HttpImageProvider(endpoint=self.image.endpoint,
                                 credential_env=self.image.credential_env,
                                 model=self.image.model, size=self.image.size)

    def generation_settings(self) -> GenerationSettings:
        return GenerationSettings(
            model_id=self.chat.model_id,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            retry=RetryPolicy(max_attempts=self.retry_max_attempts,
                              backoff_seconds=self.retry_backoff),
            clock=zero_clock if self.is_deterministic else time.time)
