"""Generation traces: the causal record of every LLM call in a run.

A ``TraceRecorder`` wraps a provider; each ``call`` issues one completion
(with retry) and appends a record carrying the stage label, the request
fingerprint and the full response. Timestamps come from the settings clock,
which defaults to a zero clock so mock-backed runs are byte-identical across
processes; the batch runner injects ``time.time`` for live providers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .llm import (
    ChatMessage,
    CompletionRequest,
    CompletionResponse,
    LlmProvider,
    RetryPolicy,
    Usage,
    complete_with_retry,
)


def zero_clock() -> float:
    return 0.0


@dataclass(frozen=True)
class GenerationSettings:
    model_id: str = "mock-model"
    temperature: float = 0.5
    max_output_tokens: int = 4096
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    clock: Callable[[], float] = zero_clock

    def with_overrides(self, **kwargs) -> "GenerationSettings":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class TraceRecord:
    stage: str
    fingerprint: str
    response: CompletionResponse
    seq: int
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "fingerprint": self.fingerprint,
            "samples": list(self.response.samples),
            "usage": {"prompt_tokens": self.response.usage.prompt_tokens,
                      "output_tokens": self.response.usage.output_tokens},
            "latency": self.response.latency,
            "attempts": self.response.attempts,
            "seq": self.seq,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TraceRecord":
        return cls(
            stage=data["stage"],
            fingerprint=data["fingerprint"],
            response=CompletionResponse(
                samples=tuple(data["samples"]),
                usage=Usage(**data["usage"]),
                latency=data["latency"],
                attempts=data.get("attempts", 1)),
            seq=data["seq"],
            timestamp=data["timestamp"])


@dataclass(frozen=True)
class GenerationTrace:
    records: tuple[TraceRecord, ...] = ()

    def totals(self) -> Usage:
        total = Usage()
        for rec in self.records:
            total = total + rec.response.usage
        return total

    def stages(self) -> tuple[str, ...]:
        return tuple(rec.stage for rec in self.records)

    def to_dict(self) -> dict:
        totals = self.totals()
        return {"records": [r.to_dict() for r in self.records],
                "totals": {"prompt_tokens": totals.prompt_tokens,
                           "output_tokens": totals.output_tokens}}

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationTrace":
        return cls(records=tuple(TraceRecord.from_dict(r) for r in data["records"]))


class TraceRecorder:
    """Issues completions against one provider and accumulates trace records.

    ``seed_records`` lets a new recorder continue an existing trace (the
    self-critique loop threads history through prototypes this way).
    """

    def __init__(self, provider: LlmProvider, settings: GenerationSettings | None = None,
                 seed_records: tuple[TraceRecord, ...] = ()):
        self.provider = provider
        self.settings = settings or GenerationSettings()
        # renumber so seq always equals list position, even when merging
        # record streams from separate recorders
        self._records: list[TraceRecord] = [
            rec if rec.seq == i else replace(rec, seq=i)
            for i, rec in enumerate(seed_records)]

    def call(self, stage: str, messages: tuple[ChatMessage, ...],
             sample_count: int = 1) -> CompletionResponse:
        request = CompletionRequest(
            model_id=self.settings.model_id,
            messages=messages,
            temperature=self.settings.temperature,
            max_output_tokens=self.settings.max_output_tokens,
            sample_count=sample_count)
        response = complete_with_retry(self.provider, request, self.settings.retry)
        self._records.append(TraceRecord(
            stage=stage,
            fingerprint=request.fingerprint(),
            response=response,
            seq=len(self._records),
            timestamp=self.settings.clock()))
        return response

    def snapshot(self) -> GenerationTrace:
        return GenerationTrace(records=tuple(self._records))

    @property
    def last_record(self) -> TraceRecord:
        return self._records[-1]
