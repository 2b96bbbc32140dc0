"""LLM-based GUI re-ranking: binary relevance filtering, fine-grained 1-10
scoring with multi-sample consistency, deterministic sorting, and an optional
full-list re-ranking over all candidates in one prompt.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .errors import ParseError, ProviderError
from .llm import ChatMessage, ImagePart, LlmProvider
from .repository import GuiScreen, Repository
from .retrieval import EmbeddingProvider, RankedList, RetrievalIndex, retrieve_top_n
from .textparse import extract_json_value, first_nonempty_line
from .tracing import GenerationSettings, TraceRecord, TraceRecorder

logger = logging.getLogger(__name__)

DEFAULT_FINE_SAMPLES = 3

_INT_LINE_RE = re.compile(r"^\s*(-?\d+)\s*$")


@dataclass(frozen=True)
class RelevanceJudgment:
    screen_id: str
    relevant: bool
    rationale: str
    raw_response: str

    def to_dict(self) -> dict:
        return {"screen_id": self.screen_id, "relevant": self.relevant,
                "rationale": self.rationale}


@dataclass(frozen=True)
class FineScore:
    screen_id: str
    samples: tuple[int, ...]
    mean: float
    std: float  # population std: consistency measure over fixed samples
    sample_count: int

    @classmethod
    def from_samples(cls, screen_id: str, samples: list[int]) -> "FineScore":
        arr = np.asarray(samples, dtype=float)
        return cls(screen_id=screen_id, samples=tuple(samples),
                   mean=float(arr.mean()), std=float(arr.std()),
                   sample_count=len(samples))

    def to_dict(self) -> dict:
        return {"screen_id": self.screen_id, "samples": list(self.samples),
                "mean": self.mean, "std": self.std,
                "sample_count": self.sample_count}


@dataclass(frozen=True)
class RerankedItem:
    screen_id: str
    fine_mean: float
    retrieval_score: float
    fine_std: float = 0.0

    def to_dict(self) -> dict:
        return {"screen_id": self.screen_id, "fine_mean": self.fine_mean,
                "retrieval_score": self.retrieval_score, "fine_std": self.fine_std}


@dataclass(frozen=True)
class RerankedList:
    query: str
    items: tuple[RerankedItem, ...]
    provenance: tuple[str, ...]

    def ids(self) -> list[str]:
        return [item.screen_id for item in self.items]

    def to_dict(self) -> dict:
        return {"query": self.query, "provenance": list(self.provenance),
                "items": [item.to_dict() for item in self.items]}


@dataclass
class RerankResult:
    """Full provenance of one pipeline run."""

    reranked: RerankedList
    retrieved: RankedList
    judgments: list[RelevanceJudgment] = field(default_factory=list)
    fine_scores: list[FineScore] = field(default_factory=list)
    records: tuple[TraceRecord, ...] = ()
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "reranked": self.reranked.to_dict(),
            "retrieved": self.retrieved.to_dict(),
            "judgments": [j.to_dict() for j in self.judgments],
            "fine_scores": [f.to_dict() for f in self.fine_scores],
            "warnings": list(self.warnings),
            "llm_calls": [r.to_dict() for r in self.records],
        }


def _screenshot_part(repo: Repository, screen: GuiScreen) -> ImagePart:
    data, media_type = repo.read_screenshot(screen.screen_id)
    return ImagePart(data=data, media_type=media_type)


_VERDICT_RE = re.compile(r"^(NOT_RELEVANT|RELEVANT)\b")


def _parse_verdict(text: str) -> tuple[bool, str] | None:
    line = first_nonempty_line(text)
    match = _VERDICT_RE.match(line)
    if match is None:
        return None
    value = match.group(1) == "RELEVANT"
    remainder = line[match.end():]
    rest_lines = text.strip().splitlines()[1:]
    rationale = " ".join([remainder.strip(" \t-—:.")]
                         + [l.strip() for l in rest_lines]).strip()
    return value, rationale


def binary_filter(provider: LlmProvider, nlr: str, screen: GuiScreen,
                  repo: Repository, settings: GenerationSettings | None = None,
                  recorder: TraceRecorder | None = None) -> RelevanceJudgment:
    """Strict relevant / non-relevant verdict for one screen.

    The prompt shows the NLR and the encoded screenshot and instructs the
    model to vote non-relevant when ambiguous. An unparseable verdict gets
    one re-ask with a format reminder, then ParseError.
    """
    rec = recorder or TraceRecorder(provider, settings)
    image = _screenshot_part(repo, screen)
    prompt = prompts.render("rerank_binary", NLR=nlr, SCREEN_ID=screen.screen_id)
    messages = (ChatMessage.system(prompts.template("system")),
                ChatMessage.user(prompt, images=(image,)))
    response = rec.call(f"binary-filter:{screen.screen_id}", messages)
    parsed = _parse_verdict(response.text)
    if parsed is None:
        reminder = messages[:2] + (
            ChatMessage.assistant(response.text),
            ChatMessage.user(prompts.template("reask_verdict")))
        response = rec.call(f"binary-filter:{screen.screen_id}:reask", reminder)
        parsed = _parse_verdict(response.text)
        if parsed is None:
            raise ParseError(
                f"no RELEVANT/NOT_RELEVANT verdict for screen {screen.screen_id}")
    relevant, rationale = parsed
    return RelevanceJudgment(screen_id=screen.screen_id, relevant=relevant,
                             rationale=rationale, raw_response=response.text)


def _parse_score_sample(sample: str) -> int | None:
    match = _INT_LINE_RE.match(first_nonempty_line(sample))
    if match is None:
        return None
    return int(match.group(1))


def fine_score(provider: LlmProvider, nlr: str, screen: GuiScreen,
               repo: Repository, sample_count: int = DEFAULT_FINE_SAMPLES,
               settings: GenerationSettings | None = None,
               recorder: TraceRecorder | None = None) -> FineScore:
    """1-10 relevance score sampled ``sample_count`` times; mean and
    population std summarise consistency. Out-of-range integers clamp to
    [1, 10] with a warning; unparseable samples get one re-ask."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rec = recorder or TraceRecorder(provider, settings)
    image = _screenshot_part(repo, screen)
    prompt = prompts.render("rerank_fine", NLR=nlr, SCREEN_ID=screen.screen_id)
    messages = (ChatMessage.system(prompts.template("system")),
                ChatMessage.user(prompt, images=(image,)))
    response = rec.call(f"fine-score:{screen.screen_id}", messages,
                        sample_count=sample_count)
    raw = [_parse_score_sample(s) for s in response.samples]
    if any(v is None for v in raw):
        reminder = messages[:2] + (
            ChatMessage.assistant(response.text),
            ChatMessage.user(prompts.template("reask_score")))
        response = rec.call(f"fine-score:{screen.screen_id}:reask", reminder,
                            sample_count=sample_count)
        raw = [_parse_score_sample(s) for s in response.samples]
        if any(v is None for v in raw):
            raise ParseError(f"unparseable fine score for screen {screen.screen_id}")
    values: list[int] = []
    for v in raw:
        assert v is not None
        if not 1 <= v <= 10:
            clamped = min(10, max(1, v))
            logger.warning("fine score %d for %s out of range, clamped to %d",
                           v, screen.screen_id, clamped)
            v = clamped
        values.append(v)
    return FineScore.from_samples(screen.screen_id, values)


def rerank_filtered(survivors: list[tuple[str, FineScore, float]]) -> RerankedList:
    """Deterministic sort: fine mean descending, ties by retrieval score
    descending, then screen_id ascending."""
    items = [RerankedItem(screen_id=sid, fine_mean=score.mean,
                          retrieval_score=retrieval, fine_std=score.std)
             for sid, score, retrieval in survivors]
    items.sort(key=lambda it: (-it.fine_mean, -it.retrieval_score, it.screen_id))
    return RerankedList(query="", items=tuple(items), provenance=("sort",))


def pipeline_rerank(provider: LlmProvider, embedding_provider: EmbeddingProvider,
                    index: RetrievalIndex, repo: Repository, nlr: str,
                    n: int = 20, k: int = 5,
                    sample_count: int = DEFAULT_FINE_SAMPLES,
                    settings: GenerationSettings | None = None) -> RerankResult:
    """Retrieve top-n, binary-filter, fine-score survivors, sort, truncate
    to k. Fewer than k survivors (even zero) is a graceful outcome — the
    caller decides whether to fall back. A screen erroring at the filter
    stage counts as non-relevant with a logged warning."""
    if k < 1 or n < k:
        raise ValueError("need n >= k >= 1")
    rec = TraceRecorder(provider, settings)
    retrieved = retrieve_top_n(index, embedding_provider, nlr, n)
    retrieval_scores = {item.screen_id: item.score for item in retrieved.items}
    judgments: list[RelevanceJudgment] = []
    warnings: list[str] = []
    survivors: list[str] = []
    for item in retrieved.items:
        screen = repo.get(item.screen_id)
        try:
            judgment = binary_filter(provider, nlr, screen, repo, recorder=rec)
        except (ProviderError, ParseError) as exc:
            msg = f"filter stage failed for {item.screen_id}, treating as non-relevant: {exc}"
            logger.warning(msg)
            warnings.append(msg)
            judgment = RelevanceJudgment(screen_id=item.screen_id, relevant=False,
                                         rationale="filter-stage error",
                                         raw_response="")
        judgments.append(judgment)
        if judgment.relevant:
            survivors.append(item.screen_id)
    fine_scores: list[FineScore] = []
    for screen_id in survivors:
        screen = repo.get(screen_id)
        fine_scores.append(fine_score(provider, nlr, screen, repo,
                                      sample_count=sample_count, recorder=rec))
    ranked = rerank_filtered([
        (fs.screen_id, fs, retrieval_scores[fs.screen_id]) for fs in fine_scores])
    truncated = RerankedList(
        query=nlr, items=ranked.items[:k],
        provenance=("retrieval", "binary-filter", "fine-score", "sort",
                    f"truncate:{k}"))
    return RerankResult(reranked=truncated, retrieved=retrieved,
                        judgments=judgments, fine_scores=fine_scores,
                        records=rec.snapshot().records, warnings=warnings)


def _parse_permutation(text: str, count: int) -> list[int] | None:
    try:
        value = extract_json_value(text)
    except ValueError:
        line = first_nonempty_line(text)
        parts = re.split(r"[,\s]+", line.strip("[]() "))
        try:
            value = [int(p) for p in parts if p]
        except ValueError:
            return None
    if not isinstance(value, list):
        return None
    try:
        order = [int(v) for v in value]
    except (TypeError, ValueError):
        return None
    if sorted(order) != list(range(1, count + 1)):
        return None
    return order


def full_list_rerank(provider: LlmProvider, nlr: str, screens: list[GuiScreen],
                     repo: Repository, settings: GenerationSettings | None = None,
                     recorder: TraceRecorder | None = None) -> list[str]:
    """Re-rank all candidates in one prompt containing every screenshot
    labeled by ordinal; the response must be a true permutation of the
    ordinals (one re-ask, then ParseError). Returns screen_ids in the new
    order."""
    if not screens:
        raise ValueError("need at least one candidate")
    rec = recorder or TraceRecorder(provider, settings)
    count = len(screens)
    prompt = prompts.render("rerank_full_list", NLR=nlr, COUNT=str(count))
    parts = [prompt]
    images = []
    for ordinal, screen in enumerate(screens, start=1):
        parts.append(f"GUI {ordinal}:")
        images.append(_screenshot_part(repo, screen))
    from .llm import TextPart

    user_parts = tuple(TextPart(p) for p in parts) + tuple(images)
    messages = (ChatMessage.system(prompts.template("system")),
                ChatMessage("user", user_parts))
    response = rec.call("full-list-rerank", messages)
    order = _parse_permutation(response.text, count)
    if order is None:
        reminder = messages + (
            ChatMessage.assistant(response.text),
            ChatMessage.user(prompts.render("reask_permutation", COUNT=str(count))))
        response = rec.call("full-list-rerank:reask", reminder)
        order = _parse_permutation(response.text, count)
        if order is None:
            raise ParseError("response is not a permutation of the candidate ordinals")
    return [screens[i - 1].screen_id for i in order]
