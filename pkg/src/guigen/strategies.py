"""The five prototype-generation strategies over a shared prototype/trace
model: plain instruction, chain-of-thought, four-stage prompt decomposition
(sequential and single-prompt), retrieval-augmented generation (direct
screenshot encoding and explicit feature/design extraction), and the
self-critique refinement loop.

Every strategy is a pure function of (nlr, configuration, provider script)
under the scripted mock provider, and its trace records every LLM call of
the run exactly once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from . import prompts
from .errors import ExtractionError, FallbackSignal, GenerationError, GuigenError
from .htmlio import HtmlDocument, extract_html
from .llm import ChatMessage, ImagePart, LlmProvider, TextPart
from .repository import GuiScreen, Repository
from .textparse import extract_json_value
from .tracing import GenerationSettings, GenerationTrace, TraceRecord, TraceRecorder

logger = logging.getLogger(__name__)

STRATEGY_NAMES = ("zs", "zs-cot", "pdgg", "pdgg-combined",
                  "ragg-direct", "ragg-extract", "scgg")


@dataclass(frozen=True)
class Nlr:
    """A natural-language requirement: the short high-level description."""

    id: str
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("NLR text must be non-empty")


@dataclass(frozen=True)
class Prototype:
    html: HtmlDocument
    strategy: str
    iteration: int
    trace: GenerationTrace


@dataclass(frozen=True)
class Feature:
    name: str
    description: str
    frequency: int = 1


@dataclass(frozen=True)
class FeatureCollection:
    """Unique feature names, ordered by frequency descending then name."""

    features: tuple[Feature, ...] = ()

    @classmethod
    def build(cls, features: list[Feature]) -> "FeatureCollection":
        merged: dict[str, Feature] = {}
        for feat in features:
            name = feat.name.strip()
            if name in merged:
                prior = merged[name]
                merged[name] = Feature(name=name, description=prior.description,
                                       frequency=prior.frequency + feat.frequency)
            else:
                merged[name] = Feature(name=name, description=feat.description,
                                       frequency=feat.frequency)
        ordered = sorted(merged.values(), key=lambda f: (-f.frequency, f.name))
        return cls(features=tuple(ordered))

    def total_frequency(self) -> int:
        return sum(f.frequency for f in self.features)

    def to_text(self) -> str:
        return "\n".join(f"- {f.name} ({f.frequency}x): {f.description}"
                         for f in self.features)


@dataclass(frozen=True)
class DesignSpec:
    layout_text: str
    design_notes: str = ""

    def __post_init__(self):
        if not self.layout_text.strip():
            raise ValueError("layout_text must be non-empty")


@dataclass(frozen=True)
class Critique:
    text: str
    loop_index: int
    records: tuple[TraceRecord, ...] = ()  # the LLM calls that produced it

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("critique text must be non-empty")
        if self.loop_index < 1:
            raise ValueError("loop_index must be positive")


@dataclass
class ScggResult:
    """All prototypes of a self-critique run; ``error`` marks a partial run."""

    prototypes: list[Prototype]
    error: str | None = None
    failed_stage: str | None = None

    @property
    def final(self) -> Prototype:
        return self.prototypes[-1]


# ---------------------------------------------------------------------------
# Shared call helpers
# ---------------------------------------------------------------------------

def _system() -> ChatMessage:
    return ChatMessage.system(prompts.template("system"))


def _html_call(rec: TraceRecorder, stage: str,
               messages: tuple[ChatMessage, ...]) -> HtmlDocument:
    """One completion whose answer must extract to an HTML document; one
    re-ask with a format reminder before giving up."""
    response = rec.call(stage, messages)
    try:
        return extract_html(response.text)[0]
    except ExtractionError:
        reminder = messages + (ChatMessage.assistant(response.text),
                               ChatMessage.user(prompts.template("reask_html")))
        response = rec.call(f"{stage}:reask", reminder)
        try:
            return extract_html(response.text)[0]
        except ExtractionError as exc:
            raise GenerationError(f"stage {stage!r}: {exc}") from exc


def _text_call(rec: TraceRecorder, stage: str,
               messages: tuple[ChatMessage, ...]) -> str:
    response = rec.call(stage, messages)
    if response.text.strip():
        return response.text
    reminder = messages + (ChatMessage.assistant(response.text),
                           ChatMessage.user(prompts.template("reask_nonempty")))
    response = rec.call(f"{stage}:reask", reminder)
    if response.text.strip():
        return response.text
    raise GenerationError(f"stage {stage!r}: empty response")


def _screenshot(repo: Repository, screen: GuiScreen) -> ImagePart:
    data, media_type = repo.read_screenshot(screen.screen_id)
    return ImagePart(data=data, media_type=media_type)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def zs_instruct(provider: LlmProvider, nlr: Nlr,
                settings: GenerationSettings | None = None,
                recorder: TraceRecorder | None = None) -> Prototype:
    rec = recorder or TraceRecorder(provider, settings)
    messages = (_system(), ChatMessage.user(prompts.render("zs_instruct", NLR=nlr.text)))
    html = _html_call(rec, "zs-instruct", messages)
    return Prototype(html=html, strategy="zs", iteration=0, trace=rec.snapshot())


def zs_cot(provider: LlmProvider, nlr: Nlr,
           settings: GenerationSettings | None = None) -> Prototype:
    rec = TraceRecorder(provider, settings)
    messages = (_system(), ChatMessage.user(prompts.render("zs_cot", NLR=nlr.text)))
    html = _html_call(rec, "zs-cot", messages)
    return Prototype(html=html, strategy="zs-cot", iteration=0, trace=rec.snapshot())


# ---------------------------------------------------------------------------
# Prompt decomposition
# ---------------------------------------------------------------------------

def pdgg_sequential(provider: LlmProvider, nlr: Nlr,
                    settings: GenerationSettings | None = None) -> Prototype:
    """Four completions in order (features, implementation ideas,
    layout/design, HTML); every stage prompt carries the NLR and all prior
    stage outputs verbatim."""
    rec = TraceRecorder(provider, settings)
    features = _text_call(rec, "pdgg-features",
                          (_system(), ChatMessage.user(
                              prompts.render("pdgg_features", NLR=nlr.text))))
    ideas = _text_call(rec, "pdgg-ideas",
                       (_system(), ChatMessage.user(
                           prompts.render("pdgg_ideas", NLR=nlr.text,
                                          FEATURES=features))))
    design_text = _text_call(rec, "pdgg-design",
                             (_system(), ChatMessage.user(
                                 prompts.render("pdgg_design", NLR=nlr.text,
                                                FEATURES=features, IDEAS=ideas))))
    DesignSpec(layout_text=design_text)  # validates the stage produced a design
    html = _html_call(rec, "pdgg-html",
                      (_system(), ChatMessage.user(
                          prompts.render("pdgg_html", NLR=nlr.text,
                                         FEATURES=features, IDEAS=ideas,
                                         DESIGN=design_text))))
    return Prototype(html=html, strategy="pdgg", iteration=0, trace=rec.snapshot())


def pdgg_combined(provider: LlmProvider, nlr: Nlr,
                  settings: GenerationSettings | None = None) -> Prototype:
    """The same four reasoning steps folded into a single prompt."""
    rec = TraceRecorder(provider, settings)
    messages = (_system(), ChatMessage.user(prompts.render("pdgg_combined", NLR=nlr.text)))
    html = _html_call(rec, "pdgg-combined", messages)
    return Prototype(html=html, strategy="pdgg-combined", iteration=0,
                     trace=rec.snapshot())


# ---------------------------------------------------------------------------
# Retrieval-augmented generation
# ---------------------------------------------------------------------------

def ragg_direct(provider: LlmProvider, nlr: Nlr, screens: list[GuiScreen],
                k: int, repo: Repository,
                settings: GenerationSettings | None = None) -> Prototype:
    """One completion with every retrieved screenshot encoded in the prompt
    as inspiration. Zero screens raises FallbackSignal: the caller falls
    back to plain instruction prompting."""
    if not screens:
        raise FallbackSignal("no relevant screens retrieved")
    if len(screens) > k:
        raise ValueError(f"got {len(screens)} screens for k={k}")
    rec = TraceRecorder(provider, settings)
    prompt = prompts.render("ragg_direct", NLR=nlr.text)
    images = tuple(_screenshot(repo, s) for s in screens)
    messages = (_system(), ChatMessage("user", (TextPart(prompt), *images)))
    html = _html_call(rec, "ragg-direct", messages)
    return Prototype(html=html, strategy="ragg-direct", iteration=0,
                     trace=rec.snapshot())


def _parse_feature_array(text: str) -> list[Feature] | None:
    try:
        value = extract_json_value(text)
    except ValueError:
        return None
    if not isinstance(value, list):
        return None
    features: list[Feature] = []
    for item in value:
        if not isinstance(item, dict) or "name" not in item:
            return None
        name = str(item["name"]).strip()
        if not name:
            return None
        features.append(Feature(name=name,
                                description=str(item.get("description", "")).strip()))
    return features


def extract_gui_features(provider: LlmProvider, screen: GuiScreen,
                         repo: Repository,
                         settings: GenerationSettings | None = None,
                         recorder: TraceRecorder | None = None) -> FeatureCollection:
    """Feature collection from one screenshot; every parsed feature starts
    at frequency 1 and duplicate names within one response merge. Unusable
    output after the re-ask degrades to an empty collection with a warning
    so the surrounding pipeline continues."""
    rec = recorder or TraceRecorder(provider, settings)
    image = _screenshot(repo, screen)
    messages = (_system(), ChatMessage.user(
        prompts.render("feature_extract", SCREEN_ID=screen.screen_id),
        images=(image,)))
    stage = f"feature-extract:{screen.screen_id}"
    response = rec.call(stage, messages)
    parsed = _parse_feature_array(response.text)
    if parsed is None:
        reminder = messages + (ChatMessage.assistant(response.text),
                               ChatMessage.user(prompts.template("reask_json")))
        response = rec.call(f"{stage}:reask", reminder)
        parsed = _parse_feature_array(response.text)
        if parsed is None:
            logger.warning("unparseable feature collection for screen %s",
                           screen.screen_id)
            return FeatureCollection()
    if not parsed:
        logger.warning("model listed no features for screen %s", screen.screen_id)
    return FeatureCollection.build(parsed)


def _exact_name_aggregate(collections: list[FeatureCollection]) -> FeatureCollection:
    return FeatureCollection.build(
        [feat for coll in collections for feat in coll.features])


def _parse_aggregated(text: str, expected_total: int) -> FeatureCollection | None:
    try:
        value = extract_json_value(text)
    except ValueError:
        return None
    if not isinstance(value, list) or not value:
        return None
    features: list[Feature] = []
    for item in value:
        if not isinstance(item, dict) or "name" not in item:
            return None
        try:
            freq = int(item.get("frequency", 1))
        except (TypeError, ValueError):
            return None
        if freq < 1:
            return None
        features.append(Feature(name=str(item["name"]).strip(),
                                description=str(item.get("description", "")).strip(),
                                frequency=freq))
    collection = FeatureCollection.build(features)
    if collection.total_frequency() != expected_total:
        return None
    return collection


def aggregate_features(provider: LlmProvider, collections: list[FeatureCollection],
                       settings: GenerationSettings | None = None,
                       recorder: TraceRecorder | None = None) -> FeatureCollection:
    """One completion merging semantically similar features; the result must
    conserve total frequency mass. Unusable output after the re-ask falls
    back to deterministic exact-name aggregation with a warning."""
    if not collections:
        raise ValueError("need at least one collection")
    rec = recorder or TraceRecorder(provider, settings)
    total = sum(c.total_frequency() for c in collections)
    listing = "\n\n".join(c.to_text() or "(empty collection)" for c in collections)
    messages = (_system(), ChatMessage.user(
        prompts.render("feature_aggregate", COLLECTIONS=listing, TOTAL=str(total))))
    response = rec.call("feature-aggregate", messages)
    merged = _parse_aggregated(response.text, total)
    if merged is None:
        reminder = messages + (ChatMessage.assistant(response.text),
                               ChatMessage.user(prompts.template("reask_json")))
        response = rec.call("feature-aggregate:reask", reminder)
        merged = _parse_aggregated(response.text, total)
        if merged is None:
            logger.warning("aggregation output unusable, falling back to "
                           "exact-name aggregation")
            return _exact_name_aggregate(collections)
    return merged


def extract_gui_design(provider: LlmProvider, screen: GuiScreen, repo: Repository,
                       settings: GenerationSettings | None = None,
                       recorder: TraceRecorder | None = None) -> str:
    rec = recorder or TraceRecorder(provider, settings)
    image = _screenshot(repo, screen)
    messages = (_system(), ChatMessage.user(
        prompts.render("design_extract", SCREEN_ID=screen.screen_id),
        images=(image,)))
    return _text_call(rec, f"design-extract:{screen.screen_id}", messages)


def aggregate_designs(provider: LlmProvider, designs: list[str],
                      settings: GenerationSettings | None = None,
                      recorder: TraceRecorder | None = None) -> DesignSpec:
    if not designs:
        raise ValueError("need at least one design description")
    rec = recorder or TraceRecorder(provider, settings)
    messages = (_system(), ChatMessage.user(
        prompts.render("design_aggregate", DESIGNS="\n\n".join(designs))))
    text = _text_call(rec, "design-aggregate", messages)
    return DesignSpec(layout_text=text)


def ragg_extract(provider: LlmProvider, nlr: Nlr, screens: list[GuiScreen],
                 k: int, repo: Repository,
                 settings: GenerationSettings | None = None) -> Prototype:
    """Explicit pipeline: per-screen feature extraction, feature
    aggregation, per-screen design extraction, design aggregation, then one
    generation call over both aggregates (2k+3 completions for k screens)."""
    if not screens:
        raise FallbackSignal("no relevant screens retrieved")
    if len(screens) > k:
        raise ValueError(f"got {len(screens)} screens for k={k}")
    rec = TraceRecorder(provider, settings)
    collections = [extract_gui_features(provider, s, repo, recorder=rec)
                   for s in screens]
    features = aggregate_features(provider, collections, recorder=rec)
    designs = [extract_gui_design(provider, s, repo, recorder=rec) for s in screens]
    design = aggregate_designs(provider, designs, recorder=rec)
    feature_text = features.to_text() or "(no features extracted)"
    messages = (_system(), ChatMessage.user(
        prompts.render("ragg_final", NLR=nlr.text, FEATURES=feature_text,
                       DESIGN=design.layout_text)))
    html = _html_call(rec, "ragg-generate", messages)
    return Prototype(html=html, strategy="ragg-extract", iteration=0,
                     trace=rec.snapshot())


# ---------------------------------------------------------------------------
# Self-critique looping
# ---------------------------------------------------------------------------

def scgg_critique(provider: LlmProvider, nlr: Nlr, prototype: Prototype,
                  loop_index: int = 1,
                  settings: GenerationSettings | None = None) -> Critique:
    """Feedback on the current prototype: neglected features, implementation
    improvements, design/layout improvements. The prompt carries the full
    current HTML and the NLR; the answer must be non-empty text."""
    rec = TraceRecorder(provider, settings)
    messages = (_system(), ChatMessage.user(
        prompts.render("scgg_critique", NLR=nlr.text, HTML=prototype.html.text)))
    text = _text_call(rec, f"critique:{loop_index}", messages)
    if "```" in text:
        logger.warning("critique at loop %d contains a code fence; accepted",
                       loop_index)
    return Critique(text=text, loop_index=loop_index,
                    records=rec.snapshot().records)


def scgg_refine(provider: LlmProvider, nlr: Nlr, prototype: Prototype,
                critique: Critique,
                settings: GenerationSettings | None = None) -> Prototype:
    """Revised prototype from (current HTML, NLR, critique), all three in the
    prompt verbatim; the returned trace carries the full history forward."""
    rec = TraceRecorder(provider, settings,
                        seed_records=prototype.trace.records + critique.records)
    messages = (_system(), ChatMessage.user(
        prompts.render("scgg_refine", NLR=nlr.text, HTML=prototype.html.text,
                       CRITIQUE=critique.text)))
    html = _html_call(rec, f"refine:{critique.loop_index}", messages)
    return Prototype(html=html, strategy="scgg",
                     iteration=prototype.iteration + 1, trace=rec.snapshot())


def scgg_loop(provider: LlmProvider, nlr: Nlr, k: int,
              settings: GenerationSettings | None = None) -> ScggResult:
    """P_0 from plain instruction prompting, then k critique/refine rounds
    (1 + 2k completions). A failure at round i preserves P_0..P_i and sets
    the error marker instead of raising."""
    if k < 1:
        raise ValueError("k must be >= 1")
    base = zs_instruct(provider, nlr, settings)
    prototypes = [replace(base, strategy="scgg")]
    for i in range(k):
        stage = f"loop:{i + 1}"
        try:
            critique = scgg_critique(provider, nlr, prototypes[-1],
                                     loop_index=i + 1, settings=settings)
            refined = scgg_refine(provider, nlr, prototypes[-1], critique,
                                  settings=settings)
        except GuigenError as exc:
            logger.warning("self-critique loop failed at %s: %s", stage, exc)
            return ScggResult(prototypes=prototypes, error=str(exc),
                              failed_stage=stage)
        prototypes.append(refined)
    return ScggResult(prototypes=prototypes)
