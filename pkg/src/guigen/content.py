"""Content enrichment pipeline: populate a prototype with realistic data,
describe its images, generate assets, and wire the URLs back in.

HTML rewriting is deliberate string surgery on regex spans so that
everything outside the touched img attributes is preserved byte-for-byte.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace as dc_replace

from . import prompts
from .errors import ProviderError
from .htmlio import HtmlDocument
from .llm import ChatMessage, LlmProvider
from .strategies import Prototype, _html_call
from .textparse import extract_json_value
from .tracing import GenerationSettings, TraceRecorder

logger = logging.getLogger(__name__)

_IMG_TAG_RE = re.compile(r"<img\b[^>]*>", re.IGNORECASE)
_TAG_STRIP_RE = re.compile(r"<[^>]*>")


def _attr_span(tag: str, name: str) -> tuple[int, int, str] | None:
    """(value_start, value_end, value) of an attribute inside one tag."""
    pattern = re.compile(
        r"\b" + re.escape(name) + r"""\s*=\s*("([^"]*)"|'([^']*)'|([^\s>]+))""",
        re.IGNORECASE)
    m = pattern.search(tag)
    if m is None:
        return None
    if m.group(2) is not None:
        value = m.group(2)
    elif m.group(3) is not None:
        value = m.group(3)
    else:
        value = m.group(4)
    start = m.start(1) + (1 if m.group(1)[0] in "\"'" else 0)
    return start, start + len(value), value


def img_ids(html: str) -> list[str]:
    """Ordered ids of all img tags that carry one."""
    ids = []
    for m in _IMG_TAG_RE.finditer(html):
        span = _attr_span(m.group(0), "id")
        if span is not None and span[2]:
            ids.append(span[2])
    return ids


@dataclass(frozen=True)
class ImageSlot:
    slot_id: str
    description: str
    fallback: bool = False

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError("slot description must be non-empty")


@dataclass(frozen=True)
class AssetRef:
    slot_id: str
    url: str
    media_type: str
    failed: bool = False

    def __post_init__(self):
        if not self.url:
            raise ValueError("asset url must be non-empty")


@dataclass
class ContentResult:
    prototype: Prototype
    slots: list[ImageSlot] = field(default_factory=list)
    assets: list[AssetRef] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _repair_img_ids(html: str) -> tuple[str, list[str]]:
    """Assign ids img-1..img-n to img tags lacking one (or duplicating an
    existing one); numbering skips ids already taken."""
    warnings: list[str] = []
    taken = set()
    edits: list[tuple[int, str]] = []  # (insert position, text)
    counter = 1
    for m in _IMG_TAG_RE.finditer(html):
        tag = m.group(0)
        span = _attr_span(tag, "id")
        if span is not None and span[2] and span[2] not in taken:
            taken.add(span[2])
            continue
        while f"img-{counter}" in taken:
            counter += 1
        new_id = f"img-{counter}"
        taken.add(new_id)
        insert_at = m.start() + len("<img")
        edits.append((insert_at, f' id="{new_id}"'))
        warnings.append(f"img tag without usable id, assigned {new_id}")
    for pos, text in reversed(edits):
        html = html[:pos] + text + html[pos:]
    for w in warnings:
        logger.warning(w)
    return html, warnings


def enrich_content(provider: LlmProvider, prototype: Prototype,
                   settings: GenerationSettings | None = None,
                   recorder: TraceRecorder | None = None) -> Prototype:
    """Ask the model to fill the prototype with realistic data and id every
    img tag; a deterministic repair pass guarantees the id postcondition."""
    rec = recorder or TraceRecorder(provider, settings,
                                    seed_records=prototype.trace.records)
    messages = (ChatMessage.system(prompts.template("system")),
                ChatMessage.user(prompts.render("content_enrich",
                                                HTML=prototype.html.text)))
    html_doc = _html_call(rec, "content-enrich", messages)
    repaired, _ = _repair_img_ids(html_doc.text)
    return dc_replace(prototype, html=HtmlDocument.from_text(repaired),
                      trace=rec.snapshot())


def _parse_slot_array(text: str, valid_ids: set[str]) -> dict[str, str] | None:
    try:
        value = extract_json_value(text)
    except ValueError:
        return None
    if not isinstance(value, list):
        return None
    described: dict[str, str] = {}
    for item in value:
        if not isinstance(item, dict) or "id" not in item:
            return None
        slot_id = str(item["id"]).strip()
        description = str(item.get("description", "")).strip()
        if slot_id not in valid_ids:
            logger.warning("model described unknown img id %r, ignored", slot_id)
            continue
        if description:
            described[slot_id] = description
    return described


def _fallback_description(html: str, slot_id: str) -> str:
    for m in _IMG_TAG_RE.finditer(html):
        span = _attr_span(m.group(0), "id")
        if span is None or span[2] != slot_id:
            continue
        alt = _attr_span(m.group(0), "alt")
        if alt is not None and alt[2].strip():
            return alt[2].strip()
        nearby = _TAG_STRIP_RE.sub(" ", html[max(0, m.start() - 240):m.start()])
        words = nearby.split()[-12:]
        if words:
            return "illustration related to: " + " ".join(words)
    return f"illustration for {slot_id}"


def extract_image_specs(provider: LlmProvider, html: HtmlDocument,
                        settings: GenerationSettings | None = None,
                        recorder: TraceRecorder | None = None) -> list[ImageSlot]:
    """One slot per img id in the document. The model supplies descriptions
    (it sees the whole document for context); ids it misses get a
    deterministic fallback description and are flagged."""
    ids = img_ids(html.text)
    if not ids:
        return []
    rec = recorder or TraceRecorder(provider, settings)
    messages = (ChatMessage.system(prompts.template("system")),
                ChatMessage.user(prompts.render("content_image_specs",
                                                HTML=html.text)))
    response = rec.call("content-image-specs", messages)
    described = _parse_slot_array(response.text, set(ids))
    if described is None:
        reminder = messages + (ChatMessage.assistant(response.text),
                               ChatMessage.user(prompts.template("reask_json")))
        response = rec.call("content-image-specs:reask", reminder)
        described = _parse_slot_array(response.text, set(ids))
        if described is None:
            logger.warning("image spec extraction unusable, using fallback "
                           "descriptions for all %d slots", len(ids))
            described = {}
    slots: list[ImageSlot] = []
    for slot_id in ids:
        if slot_id in described:
            slots.append(ImageSlot(slot_id=slot_id, description=described[slot_id]))
        else:
            logger.warning("no description for img id %r, deriving one from "
                           "nearby text", slot_id)
            slots.append(ImageSlot(slot_id=slot_id,
                                   description=_fallback_description(html.text, slot_id),
                                   fallback=True))
    return slots


def generate_images(image_provider, slots: list[ImageSlot]) -> list[AssetRef]:
    """One asset per slot; a per-slot provider failure yields a flagged
    placeholder so the pipeline continues."""
    assets: list[AssetRef] = []
    for slot in slots:
        if not slot.description.strip():
            raise ValueError(f"slot {slot.slot_id} has an empty description")
        try:
            image = image_provider.generate(slot.slot_id, slot.description)
            assets.append(AssetRef(slot_id=slot.slot_id, url=image.url,
                                   media_type=image.media_type,
                                   failed=image.failed))
        except ProviderError as exc:
            logger.warning("image generation failed for slot %s: %s",
                           slot.slot_id, exc)
            assets.append(AssetRef(slot_id=slot.slot_id,
                                   url=f"assets/{slot.slot_id}-unavailable.svg",
                                   media_type="image/svg+xml", failed=True))
    return assets


def substitute_urls(html: str, assets: list[AssetRef]) -> str:
    """Set the src of each img whose id matches an asset; every byte outside
    those src attribute values is preserved. Unmatched ids on either side
    produce warnings only."""
    by_id = {asset.slot_id: asset for asset in assets}
    matched: set[str] = set()
    edits: list[tuple[int, int, str]] = []
    for m in _IMG_TAG_RE.finditer(html):
        tag = m.group(0)
        id_span = _attr_span(tag, "id")
        if id_span is None or id_span[2] not in by_id:
            continue
        asset = by_id[id_span[2]]
        matched.add(asset.slot_id)
        src_span = _attr_span(tag, "src")
        if src_span is not None:
            edits.append((m.start() + src_span[0], m.start() + src_span[1],
                          asset.url))
        else:
            insert_at = m.start() + len("<img")
            edits.append((insert_at, insert_at, f' src="{asset.url}"'))
    for start, end, text in sorted(edits, reverse=True):
        html = html[:start] + text + html[end:]
    for asset in assets:
        if asset.slot_id not in matched:
            logger.warning("asset for id %r matches no img tag", asset.slot_id)
    present = set(img_ids(html))
    for slot_id in present - set(by_id):
        logger.warning("img id %r has no generated asset, src left untouched",
                       slot_id)
    return html


def content_pipeline(provider: LlmProvider, image_provider,
                     prototype: Prototype,
                     settings: GenerationSettings | None = None) -> ContentResult:
    """enrich -> describe -> generate -> substitute. Without images the run
    is enrichment-only (one LLM call); with images it is exactly two."""
    rec = TraceRecorder(provider, settings, seed_records=prototype.trace.records)
    enriched = enrich_content(provider, prototype, settings, recorder=rec)
    slots = extract_image_specs(provider, enriched.html, settings, recorder=rec)
    if not slots:
        return ContentResult(prototype=dc_replace(enriched, trace=rec.snapshot()))
    assets = generate_images(image_provider, slots)
    final_html = substitute_urls(enriched.html.text, assets)
    final = dc_replace(enriched, html=HtmlDocument.from_text(final_html),
                       trace=rec.snapshot())
    return ContentResult(prototype=final, slots=slots, assets=assets)
