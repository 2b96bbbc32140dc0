"""HTML extraction from raw LLM text, forgiving validation, and prototype
persistence.

Chat models routinely wrap generated documents in markdown fences or prose.
``extract_html`` digs the document out with a fixed precedence (fenced block,
then doctype/html tag span, then passthrough) and reduces the candidate to a
fixpoint so extracting twice is a no-op.
"""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import ExtractionError, StorageError
from .textparse import find_fenced_blocks

if TYPE_CHECKING:  # pragma: no cover
    from .tracing import GenerationTrace

logger = logging.getLogger(__name__)

_OPENER_RE = re.compile(r"<!doctype\b|<html\b", re.IGNORECASE)
_FENCE = "```"


@dataclass(frozen=True)
class HtmlDocument:
    text: str
    byte_length: int

    @classmethod
    def from_text(cls, text: str) -> "HtmlDocument":
        if not text or not text.strip():
            raise ValueError("HTML document must be non-empty")
        return cls(text=text, byte_length=len(text.encode("utf-8")))


@dataclass(frozen=True)
class ExtractionReport:
    method: str  # fenced-block | tag-span | passthrough
    stripped_prefix_len: int
    stripped_suffix_len: int


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[str, ...]


def _tag_span(text: str) -> tuple[str, int, int] | None:
    m = _OPENER_RE.search(text)
    if m is None:
        return None
    close = text.lower().rfind("</html>")
    if close < 0 or close < m.start():
        return None
    end = close + len("</html>")
    return text[m.start():end], m.start(), len(text) - end


def _candidate(raw: str) -> tuple[str, str, int, int] | None:
    """One extraction step: (text, method, prefix_len, suffix_len) or None."""
    # 1. fenced block labeled html, or unlabeled with a document opener
    for block in find_fenced_blocks(raw):
        content = block.content.strip()
        if not content or _FENCE in content:
            continue
        if block.label in ("html", "htm"):
            qualifies = True
        elif block.label == "":
            qualifies = bool(_OPENER_RE.search(content))
        else:
            qualifies = False
        if not qualifies:
            continue
        # the content must itself be reducible, else it is not a document
        if not (content.startswith("<") or _tag_span(content) is not None):
            continue
        return content, "fenced-block", block.start, len(raw) - block.end
    # 2. doctype/html opener through the last closing html tag
    span = _tag_span(raw)
    if span is not None:
        text, prefix, suffix = span
        if _FENCE not in text:
            return text, "tag-span", prefix, suffix
    # 3. passthrough when the text itself starts with a tag
    stripped = raw.strip()
    if stripped.startswith("<") and _FENCE not in stripped:
        prefix = len(raw) - len(raw.lstrip())
        suffix = len(raw) - len(raw.rstrip())
        return stripped, "passthrough", prefix, suffix
    return None


def extract_html(raw: str) -> tuple[HtmlDocument, ExtractionReport]:
    """Extract the HTML document from raw model output.

    Raises ExtractionError when no candidate is found. Successful output is
    a fixpoint (re-extracting returns the same text) and never contains a
    markdown fence delimiter.
    """
    if not raw or not raw.strip():
        raise ExtractionError("empty input")
    step = _candidate(raw)
    if step is None:
        raise ExtractionError("no HTML document found in response")
    text, method, prefix, suffix = step
    while True:  # reduce to fixpoint; every non-equal step strictly shrinks
        nxt = _candidate(text)
        if nxt is None:
            raise ExtractionError("candidate did not reduce to a document")
        if nxt[0] == text:
            break
        text = nxt[0]
    return HtmlDocument.from_text(text), ExtractionReport(
        method=method, stripped_prefix_len=prefix, stripped_suffix_len=suffix)


class _StructureParser(HTMLParser):
    STRUCTURAL = ("html", "head", "body")

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.open_tags: list[str] = []
        self.issues: list[str] = []
        self.saw_tag = False

    def handle_starttag(self, tag, attrs):
        self.saw_tag = True
        if tag in self.STRUCTURAL:
            self.open_tags.append(tag)

    def handle_endtag(self, tag):
        if tag in self.STRUCTURAL:
            if tag in self.open_tags:
                self.open_tags.remove(tag)
            else:
                self.issues.append(f"stray closing {tag}")


def validate_html(doc: str) -> ValidationReport:
    """Forgiving validation: only emptiness and NUL bytes are fatal, every
    structural oddity is reported as an issue (browsers auto-close)."""
    if not doc or not doc.strip():
        return ValidationReport(ok=False, issues=("empty",))
    if "\x00" in doc:
        return ValidationReport(ok=False, issues=("nul-byte",))
    parser = _StructureParser()
    try:
        parser.feed(doc)
        parser.close()
    except Exception as exc:  # html.parser almost never raises
        return ValidationReport(ok=False, issues=(f"unparseable: {exc}",))
    issues = list(parser.issues)
    for tag in parser.open_tags:
        issues.append(f"auto-closed {tag}")
    if not parser.saw_tag:
        issues.append("no-tags")
    return ValidationReport(ok=True, issues=tuple(issues))


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def store_prototype(prototype, out_dir: str | Path) -> dict[str, Path]:
    """Write ``prototype.html`` (exact document bytes) and ``trace.json``
    atomically under ``out_dir``; re-running overwrites."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        html_path = out / "prototype.html"
        trace_path = out / "trace.json"
        _atomic_write(html_path, prototype.html.text.encode("utf-8"))
        payload = {
            "strategy": prototype.strategy,
            "iteration": prototype.iteration,
            "trace": prototype.trace.to_dict(),
        }
        _atomic_write(trace_path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot store prototype under {out}: {exc}") from exc
    return {"html": html_path, "trace": trace_path}


def load_trace(path: str | Path) -> "GenerationTrace":
    from .tracing import GenerationTrace

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return GenerationTrace.from_dict(payload["trace"])
