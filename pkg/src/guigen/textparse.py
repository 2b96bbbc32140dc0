"""Small parsers for LLM output: fenced code blocks and embedded JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class FencedBlock:
    label: str
    content: str
    start: int  # char offset of the content within the source text
    end: int


def find_fenced_blocks(text: str) -> list[FencedBlock]:
    """Locate completed triple-backtick blocks, fences anchored at line
    starts. An opener without a closer is not a block."""
    blocks: list[FencedBlock] = []
    lines = text.splitlines(keepends=True)
    offset = 0
    open_at: int | None = None
    label = ""
    content_start = 0
    for line in lines:
        stripped = line.strip()
        if stripped.startswith("```"):
            if open_at is None:
                open_at = offset
                label = stripped[3:].strip().lower()
                content_start = offset + len(line)
            else:
                content = text[content_start:offset]
                blocks.append(FencedBlock(label=label,
                                          content=content.strip("\n"),
                                          start=content_start, end=offset))
                open_at = None
        offset += len(line)
    return blocks


def extract_json_value(text: str):
    """Parse the first JSON array or object found in ``text``.

    Tries, in order: the whole text, each fenced block, then the first
    balanced bracket span starting at '[' or '{'. Raises ValueError when
    nothing parses.
    """
    candidates = [text.strip()]
    candidates += [b.content for b in find_fenced_blocks(text)]
    span = _first_balanced_span(text)
    if span is not None:
        candidates.append(span)
    for cand in candidates:
        if not cand:
            continue
        try:
            return json.loads(cand)
        except (json.JSONDecodeError, ValueError):
            continue
    raise ValueError("no JSON value found in text")


def _first_balanced_span(text: str) -> str | None:
    start = None
    for i, ch in enumerate(text):
        if ch in "[{":
            start = i
            break
    if start is None:
        return None
    opener = text[start]
    closer = "]" if opener == "[" else "}"
    depth = 0
    in_string = False
    escape = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def first_nonempty_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""
