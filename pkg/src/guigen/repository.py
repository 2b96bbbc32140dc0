"""GUI screen repository: ingestion of line-JSON screen/caption datasets,
quality filtering, and a single-file archive format.

Screens arrive as one JSON record per line:
``{"screen_id", "screenshot_path", "hierarchy": {"type", "bounds": [l,t,r,b],
"children": [...]}, "app_package", "flags": [...]}``; captions as
``{"screen_id", "caption"}``. Malformed records are skipped and counted,
unreadable sources are fatal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IngestError

logger = logging.getLogger(__name__)

ARCHIVE_FORMAT = "guigen-repo"
ARCHIVE_VERSION = 1


@dataclass(frozen=True)
class ComponentNode:
    component_type: str
    bounds: tuple[int, int, int, int]  # left, top, right, bottom in px
    children: tuple["ComponentNode", ...] = ()

    def __post_init__(self):
        left, top, right, bottom = self.bounds
        if min(self.bounds) < 0:
            raise ValueError("bounds must be non-negative")
        if left > right or top > bottom:
            raise ValueError("bounds must satisfy left <= right and top <= bottom")
        if not self.component_type:
            raise ValueError("component_type must be non-empty")

    @classmethod
    def from_dict(cls, data: dict) -> "ComponentNode":
        return cls(
            component_type=str(data["type"]),
            bounds=tuple(int(v) for v in data["bounds"]),
            children=tuple(cls.from_dict(c) for c in data.get("children", [])))

    def to_dict(self) -> dict:
        return {"type": self.component_type, "bounds": list(self.bounds),
                "children": [c.to_dict() for c in self.children]}

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True)
class GuiScreen:
    screen_id: str
    screenshot: str
    hierarchy: ComponentNode
    captions: tuple[str, ...] = ()
    app_package: str = ""
    flags: frozenset[str] = frozenset()

    @classmethod
    def from_record(cls, record: dict) -> "GuiScreen":
        screen_id = str(record["screen_id"])
        if not screen_id:
            raise ValueError("screen_id must be non-empty")
        return cls(
            screen_id=screen_id,
            screenshot=str(record["screenshot_path"]),
            hierarchy=ComponentNode.from_dict(record["hierarchy"]),
            captions=tuple(str(c) for c in record.get("captions", [])),
            app_package=str(record.get("app_package", "")),
            flags=frozenset(str(f) for f in record.get("flags", [])))

    def to_record(self) -> dict:
        return {
            "screen_id": self.screen_id,
            "screenshot_path": self.screenshot,
            "hierarchy": self.hierarchy.to_dict(),
            "captions": list(self.captions),
            "app_package": self.app_package,
            "flags": sorted(self.flags),
        }


def component_type_count(screen: GuiScreen) -> int:
    """Number of distinct component-type labels in the hierarchy."""
    return len({node.component_type for node in screen.hierarchy.walk()})


@dataclass(frozen=True)
class Repository:
    """Immutable ordered collection of screens; share freely across threads."""

    screens: tuple[GuiScreen, ...] = ()
    base_dir: str = ""

    def __post_init__(self):
        by_id = {s.screen_id: s for s in self.screens}
        if len(by_id) != len(self.screens):
            raise ValueError("screen_id must be unique within a repository")
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.screens)

    def __iter__(self):
        return iter(self.screens)

    def ids(self) -> list[str]:
        return [s.screen_id for s in self.screens]

    def get(self, screen_id: str) -> GuiScreen:
        return self._by_id[screen_id]

    def screenshot_path(self, screen: GuiScreen) -> Path:
        path = Path(screen.screenshot)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path

    def read_screenshot(self, screen_id: str) -> tuple[bytes, str]:
        from .providers import media_type_for

        screen = self.get(screen_id)
        path = self.screenshot_path(screen)
        try:
            return path.read_bytes(), media_type_for(path)
        except OSError as exc:
            raise IngestError(f"cannot read screenshot for {screen_id}: {exc}") from exc


@dataclass
class IngestReport:
    read: int = 0
    ingested: int = 0
    skipped: int = 0
    dropped_captions: int = 0


def ingest_screens(source: str | Path) -> tuple[Repository, IngestReport]:
    """Build a repository from a line-JSON screen file (or a directory
    containing ``screens.jsonl``). Malformed records are skipped with a
    warning count; an unreadable source is fatal."""
    path = Path(source)
    if path.is_dir():
        path = path / "screens.jsonl"
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read screens from {path}: {exc}") from exc
    report = IngestReport()
    screens: list[GuiScreen] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        report.read += 1
        try:
            screen = GuiScreen.from_record(json.loads(line))
            if screen.screen_id in seen:
                raise ValueError(f"duplicate screen_id {screen.screen_id}")
            seen.add(screen.screen_id)
        except (ValueError, KeyError, TypeError) as exc:
            report.skipped += 1
            logger.warning("skipping malformed screen record at %s:%d: %s",
                           path, lineno, exc)
            continue
        screens.append(screen)
        report.ingested += 1
    return Repository(screens=tuple(screens), base_dir=str(path.parent)), report


def ingest_captions(source: str | Path, repo: Repository) -> tuple[Repository, IngestReport]:
    """Append captions to matching screens; captions for unknown screen_ids
    are dropped and counted. Duplicate captions are kept (dedup is a
    retrieval-time decision)."""
    path = Path(source)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read captions from {path}: {exc}") from exc
    report = IngestReport()
    by_id: dict[str, list[str]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        report.read += 1
        try:
            record = json.loads(line)
            screen_id = str(record["screen_id"])
            caption = str(record["caption"])
            if not caption.strip():
                raise ValueError("empty caption")
        except (ValueError, KeyError, TypeError) as exc:
            report.skipped += 1
            logger.warning("skipping malformed caption record at %s:%d: %s",
                           path, lineno, exc)
            continue
        by_id.setdefault(screen_id, []).append(caption)
    known = set(s.screen_id for s in repo.screens)
    for screen_id, captions in by_id.items():
        if screen_id in known:
            report.ingested += len(captions)
        else:
            report.dropped_captions += len(captions)
    if report.dropped_captions:
        logger.warning("dropped %d captions for unknown screen ids",
                       report.dropped_captions)
    screens = tuple(
        replace(s, captions=s.captions + tuple(by_id.get(s.screen_id, ())))
        for s in repo.screens)
    return Repository(screens=screens, base_dir=repo.base_dir), report


@dataclass(frozen=True)
class FilterRules:
    min_component_types: int = 0
    excluded_flags: frozenset[str] = frozenset()
    require_caption: bool = False


@dataclass
class FilterReport:
    input_count: int = 0
    retained_count: int = 0
    per_rule_exclusions: dict[str, int] = field(default_factory=dict)

    def _bump(self, rule: str) -> None:
        self.per_rule_exclusions[rule] = self.per_rule_exclusions.get(rule, 0) + 1


def filter_pipeline(repo: Repository, rules: FilterRules) -> tuple[Repository, FilterReport]:
    """Retain screens satisfying all rules; tally exclusions per rule.
    A screen violating several rules is counted under each."""
    report = FilterReport(input_count=len(repo))
    retained: list[GuiScreen] = []
    for screen in repo:
        keep = True
        if rules.min_component_types > 0 and \
                component_type_count(screen) < rules.min_component_types:
            report._bump("min-component-types")
            keep = False
        for flag in sorted(rules.excluded_flags & screen.flags):
            report._bump(f"excluded-flag:{flag}")
            keep = False
        if rules.require_caption and not screen.captions:
            report._bump("require-caption")
            keep = False
        if keep:
            retained.append(screen)
    report.retained_count = len(retained)
    return Repository(screens=tuple(retained), base_dir=repo.base_dir), report


def save_repository(repo: Repository, path: str | Path) -> None:
    """Persist as a self-describing line-JSON archive (header + records)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION,
              "count": len(repo), "base_dir": repo.base_dir}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for screen in repo:
            fh.write(json.dumps(screen.to_record(), sort_keys=True) + "\n")


def load_repository(path: str | Path) -> Repository:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read repository archive {path}: {exc}") from exc
    if not lines:
        raise IngestError(f"repository archive {path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != ARCHIVE_FORMAT:
        raise IngestError(f"{path} is not a {ARCHIVE_FORMAT} archive")
    screens = tuple(GuiScreen.from_record(json.loads(line))
                    for line in lines[1:] if line.strip())
    return Repository(screens=screens, base_dir=header.get("base_dir", ""))
