"""Shared fixtures: synthetic screen corpora with on-disk screenshots,
scripted providers, and canned HTML documents."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from guigen.providers import MockChatProvider, MockRule
from guigen.repository import ComponentNode, GuiScreen, Repository
from guigen.strategies import Nlr

MINIMAL_HTML = ("<html><head><style>body{margin:0;font-family:sans-serif}"
                "</style></head><body><header>App</header>"
                "<main><h1>Screen</h1></main></body></html>")

FENCED_HTML = f"```html\n{MINIMAL_HTML}\n```"


def make_hierarchy(types: list[str]) -> ComponentNode:
    children = tuple(ComponentNode(component_type=t, bounds=(0, i * 10, 100, i * 10 + 10))
                     for i, t in enumerate(types[1:]))
    return ComponentNode(component_type=types[0], bounds=(0, 0, 100, 200),
                         children=children)


def make_screen(tmp_path: Path, screen_id: str, captions: list[str],
                types: list[str] | None = None,
                flags: list[str] | None = None) -> GuiScreen:
    shot = tmp_path / f"{screen_id}.png"
    shot.write_bytes(b"PNG-STAND-IN-" + screen_id.encode())
    return GuiScreen(screen_id=screen_id, screenshot=str(shot),
                     hierarchy=make_hierarchy(types or ["Layout", "Text", "Image"]),
                     captions=tuple(captions),
                     app_package=f"com.example.{screen_id}",
                     flags=frozenset(flags or []))


def make_repo(tmp_path: Path, n: int, captions_per_screen: int = 1) -> Repository:
    screens = [
        make_screen(tmp_path, f"s{i:04d}",
                    [f"screen {i} caption {j}" for j in range(captions_per_screen)])
        for i in range(n)
    ]
    return Repository(screens=tuple(screens), base_dir="")


def write_screen_records(path: Path, records: list[dict]) -> Path:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                    encoding="utf-8")
    return path


def screen_record(screen_id: str, tmp_path: Path | None = None, **overrides) -> dict:
    record = {
        "screen_id": screen_id,
        "screenshot_path": f"{screen_id}.png",
        "hierarchy": {"type": "Layout", "bounds": [0, 0, 100, 200],
                      "children": [{"type": "Text", "bounds": [0, 0, 50, 20],
                                    "children": []}]},
        "app_package": f"com.example.{screen_id}",
        "flags": [],
    }
    record.update(overrides)
    if tmp_path is not None:
        (tmp_path / f"{screen_id}.png").write_bytes(b"PNG-" + screen_id.encode())
    return record


@pytest.fixture
def nlr() -> Nlr:
    return Nlr(id="n1", text="A login page for a food delivery app")


@pytest.fixture
def html_mock() -> MockChatProvider:
    """Mock that answers every prompt with a fenced HTML document and every
    text-stage prompt with plausible prose."""
    return MockChatProvider(rules=[
        MockRule("Provide feedback to improve this prototype",
                 ["Add a footer navigation and a search field."]),
        MockRule("List the GUI features", ["- login form: username and password\n"
                                           "- submit button: sends the form"]),
        MockRule("derive concrete implementation and design ideas",
                 ["Use input elements with labels and a primary button."]),
        MockRule("describe the overall layout structure and page design",
                 ["Single column, brand header, primary action at the bottom."]),
    ], default=[FENCED_HTML])
