"""Versioned prompt templates with named placeholders.

Templates are plain text resources rendered by literal placeholder
replacement ({NLR}, {HTML}, {CRITIQUE}, {FEATURES}, {IDEAS}, {DESIGN}, ...),
so template bodies may contain braces freely.
"""

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def template(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(
        encoding="utf-8").strip()


def render(name: str, **placeholders: str) -> str:
    text = template(name)
    for key, value in placeholders.items():
        text = text.replace("{" + key + "}", value)
    return text
