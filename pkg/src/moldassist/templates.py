"""Prompt templates are data: versioned text files with {name} placeholders.

Only the placeholders passed to render_template are substituted, so literal
braces elsewhere in a template survive untouched.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    path = resources.files("moldassist").joinpath("prompts", f"{name}.txt")
    return path.read_text()


def render_template(name: str, **values: str) -> str:
    text = load_template(name)
    for key, value in values.items():
        text = text.replace("{" + key + "}", str(value))
    return text
