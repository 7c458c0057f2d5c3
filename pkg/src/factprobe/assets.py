"""Access to packaged text assets (prompt templates, word lists)."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    """Return the prompt template prompts/<name>.txt, verbatim."""
    return resources.files("factprobe").joinpath(f"prompts/{name}.txt").read_text("utf-8")
