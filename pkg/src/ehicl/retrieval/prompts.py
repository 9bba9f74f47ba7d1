"""Prompt texts live in a config file and are loaded verbatim.

The default file ships as package data (``ehicl/data/prompts.json``); an
override path may point at a file with the same keys.
"""

from __future__ import annotations

import json
from importlib import resources

__all__ = ["load_prompts", "PROMPT_KEYS"]

PROMPT_KEYS = (
    "classify_system",
    "classify_user",
    "description_system",
    "description_user",
    "reasoning_system",
    "reasoning_user",
)


def load_prompts(path=None) -> dict[str, str]:
    if path is None:
        text = resources.files("ehicl").joinpath("data/prompts.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    prompts = json.loads(text)
    missing = [k for k in PROMPT_KEYS if k not in prompts]
    if missing:
        raise ValueError(f"prompt config missing keys: {missing}")
    return {k: str(prompts[k]) for k in PROMPT_KEYS}
