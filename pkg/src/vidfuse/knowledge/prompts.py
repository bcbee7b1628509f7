"""Prompt templates shipped as text assets with ``{name}`` placeholders."""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def fields(self) -> frozenset[str]:
        return frozenset(f for _, f, _, _ in string.Formatter().parse(self.text) if f)

    def render(self, **values) -> str:
        missing = self.fields - values.keys()
        if missing:
            raise KeyError(f"prompt {self.name!r} missing values for {sorted(missing)}")
        return self.text.format(**{k: ("" if v is None else v) for k, v in values.items()})


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptTemplate:
    text = resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name, text.rstrip("\n") + "\n")
