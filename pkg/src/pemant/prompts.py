"""Prompt templates: loading, hashing, and placeholder rendering."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping

from .errors import RenderError

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATE_IDS = (
    "persona",
    "hacopb",
    "baseline_demographics",
    "baseline_household",
    "proposal",
    "refinement",
    "moderator",
    "perception",
)
BANNED_WORDS = ("proud", "blessed", "fortunate", "thrilled", "excited", "grateful")

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_SECTION = re.compile(r"^=== (system|user) ===\n", re.MULTILINE)


@dataclass(frozen=True)
class Template:
    template_id: str
    system: str
    user: str

    @property
    def placeholders(self) -> list[str]:
        seen: list[str] = []
        for m in _PLACEHOLDER.finditer(self.system + self.user):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return seen

    def digest(self) -> str:
        return hashlib.sha256((self.system + "\x00" + self.user).encode("utf-8")).hexdigest()


def parse_template(template_id: str, text: str) -> Template:
    parts = _SECTION.split(text)
    sections = dict(zip(parts[1::2], parts[2::2]))
    if "user" not in sections:
        raise RenderError(f"template {template_id!r} has no user section")
    return Template(template_id, sections.get("system", "").strip("\n"), sections["user"].strip("\n"))


@lru_cache(maxsize=None)
def get_template(template_id: str) -> Template:
    path = TEMPLATE_DIR / f"{template_id}.txt"
    if template_id not in TEMPLATE_IDS or not path.exists():
        raise RenderError(f"unknown template {template_id!r}")
    return parse_template(template_id, path.read_text(encoding="utf-8"))


def template_hashes() -> dict[str, str]:
    return {tid: get_template(tid).digest() for tid in TEMPLATE_IDS}


def _fill(text: str, bindings: Mapping[str, object], template_id: str) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in bindings or bindings[name] is None:
            raise RenderError(f"template {template_id!r}: unbound placeholder {name!r}")
        return str(bindings[name])

    return _PLACEHOLDER.sub(sub, text)


def render(template_id: str, bindings: Mapping[str, object]) -> list[dict]:
    """Chat messages for a template. Every placeholder must be bound."""
    t = get_template(template_id)
    missing = [p for p in t.placeholders if bindings.get(p) is None]
    if missing:
        raise RenderError(f"template {template_id!r}: unbound placeholder {missing[0]!r}")
    messages = []
    if t.system:
        messages.append({"role": "system", "content": _fill(t.system, bindings, template_id)})
    messages.append({"role": "user", "content": _fill(t.user, bindings, template_id)})
    return messages
