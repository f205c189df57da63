"""Strict parsers for model replies.

Every parser either returns a value in its documented range or raises a
``ResponseParseError`` subclass; callers regenerate on error.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import (
    ConstructParseError,
    CountParseError,
    FinalAnswerParseError,
    LikertParseError,
    ModeratorParseError,
    VoteParseError,
)

VOTE_RANGE = (0, 50)
INDIVIDUAL_RANGE = (0, 50)
HOUSEHOLD_RANGE = (0, 150)
DEMOGRAPHICS_RANGE = (0, 30)

_A = re.ASCII | re.IGNORECASE
_VOTE = re.compile(r"VOTE:", re.ASCII)
_VOTE_VALUE = re.compile(r"[ \t*]*([+-]?[0-9]+)(?![0-9]*\.[0-9])", re.ASCII)
_REASON = re.compile(r"REASON:[ \t]*(.*)", re.ASCII | re.DOTALL)
_STANDALONE_INT = re.compile(r"(?<![0-9A-Za-z_.])[0-9]+(?![0-9A-Za-z_]|\.[0-9])", re.ASCII)
_DECISION = re.compile(r"DECISION\s*:\s*\**\s*(ACCEPT|REJECT)\b", _A)
_FEEDBACK = re.compile(r"FEEDBACK\s*:[ \t]*\**[ \t]*([^\r\n]*)", _A)
_FINAL = re.compile(r"final\s+answer\s*\**\s*:", _A)
_FINAL_VALUE = re.compile(r"[ \t*<]*([+-]?[0-9]+)(?![0-9]*\.[0-9])", re.ASCII)
_ANY_INT = re.compile(r"(?<![0-9])[0-9]+(?![0-9])", re.ASCII)


def _to_int(token: str) -> int:
    """int() without the interpreter's digit-count limit; huge magnitudes saturate."""
    sign = -1 if token.startswith("-") else 1
    digits = token.lstrip("+-").lstrip("0") or "0"
    if len(digits) > 18:
        return sign * 10**18
    return sign * int(digits)


def clamp(value: int, bounds: tuple[int, int]) -> tuple[int, bool]:
    lo, hi = bounds
    c = min(max(value, lo), hi)
    return c, c != value


@dataclass(frozen=True)
class ParsedVote:
    value: int
    reason: str
    clamped: bool = False


def format_vote(value: int, reason: str = "") -> str:
    return f"VOTE: {value}\nREASON: {reason}"


def parse_vote(text: str) -> ParsedVote:
    """Integer after the first ``VOTE:`` marker, clamped to [0, 50]; reason after ``REASON:``."""
    m = _VOTE.search(text)
    if m is None:
        raise VoteParseError("no VOTE: marker")
    v = _VOTE_VALUE.match(text, m.end())
    if v is None:
        raise VoteParseError("VOTE: not followed by an integer")
    value, clamped = clamp(_to_int(v.group(1)), VOTE_RANGE)
    r = _REASON.search(text, v.end())
    reason = r.group(1).strip() if r else ""
    return ParsedVote(value, reason, clamped)


def parse_refinement_count(text: str, bounds: tuple[int, int] = VOTE_RANGE) -> int:
    """Last standalone base-10 integer in the utterance, clamped to ``bounds`` (default [0, 50])."""
    last = None
    for last in _STANDALONE_INT.finditer(text):
        pass
    if last is None:
        raise CountParseError("no integer trip count in utterance")
    return clamp(_to_int(last.group(0)), bounds)[0]


@dataclass(frozen=True)
class ModeratorDecision:
    accept: bool
    feedback: str

    @property
    def decision(self) -> str:
        return "accept" if self.accept else "reject"


def parse_moderator(text: str) -> ModeratorDecision:
    m = _DECISION.search(text)
    if m is None:
        raise ModeratorParseError("no DECISION: ACCEPT/REJECT token")
    f = _FEEDBACK.search(text)
    return ModeratorDecision(m.group(1).upper() == "ACCEPT", f.group(1).strip() if f else "")


def parse_final_answer(text: str, bounds: tuple[int, int] = INDIVIDUAL_RANGE) -> int:
    """Integer after the last ``Final Answer:`` marker, clamped to ``bounds``."""
    last = None
    for last in _FINAL.finditer(text):
        pass
    if last is None:
        raise FinalAnswerParseError("no 'Final Answer:' marker")
    v = _FINAL_VALUE.match(text, last.end())
    if v is None:
        raise FinalAnswerParseError("'Final Answer:' not followed by an integer")
    return clamp(_to_int(v.group(1)), bounds)[0]


def parse_likert(text: str, k: int = 5) -> int:
    """First integer token within 1..k (e.g. "Good (3)" -> 3)."""
    for m in _ANY_INT.finditer(text):
        n = _to_int(m.group(0))
        if 1 <= n <= k:
            return n
    raise LikertParseError(f"no answer in 1..{k}")


CONSTRUCTS = ("attitude", "subjective_norm", "perceived_control")
_HEADING = re.compile(
    r"^[ \t#>*-]*(?:[0-9]\.?\s*)?[*_]*\s*"
    r"(attitude|subjective\s+norms?|perceived\s+behaviou?ral\s+control|pbc)\b[^:\n]*:[*_ \t]*",
    re.IGNORECASE | re.MULTILINE,
)
_END = re.compile(r"^[ \t*#]*final\s+answer\b", re.IGNORECASE | re.MULTILINE)


def parse_constructs(text: str) -> dict[str, str]:
    """Attitude / subjective-norm / perceived-control sections of a reasoning reply."""
    heads = list(_HEADING.finditer(text))
    end = _END.search(text)
    stop = end.start() if end else len(text)
    found: dict[str, str] = {}
    for i, h in enumerate(heads):
        name = h.group(1).lower()
        key = ("attitude" if name.startswith("att") else
               "subjective_norm" if name.startswith("sub") else "perceived_control")
        nxt = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        body = text[h.end():min(nxt, max(stop, h.end()))].strip()
        if key not in found and body:
            found[key] = body
    missing = [c for c in CONSTRUCTS if c not in found]
    if missing:
        raise ConstructParseError(f"missing construct sections: {', '.join(missing)}")
    return found
