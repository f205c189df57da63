"""Persona synthesis, attitudinal enrichment, and their validators.

A base persona is a first-person narrative built from atomic facts. Enrichment
adds attitude, subjective-norm and perceived-control sections conditioned on the
household state and a behavioral anchor. Both stages regenerate on validation
failure up to a fixed cap.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .anchors import Anchor
from .backend import make_request
from .conditions import Condition, all_hold
from .errors import ConfigError, ConstructParseError, EnrichmentError, FinalAnswerParseError, SynthesisError
from .parsing import INDIVIDUAL_RANGE, parse_constructs, parse_final_answer
from .prompts import BANNED_WORDS, render
from .survey import HouseholdRecord, PersonRecord, Schema
from .translation import AtomicFactList, contains_key, contains_term

MAX_ATTEMPTS = 3

SCOPE_PATTERNS = (
    (r"\btrips?\b", "trip"),
    (r"\btravel\s+diar(?:y|ies)\b", "travel diary"),
    (r"\bstep\s*[0-9]+\b", "reasoning step"),
    (r"\b(?:my|internal)\s+reasoning\b", "reasoning"),
    (r"\blet me think\b", "reasoning"),
    (r"\bfinal answer\b", "final answer"),
)

# phrases asserting authority; each group is allowed only if a fact already uses one of its members
AUTHORITY_GROUPS = (
    ("head of household", "head of the household", "household head"),
    ("responsible for",),
    ("in charge of",),
    ("breadwinner",),
    ("decision maker", "decision-maker"),
)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    variable: str | None = None

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"

    def as_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "variable": self.variable}


def _sorted(vs: list[Violation]) -> list[Violation]:
    return sorted(set(vs), key=lambda v: (v.kind, v.variable or "", v.detail))


@dataclass(frozen=True)
class BasePersona:
    person_id: str
    narrative: str
    source_facts: AtomicFactList


def clean_candidate(text: str) -> str:
    """Strip whitespace and an echoed ``Persona:`` label."""
    t = text.strip()
    t = re.sub(r"^\**\s*persona\s*\**\s*:\s*", "", t, flags=re.IGNORECASE)
    return t.strip()


def validate_narrative(candidate: str, facts: AtomicFactList,
                       banned_words: Sequence[str] = BANNED_WORDS) -> list[Violation]:
    """Every failed check on one candidate; an empty list means it passes."""
    out: list[Violation] = []
    if not candidate.startswith("I am"):
        out.append(Violation("identity", "narrative does not begin with 'I am'"))
    for w in banned_words:
        if contains_term(candidate, w):
            out.append(Violation("banned_word", w))
    for pat, label in SCOPE_PATTERNS:
        if re.search(pat, candidate, re.IGNORECASE):
            out.append(Violation("scope", label))
    for prov in facts.provenance:
        for key in prov.keys:
            if not contains_key(candidate, key):
                out.append(Violation("coverage", f"key {key!r} not found", prov.variable_name))
    fact_text = " ".join(facts.facts)
    for group in AUTHORITY_GROUPS:
        used = [p for p in group if contains_term(candidate, p)]
        if used and not any(contains_term(fact_text, p) for p in group):
            out.append(Violation("authority", used[0]))
    return _sorted(out)


def synthesize_narrative(facts: AtomicFactList, backend, banned_words: Sequence[str] = BANNED_WORDS,
                         max_attempts: int = MAX_ATTEMPTS, seed: int | None = None) -> BasePersona:
    if not facts.facts:
        raise SynthesisError(f"{facts.person_id}: no facts to narrate")
    messages = render("persona", {"banned_words": ", ".join(banned_words), "facts": facts.as_text()})
    violations: list[Violation] = []
    for attempt in range(max_attempts):
        req = make_request("persona", messages, seed=seed, metadata={
            "person_id": facts.person_id, "facts": list(facts.facts), "attempt": attempt})
        candidate = clean_candidate(backend.complete(req))
        violations = validate_narrative(candidate, facts, banned_words)
        if not violations:
            return BasePersona(facts.person_id, candidate, facts)
    raise SynthesisError(
        f"{facts.person_id}: no valid narrative after {max_attempts} attempts "
        f"({'; '.join(map(str, violations))})", violations)


# --------------------------------------------------------------------------
# attitudinal markers


@dataclass(frozen=True)
class AttitudinalMarker:
    construct: str
    statement: str
    reverse_coded: bool
    implication: str


@dataclass(frozen=True)
class MarkerSet:
    markers: tuple  # (AttitudinalMarker, conditions) in table order

    @property
    def constructs(self) -> list[str]:
        return [m.construct for m, _ in self.markers]

    def get(self, construct: str) -> AttitudinalMarker:
        for m, _ in self.markers:
            if m.construct == construct:
                return m
        raise KeyError(construct)


MARKER_CONSTRUCTS = ("tech_savvy", "polychronic", "materialistic", "pro_car", "pro_transit", "wait_tolerant")


def load_markers(path: str | Path | None = None) -> MarkerSet:
    path = Path(path) if path else Path(__file__).parent / "data" / "markers.yaml"
    if not path.exists():
        raise ConfigError(f"marker file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    items = []
    for m in raw.get("markers") or ():
        if m["construct"] not in MARKER_CONSTRUCTS:
            raise ConfigError(f"unknown marker construct {m['construct']!r}")
        marker = AttitudinalMarker(m["construct"], m["statement"], bool(m.get("reverse_coded")), m["implication"])
        items.append((marker, tuple(Condition.from_dict(c) for c in m.get("when") or ())))
    return MarkerSet(tuple(items))


def impute_markers(record: PersonRecord | Mapping, markers: MarkerSet | None = None) -> list[AttitudinalMarker]:
    """Markers whose predicates all hold on the (merged person + household) fields.

    Predicates with no conditions never fire.
    """
    markers = markers or load_markers()
    fields = record.coded_fields if isinstance(record, PersonRecord) else record
    return [m for m, conds in markers.markers if conds and all_hold(conds, fields)]


# --------------------------------------------------------------------------
# household context and enrichment

ROLE_LABELS = {
    1: "head of household",
    2: "spouse or partner",
    3: "child",
    4: "parent",
    5: "sibling",
    6: "other relative",
    7: "non-relative",
}


def role_label(fields: Mapping) -> str:
    return ROLE_LABELS.get(fields.get("R_RELAT"), "household member")


@dataclass(frozen=True)
class HouseholdContext:
    household_id: str
    hh_size: int
    vehicle_count: int
    driver_count: int
    income_label: str
    location_label: str
    roles: tuple = ()  # (person_id, role label)
    has_children: bool = False
    has_young_child: bool = False
    worker_count: int = 0

    @classmethod
    def from_household(cls, hh: HouseholdRecord, members: Sequence[PersonRecord], schema: Schema):
        ages = [m.get("R_AGE_IMP") for m in members]
        children = hh.get("CHILDREN")
        young = hh.get("YOUNGCHILD")
        return cls(
            household_id=hh.household_id,
            hh_size=hh.hh_size if hh.hh_size is not None else len(members),
            vehicle_count=hh.vehicle_count or 0,
            driver_count=hh.driver_count or 0,
            income_label=schema.income_label(hh.income_bracket),
            location_label=hh.location_class,
            roles=tuple((m.person_id, role_label(m.coded_fields)) for m in members),
            has_children=bool(children) if children is not None else any(a is not None and a < 18 for a in ages),
            has_young_child=bool(young) if young is not None else any(a is not None and a < 5 for a in ages),
            worker_count=_worker_count(hh, members),
        )

    def describe(self) -> str:
        roles = ", ".join(r for _, r in self.roles) or "none listed"
        return (f"Size: {self.hh_size} | Vehicles: {self.vehicle_count} | Drivers: {self.driver_count} | "
                f"Income: {self.income_label} | Location: {self.location_label} | Members: {roles}")


def _worker_count(hh, members) -> int:
    w = hh.get("WRKCOUNT")
    if isinstance(w, (int, float)) and w >= 0:
        return int(w)
    return sum(1 for m in members if m.get("WORKER") == 1)


@dataclass(frozen=True)
class EnrichedPersona:
    base: BasePersona
    attitude: str
    subjective_norm: str
    perceived_control: str
    markers: tuple
    anchor: Anchor
    final_answer: int | None = None

    @property
    def person_id(self) -> str:
        return self.base.person_id

    def profile_text(self) -> str:
        return (f"{self.base.narrative}\nAttitude: {self.attitude}\n"
                f"Subjective Norms: {self.subjective_norm}\nPerceived Behavioral Control: {self.perceived_control}")

    def to_record(self) -> dict:
        return {
            "person_id": self.person_id,
            "narrative": self.base.narrative,
            "facts": list(self.base.source_facts.facts),
            "constructs": {"attitude": self.attitude, "subjective_norm": self.subjective_norm,
                           "perceived_control": self.perceived_control},
            "markers": [m.construct for m in self.markers],
            "anchor": {"value": self.anchor.value, "segment": self.anchor.label, "fallback": self.anchor.fallback},
            "final_answer": self.final_answer,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, ensure_ascii=False)


DRIVE_PREFERENCE = (
    "like driving", "love driving", "loves driving", "enjoy driving", "prefer driving", "prefer to drive",
    "idea of driving", "pro-car", "rather drive", "want to drive", "driving is my preferred",
)
LIMITING = (
    "no vehicle", "no car", "no household vehicle", "without a vehicle", "without a car", "no access",
    "no drive access", "no driving access", "not available", "unavailable", "limited access",
    "does not own", "doesn't own", "zero vehicles", "lack", "lacks", "compete", "competes",
    "competition", "claimed by", "must share", "shared vehicle", "not always available",
)
SOLO_DRIVING = (
    "drive alone", "drive myself", "drive by myself", "drive my car", "drive my own car", "my own car",
    "drive to work every day", "drive every day", "drive daily", "daily solo driving", "solo driving",
)
CHILD_TERMS = (
    "child", "children", "kid", "kids", "toddler", "baby", "infant", "daycare",
    "school drop-off", "drop-off", "drop off", "school run",
)
CAREGIVING = (
    "escort", "drop off", "drop-off", "pick up", "pick-up", "take my child", "drive my child",
    "childcare", "daycare", "caregiving", "care for", "look after", "school run",
)
HIGH_MOBILITY = (
    "high mobility", "highly mobile", "very active traveler", "travel extensively",
    "on the go all day", "frequent traveler", "constantly on the move",
)


def _any_term(text: str, terms) -> str | None:
    for t in terms:
        if contains_term(text, t):
            return t
    return None


def _fact_code(facts: AtomicFactList, variable: str):
    for p in facts.provenance:
        if p.variable_name == variable:
            return p.raw_code
    return None


def is_caregiver(facts: AtomicFactList, ctx: HouseholdContext) -> bool:
    """An adult head or spouse in a household with a young child."""
    age = _fact_code(facts, "R_AGE_IMP")
    return (ctx.has_young_child and _fact_code(facts, "R_RELAT") in (1, 2)
            and (age is None or age >= 18))


def check_priority(enriched: EnrichedPersona, ctx: HouseholdContext, facts: AtomicFactList) -> list[Violation]:
    """Lexical precedence checks; an empty list means the enrichment is acceptable."""
    out: list[Violation] = []
    sections = {"attitude": enriched.attitude, "subjective_norm": enriched.subjective_norm,
                "perceived_control": enriched.perceived_control}
    for name, text in sections.items():
        if not text.strip():
            out.append(Violation("empty_construct", name))
    everything = " ".join(sections.values())

    constrained = ctx.vehicle_count == 0 or ctx.driver_count > ctx.vehicle_count
    if constrained:
        pref = _any_term(enriched.attitude, DRIVE_PREFERENCE)
        if pref and not _any_term(enriched.perceived_control, LIMITING):
            out.append(Violation("resource_precedence",
                                 f"attitude prefers driving ({pref!r}) but control states no limit"))
    if ctx.vehicle_count == 0:
        solo = _any_term(everything, SOLO_DRIVING)
        if solo:
            out.append(Violation("solo_driving", f"zero-vehicle household but text asserts {solo!r}"))

    if not ctx.has_children:
        kid = _any_term(enriched.subjective_norm, CHILD_TERMS)
        if kid:
            out.append(Violation("child_scope", f"subjective norm mentions {kid!r} in a childless household"))
    elif is_caregiver(facts, ctx) and not _any_term(enriched.subjective_norm, CAREGIVING):
        out.append(Violation("caregiving_missing", "parent of a young child has no escort or care obligation"))

    if _fact_code(facts, "MEDCOND") == 1:
        hm = _any_term(everything, HIGH_MOBILITY)
        if hm:
            out.append(Violation("fact_precedence", f"{hm!r} contradicts the medical-condition fact", "MEDCOND"))
    return _sorted(out)


def _marker_bindings(markers: Sequence[AttitudinalMarker]) -> tuple[str, str]:
    if not markers:
        return "None imputed.", "no specific tendency"
    statement = " ".join(f'"{m.statement}"' + (" (reverse coded)" if m.reverse_coded else "") for m in markers)
    implication = " ".join(m.implication for m in markers)
    return statement, implication


def enrich(base: BasePersona, ctx: HouseholdContext, anchor: Anchor, markers: Sequence[AttitudinalMarker],
           backend, max_attempts: int = MAX_ATTEMPTS, seed: int | None = None) -> EnrichedPersona:
    statement, implication = _marker_bindings(markers)
    messages = render("hacopb", {
        "hh_size": ctx.hh_size, "veh_count": ctx.vehicle_count, "income": ctx.income_label,
        "driver_count": ctx.driver_count, "anchor": f"{anchor.value:.2f}", "persona": base.narrative,
        "marker_statement": statement, "marker_implication": implication,
    })
    caregiver = is_caregiver(base.source_facts, ctx)
    last: list = []
    for attempt in range(max_attempts):
        req = make_request("hacopb", messages, seed=seed, metadata={
            "person_id": base.person_id, "household_id": ctx.household_id, "anchor": anchor.value,
            "vehicles": ctx.vehicle_count, "drivers": ctx.driver_count,
            "markers": [m.construct for m in markers], "caregiver": caregiver, "attempt": attempt})
        reply = backend.complete(req)
        try:
            parts = parse_constructs(reply)
        except ConstructParseError as exc:
            last = [Violation("construct_parse", str(exc))]
            continue
        try:
            final = parse_final_answer(reply, INDIVIDUAL_RANGE)
        except FinalAnswerParseError:
            final = None
        enriched = EnrichedPersona(base, parts["attitude"], parts["subjective_norm"], parts["perceived_control"],
                                   tuple(markers), anchor, final)
        last = check_priority(enriched, ctx, base.source_facts)
        if not last:
            return enriched
    raise EnrichmentError(
        f"{base.person_id}: enrichment failed after {max_attempts} attempts ({'; '.join(map(str, last))})", last)
