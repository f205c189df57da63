"""Deterministic translation of coded survey records into atomic first-person facts.

Rules live in a YAML file, grouped by variable in the order facts are emitted.
Each rule has a matcher, optional guards over other fields, and a template.
Neutral rules render non-response codes as generic descriptors.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .conditions import Condition, all_hold, jointly_satisfiable
from .errors import ConfigError, TranslationError
from .survey import PersonRecord, Schema

DEFAULT_FORBIDDEN = (
    "spouse", "partner", "husband", "wife", "son", "daughter", "child",
    "parent", "mother", "father", "sibling", "brother", "sister",
    "relative", "grandchild", "head of household", "household head",
)


@dataclass(frozen=True)
class Matcher:
    kind: str  # code | codes | range | nonresponse | missing | otherwise | any
    codes: tuple = ()
    lo: float | None = None
    hi: float | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Matcher":
        if "code" in d:
            return cls("codes", (d["code"],))
        if "codes" in d:
            return cls("codes", tuple(d["codes"]))
        if "range" in d:
            lo, hi = d["range"]
            return cls("range", lo=lo, hi=hi)
        for kind in ("nonresponse", "missing", "otherwise", "any"):
            if d.get(kind):
                return cls(kind)
        raise ConfigError(f"unrecognised matcher {dict(d)}")

    def matches(self, value, nonresponse_codes) -> bool:
        if self.kind == "missing":
            return value is None
        if value is None:
            return False
        if self.kind == "any":
            return True
        if self.kind == "codes":
            return value in self.codes
        if self.kind == "range":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                return False
            return (self.lo is None or value >= self.lo) and (self.hi is None or value <= self.hi)
        if self.kind == "nonresponse":
            return value in nonresponse_codes
        return False  # "otherwise" is resolved by the engine

    def probe(self) -> list:
        if self.kind == "codes":
            return list(self.codes)
        if self.kind == "range":
            pts = [p for p in (self.lo, self.hi) if p is not None]
            return pts + [p + 0.5 for p in pts]
        return []


@dataclass(frozen=True)
class TranslationRule:
    rule_id: str
    variable_name: str
    matcher: Matcher
    template: str
    context_guards: tuple = ()
    neutral: bool = False
    keys: tuple = ()
    labels: dict = field(default_factory=dict)
    key_labels: dict = field(default_factory=dict)
    forbidden: tuple = ()
    source: str = "authored"

    def placeholders(self) -> list[str]:
        return [f for _, f, _, _ in string.Formatter().parse(self.template) if f] + [
            f for k in self.keys for _, f, _, _ in string.Formatter().parse(k) if f
        ]

    def fires(self, value, fields, nonresponse_codes) -> bool:
        return self.matcher.matches(value, nonresponse_codes) and all_hold(self.context_guards, fields)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple  # in emission order
    nonresponse_codes: frozenset = frozenset()
    forbidden: tuple = DEFAULT_FORBIDDEN

    def __post_init__(self):
        index: dict[str, list] = {}
        for r in self.rules:
            index.setdefault(r.variable_name, []).append(r)
        object.__setattr__(self, "_index", index)  # insertion order is emission order

    @property
    def variables(self) -> list[str]:
        return list(self._index)

    def for_variable(self, name: str) -> list[TranslationRule]:
        return list(self._index.get(name, ()))


def rules_from_dict(raw: Mapping[str, Any]) -> RuleSet:
    forbidden = tuple(raw.get("forbidden_role_terms") or DEFAULT_FORBIDDEN)
    rules = []
    ids = set()
    for block in raw.get("variables") or ():
        var = block["var"]
        for r in block.get("rules") or ():
            rid = r["id"]
            if rid in ids:
                raise ConfigError(f"duplicate rule id {rid!r}")
            ids.add(rid)
            rules.append(TranslationRule(
                rule_id=rid,
                variable_name=var,
                matcher=Matcher.from_dict(r.get("match") or {}),
                template=r["template"],
                context_guards=tuple(Condition.from_dict(c) for c in r.get("when") or ()),
                neutral=bool(r.get("neutral", False)),
                keys=tuple(r.get("keys") or ()),
                labels=dict(r.get("labels") or {}),
                key_labels=dict(r.get("key_labels") or {}),
                forbidden=tuple(r.get("forbidden") or (forbidden if r.get("neutral") else ())),
                source=r.get("source", "authored"),
            ))
    return RuleSet(tuple(rules), frozenset(raw.get("nonresponse_codes") or ()), forbidden)


def load_rules(path: str | Path) -> RuleSet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"rules file not found: {path}")
    return rules_from_dict(yaml.safe_load(path.read_text(encoding="utf-8")) or {})


def default_rules_path() -> Path:
    return Path(__file__).parent / "data" / "nhts_rules.yaml"


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FactProvenance:
    variable_name: str
    raw_code: Any
    rule_id: str
    source: str
    neutral: bool
    keys: tuple

    def as_dict(self) -> dict:
        return {
            "variable": self.variable_name, "code": self.raw_code, "rule": self.rule_id,
            "source": self.source, "neutral": self.neutral, "keys": list(self.keys),
        }


@dataclass(frozen=True)
class AtomicFactList:
    person_id: str
    facts: tuple
    provenance: tuple

    def __len__(self) -> int:
        return len(self.facts)

    def variables(self) -> set[str]:
        return {p.variable_name for p in self.provenance}

    def as_text(self) -> str:
        return "\n".join(f"- {f}" for f in self.facts)

    def to_json(self) -> str:
        return json.dumps(
            {"person_id": self.person_id, "facts": list(self.facts),
             "provenance": [p.as_dict() for p in self.provenance]},
            sort_keys=True,
        )


def format_value(v) -> str:
    """Locale-free rendering: integers bare, fractional reals with one decimal."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if v.is_integer():
            return str(int(v))
        return f"{v:.1f}"
    return str(v)


def _render(text: str, rule: TranslationRule, value, fields: Mapping) -> str:
    out = []
    for literal, name, spec, conv in string.Formatter().parse(text):
        out.append(literal)
        if name is None:
            continue
        if name == "label":
            if value not in rule.labels:
                raise TranslationError(rule.variable_name, rule.rule_id, f"no label for code {value!r}")
            out.append(str(rule.labels[value]))
        elif name == "key":
            if value not in rule.key_labels:
                raise TranslationError(rule.variable_name, rule.rule_id, f"no key label for code {value!r}")
            out.append(str(rule.key_labels[value]))
        elif name == "value":
            out.append(format_value(value))
        else:
            if fields.get(name) is None:
                raise TranslationError(rule.variable_name, rule.rule_id, f"unresolvable placeholder {{{name}}}")
            out.append(format_value(fields[name]))
    return "".join(out)


def translate(record: PersonRecord | Mapping, rules: RuleSet, person_id: str | None = None) -> AtomicFactList:
    """Apply the rule set to one record (a PersonRecord or a plain field mapping)."""
    if isinstance(record, PersonRecord):
        fields, pid = record.coded_fields, record.person_id
    else:
        fields, pid = record, person_id or ""
    facts, prov = [], []
    for var, candidates in rules._index.items():
        if var not in fields:
            continue
        value = fields[var]
        fired = [r for r in candidates if r.fires(value, fields, rules.nonresponse_codes)]
        plain = [r for r in fired if not r.neutral]
        if len(plain) > 1:
            raise TranslationError(var, plain[0].rule_id,
                                   f"rules {[r.rule_id for r in plain]} all fire for {value!r}")
        chosen = plain[0] if plain else (fired[0] if fired else None)
        if chosen is None and value is not None:
            chosen = next((r for r in candidates if r.matcher.kind == "otherwise"
                           and all_hold(r.context_guards, fields)), None)
        if chosen is None:
            continue
        facts.append(_render(chosen.template, chosen, value, fields))
        keys = tuple(_render(k, chosen, value, fields) for k in chosen.keys)
        prov.append(FactProvenance(var, value, chosen.rule_id, chosen.source, chosen.neutral, keys))
    return AtomicFactList(pid, tuple(facts), tuple(prov))


def contains_term(text: str, term: str) -> bool:
    """Case-insensitive whole-word match."""
    return re.search(rf"(?<![A-Za-z]){re.escape(term)}(?![A-Za-z])", text, re.IGNORECASE) is not None


def contains_key(text: str, key: str) -> bool:
    """Coverage match: any ``|`` alternative, word-aligned on the left.

    Alphabetic keys may be followed by a suffix ("vehicle" covers "vehicles");
    keys ending in a digit must end at a non-digit.
    """
    for alt in key.split("|"):
        alt = alt.strip()
        if not alt:
            continue
        tail = r"(?![0-9])" if alt[-1].isdigit() else ""
        if re.search(rf"(?<![A-Za-z0-9]){re.escape(alt)}{tail}", text, re.IGNORECASE):
            return True
    return False


def forbidden_terms_in(fact: str, rule: TranslationRule, rules: RuleSet) -> list[str]:
    terms = rule.forbidden or rules.forbidden
    return [t for t in terms if contains_term(fact, t)]


# --------------------------------------------------------------------------


@dataclass
class CoverageReport:
    missing_variables: list = field(default_factory=list)
    overlaps: list = field(default_factory=list)  # (variable, rule_a, rule_b)
    unresolvable: list = field(default_factory=list)  # (rule_id, placeholder)
    uncovered_codes: list = field(default_factory=list)  # (variable, code)

    @property
    def ok(self) -> bool:
        return not (self.missing_variables or self.overlaps or self.unresolvable)


def validate_rule_set(rules: RuleSet, schema: Schema, variables=None) -> CoverageReport:
    """Report gaps, overlapping matchers, and unresolvable placeholders.

    ``variables`` restricts the coverage check (default: every schema variable
    that has rules or is a person/household attribute named in the rules).
    """
    report = CoverageReport()
    wanted = list(variables) if variables is not None else list(schema.variables)
    ruled = set(rules.variables)
    report.missing_variables = [v for v in wanted if v not in ruled]

    for var in rules.variables:
        rs = [r for r in rules.for_variable(var) if not r.neutral]
        for i, a in enumerate(rs):
            for b in rs[i + 1:]:
                if _matchers_overlap(a.matcher, b.matcher) and jointly_satisfiable(
                        a.context_guards, b.context_guards):
                    report.overlaps.append((var, a.rule_id, b.rule_id))

    for r in rules.rules:
        for name in r.placeholders():
            if name in ("label", "key", "value"):
                continue
            if name not in schema.variables:
                report.unresolvable.append((r.rule_id, name))

    for var in rules.variables:
        scheme = schema.variables.get(var)
        if scheme is None or not scheme.enumerated:
            continue
        rs = rules.for_variable(var)
        if any(r.matcher.kind in ("otherwise", "any") for r in rs):
            continue
        for code in list(scheme.codes) + list(scheme.skip_codes):
            if not any(r.matcher.matches(code, rules.nonresponse_codes) for r in rs):
                report.uncovered_codes.append((var, code))
    return report


def _matchers_overlap(a: Matcher, b: Matcher) -> bool:
    kinds = {a.kind, b.kind}
    if kinds & {"otherwise", "missing"}:
        return a.kind == b.kind and a.kind == "missing"
    if "any" in kinds:
        return True
    if "nonresponse" in kinds:
        return a.kind == b.kind
    probes = a.probe() + b.probe()
    return any(a.matches(v, ()) and b.matches(v, ()) for v in probes)
