"""Survey ingest: schema loading, person/household records, cleaning, aggregation."""

from __future__ import annotations

import csv
import io
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

import yaml

from .errors import (
    ConfigError,
    DegenerateDatasetError,
    ReferentialIntegrityError,
    RowParseError,
)

VALUE_CLASSES = ("binary", "frequency", "income_bracket", "free_numeric", "categorical")
MEDIAN_CLASSES = ("free_numeric", "frequency", "income_bracket")

# test fraction per survey scale
SPLIT_PRESETS = {"national": 0.10, "regional": 0.20}


@dataclass(frozen=True)
class CodingScheme:
    variable_name: str
    value_class: str
    codes: dict = field(default_factory=dict)
    skip_codes: dict = field(default_factory=dict)
    level: str = "person"

    @property
    def enumerated(self) -> bool:
        return bool(self.codes)

    def label(self, code) -> str:
        if code in self.codes:
            return self.codes[code]
        if code in self.skip_codes:
            return self.skip_codes[code]
        raise KeyError(f"{self.variable_name}: no label for code {code!r}")

    def is_valid(self, value) -> bool:
        """Valid code, documented skip code, or missing."""
        if value is None or not self.enumerated:
            return True
        return value in self.codes or value in self.skip_codes


@dataclass(frozen=True)
class Schema:
    dataset: str
    person_id: str
    household_id: str
    label: str | None
    variables: dict
    missing_tokens: tuple = ("",)
    nonresponse_codes: frozenset = frozenset()
    income: dict = field(default_factory=dict)
    location: dict = field(default_factory=dict)
    aggregates: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> CodingScheme:
        return self.variables[name]

    def __contains__(self, name: str) -> bool:
        return name in self.variables

    def income_bracket(self, raw):
        if raw is None:
            return None
        brackets = self.income.get("brackets") or {}
        return brackets.get(raw, raw)

    def income_label(self, bracket) -> str:
        var = self.income.get("bracket_variable")
        if bracket is None or var not in self.variables:
            return "unknown"
        try:
            return self.variables[var].label(bracket)
        except KeyError:
            return "unknown"

    def location_class(self, raw) -> str:
        classes = self.location.get("classes") or {}
        return classes.get(raw, "unknown")

    def is_nonresponse(self, variable: str, code) -> bool:
        scheme = self.variables.get(variable)
        return (
            code is not None
            and code in self.nonresponse_codes
            and (scheme is None or code not in scheme.codes)
        )


def load_schema(path: str | Path) -> Schema:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return schema_from_dict(raw)


def schema_from_dict(raw: Mapping[str, Any]) -> Schema:
    variables = {}
    for name, spec in (raw.get("variables") or {}).items():
        vclass = spec.get("class", "categorical")
        if vclass not in VALUE_CLASSES:
            raise ConfigError(f"{name}: unknown value class {vclass!r}")
        codes = dict(spec.get("codes") or {})
        if any(not str(v).strip() for v in codes.values()):
            raise ConfigError(f"{name}: empty code label")
        variables[name] = CodingScheme(
            variable_name=name,
            value_class=vclass,
            codes=codes,
            skip_codes=dict(spec.get("skip") or {}),
            level=spec.get("level", "person"),
        )
    for key in ("person_id", "household_id"):
        if key not in raw:
            raise ConfigError(f"schema missing {key!r}")
    return Schema(
        dataset=raw.get("dataset", "unnamed"),
        person_id=raw["person_id"],
        household_id=raw["household_id"],
        label=raw.get("label"),
        variables=variables,
        missing_tokens=tuple(raw.get("missing_tokens") or ("",)),
        nonresponse_codes=frozenset(raw.get("nonresponse_codes") or ()),
        income=dict(raw.get("income") or {}),
        location=dict(raw.get("location") or {}),
        aggregates=dict(raw.get("aggregates") or {}),
    )


def default_schema_path() -> Path:
    return Path(__file__).parent / "data" / "nhts_schema.yaml"


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    household_id: str
    coded_fields: dict

    def get(self, name, default=None):
        return self.coded_fields.get(name, default)


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    member_ids: tuple
    hh_size: int | None
    vehicle_count: int | None
    driver_count: int | None
    income_bracket: Any
    location_class: str
    observed_total_trips: int | None
    coded_fields: dict

    @classmethod
    def build(cls, household_id: str, member_ids: Sequence[str], fields: Mapping, schema: Schema):
        label = fields.get(schema.label) if schema.label else None
        inc_var = schema.income.get("variable")
        return cls(
            household_id=household_id,
            member_ids=tuple(member_ids),
            hh_size=_as_count(fields.get("HHSIZE")),
            vehicle_count=_as_count(fields.get("HHVEHCNT")),
            driver_count=_as_count(fields.get("DRVRCNT")),
            income_bracket=schema.income_bracket(fields.get(inc_var)) if inc_var else None,
            location_class=schema.location_class(fields.get(schema.location.get("variable"))),
            observed_total_trips=_as_count(label),
            coded_fields=dict(fields),
        )

    def get(self, name, default=None):
        return self.coded_fields.get(name, default)


def _as_count(v):
    if isinstance(v, bool) or v is None:
        return None
    if isinstance(v, (int, float)) and v >= 0 and float(v).is_integer():
        return int(v)
    return None


def parse_cell(text: str, missing_tokens=("",)):
    """Coded value from a CSV cell: None for missing, else int, float, or the raw string."""
    t = text.strip()
    if t in missing_tokens:
        return None
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def _read_rows(source, name: str, delimiter: str):
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        stream = io.StringIO(source)
    elif isinstance(source, Path):
        stream = io.StringIO(source.read_text(encoding="utf-8"))
    else:
        stream = source
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise RowParseError(name, 0, "empty input, header row required") from None
    for i, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise RowParseError(name, i, f"expected {len(header)} columns, got {len(row)}")
        yield i, dict(zip(header, row))


def load_dataset(person_source, household_source, schema: Schema, delimiter: str = ","):
    """Parse person and household tables into records.

    Sources may be paths, text, bytes, or open text streams. Columns not named in
    the schema are carried through in ``coded_fields``.
    """
    households_fields: dict[str, dict] = {}
    for i, row in _read_rows(household_source, "household", delimiter):
        hid = row.get(schema.household_id, "").strip()
        if not hid:
            raise RowParseError("household", i, f"empty {schema.household_id}")
        if hid in households_fields:
            raise RowParseError("household", i, f"duplicate household {hid}")
        households_fields[hid] = {
            k: parse_cell(v, schema.missing_tokens) for k, v in row.items() if k != schema.household_id
        }

    persons: list[PersonRecord] = []
    members: dict[str, list[str]] = {h: [] for h in households_fields}
    seen: set[str] = set()
    for i, row in _read_rows(person_source, "person", delimiter):
        pid = row.get(schema.person_id, "").strip()
        hid = row.get(schema.household_id, "").strip()
        if not hid:
            raise RowParseError("person", i, f"empty {schema.household_id}")
        # NHTS person numbers are only unique within a household
        key = f"{hid}:{pid}" if pid else ""
        if not pid or key in seen:
            raise RowParseError("person", i, f"missing or duplicate person id {pid!r}")
        if hid not in households_fields:
            raise ReferentialIntegrityError(f"person row {i} references unknown household {hid!r}")
        seen.add(key)
        fields = {
            k: parse_cell(v, schema.missing_tokens)
            for k, v in row.items()
            if k not in (schema.person_id, schema.household_id)
        }
        persons.append(PersonRecord(person_id=key, household_id=hid, coded_fields=fields))
        members[hid].append(key)

    households = [
        HouseholdRecord.build(hid, members[hid], fields, schema)
        for hid, fields in households_fields.items()
    ]
    return persons, households


def merged_fields(person: PersonRecord, household: HouseholdRecord | None) -> dict:
    """Household fields overlaid by person fields (person values win)."""
    out = dict(household.coded_fields) if household is not None else {}
    out.update(person.coded_fields)
    return out


# --------------------------------------------------------------------------
# cleaning


@dataclass(frozen=True)
class RecodeRule:
    var: str
    to: Any
    when: str = "codes"  # "negative" or "codes"
    codes: tuple = ()

    def applies(self, value) -> bool:
        if value is None:
            return False
        if self.when == "negative":
            return isinstance(value, (int, float)) and value < 0
        return value in self.codes


@dataclass(frozen=True)
class CleaningPolicy:
    critical: tuple = ()
    recodes: tuple = ()
    require_complete_households: bool = True

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CleaningPolicy":
        recodes = []
        for r in raw.get("recodes") or ():
            when = r.get("when", "codes")
            if when not in ("negative", "codes"):
                raise ConfigError(f"recode for {r.get('var')}: unknown 'when' {when!r}")
            recodes.append(RecodeRule(r["var"], r["to"], when, tuple(r.get("codes") or ())))
        return cls(
            critical=tuple(raw.get("critical") or ()),
            recodes=tuple(recodes),
            require_complete_households=bool(raw.get("require_complete_households", True)),
        )


def load_cleaning_policy(path: str | Path) -> CleaningPolicy:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"cleaning policy not found: {path}")
    return CleaningPolicy.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")) or {})


@dataclass(frozen=True)
class DropEntry:
    household_id: str
    variable: str
    person_id: str | None
    reason: str

    def to_json(self) -> str:
        return json.dumps(
            {"household_id": self.household_id, "variable": self.variable,
             "person_id": self.person_id, "reason": self.reason},
            sort_keys=True,
        )


class CleaningResult(NamedTuple):
    persons: list
    households: list
    drop_report: list
    stats: dict


def write_drop_report(entries: Iterable[DropEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")


def _critical_ok(value, scheme: CodingScheme | None) -> bool:
    if value is None or isinstance(value, str):
        return False
    if scheme is not None and scheme.enumerated:
        return value in scheme.codes
    return value >= 0


def _recode(fields: dict, recodes, schema: Schema) -> dict:
    out = dict(fields)
    for name, value in fields.items():
        for rule in recodes:
            if rule.var == name and rule.applies(value):
                out[name] = rule.to
                break
        scheme = schema.variables.get(name)
        if scheme is not None and not scheme.is_valid(out[name]):
            out[name] = None
    return out


def lower_median(values):
    s = sorted(values)
    n = len(s)
    if n % 2:
        return s[n // 2]
    lo, hi = s[n // 2 - 1], s[n // 2]
    if all(isinstance(v, int) for v in s):
        return lo
    return (lo + hi) / 2


def mode(values):
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def imputation_stats(persons, households, schema: Schema) -> dict:
    """Median (numeric-like classes) or mode (binary/categorical) per schema variable."""
    pools: dict[str, list] = {}
    for rec in list(persons) + list(households):
        for name, value in rec.coded_fields.items():
            scheme = schema.variables.get(name)
            if scheme is None or value is None or isinstance(value, str):
                continue
            if value in scheme.skip_codes or not scheme.is_valid(value):
                continue
            pools.setdefault(name, []).append(value)
    stats = {}
    for name, vals in sorted(pools.items()):
        scheme = schema.variables[name]
        stats[name] = lower_median(vals) if scheme.value_class in MEDIAN_CLASSES else mode(vals)
    return stats


def _impute(fields: dict, stats: Mapping, schema: Schema) -> dict:
    out = dict(fields)
    for name, value in fields.items():
        if value is None and name in schema.variables and name in stats:
            out[name] = stats[name]
    return out


def clean_households(persons, households, policy: CleaningPolicy, schema: Schema,
                     stats: Mapping | None = None) -> CleaningResult:
    """Recode, drop incomplete households whole, then impute residual missing values.

    ``stats`` freezes the imputation values (e.g. computed on the training split);
    when omitted they are computed from the surviving input.
    """
    by_hh: dict[str, list[PersonRecord]] = {}
    for p in persons:
        by_hh.setdefault(p.household_id, []).append(p)

    drops: list[DropEntry] = []
    kept_p: list[PersonRecord] = []
    kept_h: list[HouseholdRecord] = []
    for hh in households:
        members = [replace(p, coded_fields=_recode(p.coded_fields, policy.recodes, schema))
                   for p in by_hh.get(hh.household_id, [])]
        hfields = _recode(hh.coded_fields, policy.recodes, schema)
        entry = _first_problem(hh, hfields, members, policy, schema)
        if entry is not None:
            drops.append(entry)
            continue
        kept_p.extend(members)
        kept_h.append(HouseholdRecord.build(hh.household_id, hh.member_ids, hfields, schema))

    if not kept_h:
        raise DegenerateDatasetError("no household survived cleaning")

    if stats is None:
        stats = imputation_stats(kept_p, kept_h, schema)
    kept_p = [replace(p, coded_fields=_impute(p.coded_fields, stats, schema)) for p in kept_p]
    kept_h = [
        HouseholdRecord.build(h.household_id, h.member_ids, _impute(h.coded_fields, stats, schema), schema)
        for h in kept_h
    ]
    return CleaningResult(kept_p, kept_h, drops, dict(stats))


def _first_problem(hh, hfields, members, policy, schema) -> DropEntry | None:
    hid = hh.household_id
    if not members:
        return DropEntry(hid, schema.person_id, None, "household has no person records")
    for var in policy.critical:
        scheme = schema.variables.get(var)
        for m in members:
            if var in m.coded_fields:
                if not _critical_ok(m.coded_fields[var], scheme):
                    return DropEntry(hid, var, m.person_id, "invalid or missing critical value")
            elif var in hfields:
                if not _critical_ok(hfields[var], scheme):
                    return DropEntry(hid, var, None, "invalid or missing critical value")
                break
            else:
                return DropEntry(hid, var, m.person_id, "critical variable absent")
    if policy.require_complete_households:
        size = _as_count(hfields.get("HHSIZE"))
        if size is not None and size != len(members):
            return DropEntry(hid, "HHSIZE", None, f"HHSIZE={size} but {len(members)} person records")
        drivers = _as_count(hfields.get("DRVRCNT"))
        if drivers is not None and drivers > len(members):
            return DropEntry(hid, "DRVRCNT", None, "more drivers than members")
    return None


# --------------------------------------------------------------------------
# split and aggregation


def split_households(household_ids: Iterable[str], test_fraction: float, seed: int):
    """Seeded split of household ids into (train, test), both sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must be in (0, 1), got {test_fraction}")
    ids = sorted(set(household_ids))
    rng = random.Random(seed)
    rng.shuffle(ids)
    n_test = max(1, round(len(ids) * test_fraction)) if len(ids) > 1 else 0
    return sorted(ids[n_test:]), sorted(ids[:n_test])


def aggregate_household_features(household: HouseholdRecord, members: Sequence[PersonRecord],
                                 schema: Schema) -> dict:
    """Within-household shares and means from the schema's ``aggregates`` block.

    Household coded fields (except the trip label) pass through unchanged.
    """
    if not members:
        raise ValueError(f"household {household.household_id} has no members")
    n = len(members)
    out: dict[str, Any] = {
        k: v for k, v in household.coded_fields.items()
        if k != schema.label and isinstance(v, (int, float))
    }
    for name, spec in schema.aggregates.items():
        var = spec["var"]
        values = [m.coded_fields.get(var) for m in members]
        if spec.get("mean"):
            skip = schema.variables[var].skip_codes if var in schema.variables else {}
            obs = [v for v in values if isinstance(v, (int, float)) and v not in skip]
            out[name] = sum(obs) / len(obs) if obs else None
        elif "in" in spec:
            codes = set(spec["in"])
            out[name] = sum(1 for v in values if v in codes) / n
        elif "range" in spec:
            lo, hi = spec["range"]
            out[name] = sum(
                1 for v in values
                if isinstance(v, (int, float))
                and (lo is None or v >= lo) and (hi is None or v < hi)
            ) / n
        else:
            raise ConfigError(f"aggregate {name}: needs 'in', 'range' or 'mean'")
    return out
