"""Historical behavioral anchors: mean trip rates from an earlier survey cycle."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import yaml

from .errors import AnchorLeakageError, ConfigError

SEGMENTS = ("global_mean", "worker", "non_worker", "student", "senior_65plus", "zero_vehicle_household")
SIZE_CLASSES = ("1", "2", "3", "4+")
VEHICLE_CLASSES = ("0", "1", "2+")
WORKER_CLASSES = ("0", "1", "2+")


@dataclass(frozen=True)
class IndividualAnchorTable:
    source_cycle_label: str
    values: dict  # segment -> trips/person/day

    def __post_init__(self):
        if not self.values:
            raise ConfigError("individual anchor table is empty")
        if "global_mean" not in self.values:
            raise ConfigError("individual anchor table lacks global_mean")
        for seg, v in self.values.items():
            if seg not in SEGMENTS:
                raise ConfigError(f"unknown anchor segment {seg!r}")
            if not v > 0:
                raise ConfigError(f"anchor {seg} must be positive, got {v}")


@dataclass(frozen=True)
class HouseholdAnchorTable:
    source_cycle_label: str
    values: dict  # (size_class, vehicle_class, worker_class) -> trips/household/day

    def __post_init__(self):
        for key, v in self.values.items():
            s, veh, w = key
            if s not in SIZE_CLASSES or veh not in VEHICLE_CLASSES or w not in WORKER_CLASSES:
                raise ConfigError(f"bad household anchor bin {key!r}")
            if not v > 0:
                raise ConfigError(f"anchor {key} must be positive, got {v}")


@dataclass(frozen=True)
class AnchorSource:
    name: str
    source_cycle: str
    target_cycle: str
    individual: IndividualAnchorTable
    household: HouseholdAnchorTable


class Anchor(NamedTuple):
    value: float
    label: str  # matched segment or bin
    fallback: bool = False


def parse_bin(key: str) -> tuple:
    parts = tuple(p.strip() for p in str(key).split("/"))
    if len(parts) != 3:
        raise ConfigError(f"household bin {key!r} is not size/vehicles/workers")
    return parts


def bin_label(key: tuple) -> str:
    return "/".join(key)


def load_anchor_sources(path: str | Path) -> dict[str, AnchorSource]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"anchor file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    sources = {}
    for name, spec in (raw.get("sources") or {}).items():
        cycle = str(spec["source_cycle"])
        sources[name] = AnchorSource(
            name=name,
            source_cycle=cycle,
            target_cycle=str(spec.get("target_cycle", "")),
            individual=IndividualAnchorTable(cycle, dict(spec.get("individual") or {})),
            household=HouseholdAnchorTable(
                cycle, {parse_bin(k): v for k, v in (spec.get("household") or {}).items()}
            ),
        )
    if not sources:
        raise ConfigError(f"no anchor sources in {path}")
    return sources


def default_anchor_path() -> Path:
    return Path(__file__).parent / "data" / "anchors.yaml"


def lookup_individual(traits: Mapping, table: IndividualAnchorTable) -> Anchor:
    """Most specific segment by fixed precedence.

    zero-vehicle household > senior (65+) > worker > student > non-worker > global mean.
    ``traits`` keys: is_worker, is_student, age, hh_vehicles; absent or None means unknown.
    """
    v = table.values
    checks = (
        ("zero_vehicle_household", traits.get("hh_vehicles") == 0),
        ("senior_65plus", (traits.get("age") or 0) >= 65),
        ("worker", traits.get("is_worker") is True),
        ("student", traits.get("is_student") is True),
        ("non_worker", traits.get("is_worker") is False),
    )
    for seg, applies in checks:
        if applies and seg in v:
            return Anchor(v[seg], seg)
    return Anchor(v["global_mean"], "global_mean")


def household_bin(size: int, vehicles: int, workers: int) -> tuple:
    s = "4+" if size >= 4 else str(max(size, 1))
    veh = "2+" if vehicles >= 2 else str(max(vehicles, 0))
    w = "2+" if workers >= 2 else str(max(workers, 0))
    return (s, veh, w)


def lookup_household(size: int, vehicles: int, workers: int, source: AnchorSource) -> Anchor:
    """Binned household rate; unlisted bins fall back to global mean x household size."""
    key = household_bin(size, vehicles, workers)
    if key in source.household.values:
        return Anchor(source.household.values[key], bin_label(key))
    return Anchor(source.individual.values["global_mean"] * max(size, 1), bin_label(key), True)


def _cycle_key(label: str):
    s = str(label).strip()
    return (0, int(s)) if s.isdigit() else (1, s)


def assert_no_leakage(source_cycle: str, target_cycle: str) -> None:
    """Raise unless the anchor's source cycle strictly precedes the target cycle."""
    a, b = _cycle_key(source_cycle), _cycle_key(target_cycle)
    if a[0] != b[0]:
        raise AnchorLeakageError(str(source_cycle), str(target_cycle))
    if not a < b:
        raise AnchorLeakageError(str(source_cycle), str(target_cycle))


# --------------------------------------------------------------------------
# recomputing tables from a prior cycle's records


def derive_household_table(rows: Iterable[tuple], cycle_label: str) -> HouseholdAnchorTable:
    """Per-bin mean of observed household trips. ``rows``: (size, vehicles, workers, trips)."""
    sums: dict[tuple, list] = {}
    for size, veh, wrk, trips in rows:
        if trips is None:
            continue
        acc = sums.setdefault(household_bin(size, veh, wrk), [0.0, 0])
        acc[0] += trips
        acc[1] += 1
    return HouseholdAnchorTable(
        cycle_label, {k: s / n for k, (s, n) in sums.items() if n and s > 0}
    )


def derive_individual_table(rows: Iterable[tuple], cycle_label: str) -> IndividualAnchorTable:
    """Segment means. ``rows``: (traits mapping, trips). Segments are not exclusive here:
    a person counts toward every segment whose condition holds, as in a cross-tab."""
    acc: dict[str, list] = {s: [0.0, 0] for s in SEGMENTS}
    for traits, trips in rows:
        if trips is None:
            continue
        flags = {
            "global_mean": True,
            "worker": traits.get("is_worker") is True,
            "non_worker": traits.get("is_worker") is False,
            "student": traits.get("is_student") is True,
            "senior_65plus": (traits.get("age") or 0) >= 65,
            "zero_vehicle_household": traits.get("hh_vehicles") == 0,
        }
        for seg, on in flags.items():
            if on:
                acc[seg][0] += trips
                acc[seg][1] += 1
    values = {s: t / n for s, (t, n) in acc.items() if n and t > 0}
    return IndividualAnchorTable(cycle_label, values)


@dataclass
class AnchorStore:
    """Anchor source bound to one prediction target, checked for temporal leakage."""

    source: AnchorSource
    target_cycle: str = field(default="")

    def __post_init__(self):
        assert_no_leakage(self.source.source_cycle, self.target_cycle or self.source.target_cycle)

    def individual(self, traits: Mapping) -> Anchor:
        return lookup_individual(traits, self.source.individual)

    def household(self, size: int, vehicles: int, workers: int) -> Anchor:
        return lookup_household(size, vehicles, workers, self.source)
