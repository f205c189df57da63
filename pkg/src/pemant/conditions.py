"""Declarative field predicates shared by translation guards and marker rules.

A condition is a mapping such as ``{"var": "R_AGE_IMP", "op": "<", "value": 18}``.
A missing field satisfies only ``op: missing``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

from .errors import ConfigError

_OPS = {"<", "<=", ">", ">=", "==", "!=", "in", "not_in", "missing", "present"}


@dataclass(frozen=True)
class Condition:
    var: str
    op: str
    value: Any = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Condition":
        try:
            var, op = d["var"], d["op"]
        except KeyError as exc:
            raise ConfigError(f"condition missing key {exc}: {dict(d)}") from None
        if op not in _OPS:
            raise ConfigError(f"unknown condition operator {op!r}")
        value = d.get("value")
        if op in ("in", "not_in"):
            value = tuple(value or ())
        return cls(var, op, value)

    def holds(self, fields: Mapping[str, Any]) -> bool:
        x = fields.get(self.var)
        if self.op == "missing":
            return x is None
        if self.op == "present":
            return x is not None
        if x is None:
            return False
        return _compare(x, self.op, self.value)

    def as_dict(self) -> dict:
        d = {"var": self.var, "op": self.op}
        if self.op not in ("missing", "present"):
            d["value"] = list(self.value) if isinstance(self.value, tuple) else self.value
        return d


def _compare(x: Any, op: str, v: Any) -> bool:
    try:
        if op == "<":
            return x < v
        if op == "<=":
            return x <= v
        if op == ">":
            return x > v
        if op == ">=":
            return x >= v
        if op == "==":
            return x == v
        if op == "!=":
            return x != v
        if op == "in":
            return x in v
        if op == "not_in":
            return x not in v
    except TypeError:
        return False
    raise ConfigError(f"unknown condition operator {op!r}")


def all_hold(conditions, fields: Mapping[str, Any]) -> bool:
    return all(c.holds(fields) for c in conditions)


def probe_values(conditions) -> dict[str, list[Any]]:
    """Candidate values per variable that exercise every boundary in ``conditions``.

    Used to decide whether two guard sets can be satisfied at the same time.
    """
    probes: dict[str, list[Any]] = {}
    for c in conditions:
        vals = probes.setdefault(c.var, [None])
        consts = c.value if isinstance(c.value, tuple) else (c.value,)
        for k in consts:
            if k is None:
                continue
            vals.append(k)
            if isinstance(k, (int, float)) and not isinstance(k, bool):
                vals.extend([k - 1, k + 1, k - 1e-6, k + 1e-6])
    return probes


def jointly_satisfiable(a, b) -> bool:
    """True unless some shared variable has no probe value satisfying both guard sets."""
    a, b = list(a), list(b)
    probes = probe_values(a + b)
    for var, vals in probes.items():
        ca = [c for c in a if c.var == var]
        cb = [c for c in b if c.var == var]
        if not ca or not cb:
            continue
        if not any(all_hold(ca, {var: v}) and all_hold(cb, {var: v}) for v in vals):
            return False
    return True
