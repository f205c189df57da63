"""Synthetic NHTS-shaped person and household tables for tests and demos."""

from __future__ import annotations

import csv
import random
from pathlib import Path

PERSON_COLUMNS = (
    "HOUSEID", "PERSONID", "R_AGE_IMP", "R_SEX_IMP", "R_RELAT", "R_RACE", "EDUC", "WORKER", "STUDENT",
    "DRIVER", "MEDCOND", "BORNINUS", "GT1JBLWK", "OCCAT", "PHYACT", "LPACT", "PTUSED", "RIDESHARE",
    "SPHONE", "PC", "HEALTH", "PRICE", "PLACE",
)
HOUSEHOLD_COLUMNS = (
    "HOUSEID", "HHSIZE", "HHVEHCNT", "DRVRCNT", "WRKCOUNT", "HHFAMINC", "HOMEOWN", "URBRUR", "RAIL",
    "TRAVDAY", "CHILDREN", "YOUNGCHILD", "LIF_CYC", "GASPRICE", "MSASIZE", "HTPPOPDN", "HH_HISP", "CNTTDHH",
)
DENSITIES = (50, 300, 750, 1500, 3000, 7000, 17000, 30000)


def _clip(v, lo=1, hi=5):
    return max(lo, min(hi, v))


def _person(rng: random.Random, hid: str, pnum: int, age: int, relat: int, urban: bool, income: int,
            vehicles: int, nonresponse: float) -> dict:
    adult = age >= 18
    worker = int(adult and age < 67 and rng.random() < 0.7)
    student = int(5 <= age <= 24 and rng.random() < 0.85)
    driver = int(age >= 16 and rng.random() < (0.9 if vehicles else 0.4))
    medcond = int(age >= 50 and rng.random() < 0.2)
    row = {
        "HOUSEID": hid, "PERSONID": f"{pnum:02d}", "R_AGE_IMP": age, "R_SEX_IMP": rng.choice((1, 2)),
        "R_RELAT": relat, "R_RACE": rng.choice((1, 1, 1, 2, 3, 6, 97)),
        "EDUC": rng.choice((1, 2, 3, 4, 5)) if adult else -1,
        "WORKER": worker, "STUDENT": student, "DRIVER": driver, "MEDCOND": medcond,
        "BORNINUS": int(rng.random() < 0.85),
        "GT1JBLWK": int(rng.random() < 0.1) if worker else -1,
        "OCCAT": rng.choice((1, 2, 3, 4, 97)) if worker else -1,
        "PHYACT": rng.choice((1, 2, 3)),
        "LPACT": rng.randint(0, 7),
        "PTUSED": rng.randint(0, 12) if urban else rng.choice((0, 0, 0, 1)),
        "RIDESHARE": rng.choice((0, 0, 0, 1, 2, -9)),
        "SPHONE": _clip(5 - (age > 60) - (age > 75) + rng.choice((-1, 0, 0))),
        "PC": rng.randint(1, 5),
    }
    row["HEALTH"] = _clip(2 + (age >= 60) + medcond + rng.choice((-1, 0, 0, 1)))
    row["PRICE"] = _clip(1 + income // 3 + rng.choice((-1, 0, 1)))
    row["PLACE"] = _clip(2 + (not urban) + rng.choice((-1, 0, 1)))
    if rng.random() < nonresponse:
        row["R_RELAT"] = -7 if relat != 1 else relat
    if rng.random() < nonresponse:
        row["EDUC"] = -8
    if rng.random() < nonresponse:
        row["HEALTH"] = -9
    trips = 3.4 + 0.9 * worker + 0.3 * student - 0.5 * medcond - (1.2 if vehicles == 0 else 0.0)
    row["_trips"] = max(0, round(rng.gauss(trips, 1.6)))
    return row


def generate(n_households: int, seed: int = 0, nonresponse: float = 0.05) -> tuple[list, list]:
    """Coherent synthetic households (sizes 1-5) with person trip totals as the label."""
    rng = random.Random(seed)
    persons, households = [], []
    for h in range(n_households):
        hid = f"{30000001 + h}"
        size = rng.choice((1, 1, 2, 2, 2, 3, 3, 4, 5))
        urban = rng.random() < 0.75
        income = rng.randint(1, 11)
        vehicles = rng.choice((0, 1, 1, 2, 2, 3)) if size > 1 else rng.choice((0, 1, 1))
        head_age = rng.randint(22, 85)
        ages = [head_age]
        relats = [1]
        if size >= 2:
            ages.append(_clip(head_age + rng.randint(-6, 6), 18, 90))
            relats.append(2)
        for _ in range(size - len(ages)):
            if head_age < 65 or rng.random() < 0.5:
                ages.append(rng.randint(0, min(25, max(0, head_age - 18))))
                relats.append(3)
            else:
                lo = max(head_age + 18, 60)
                ages.append(rng.randint(lo, max(lo, 100)))
                relats.append(4)
        members = [_person(rng, hid, i + 1, a, r, urban, income, vehicles, nonresponse)
                   for i, (a, r) in enumerate(zip(ages, relats))]
        children = int(any(a < 18 for a in ages))
        young = int(any(a < 5 for a in ages))
        adults = sum(1 for a in ages if a >= 18)
        if children:
            lif = (3 if young else 5) if adults == 1 else (4 if young else 6)
        elif head_age >= 65:
            lif = 9 if adults == 1 else 10
        else:
            lif = 1 if adults == 1 else 2
        hh = {
            "HOUSEID": hid, "HHSIZE": size, "HHVEHCNT": vehicles,
            "DRVRCNT": sum(m["DRIVER"] for m in members), "WRKCOUNT": sum(m["WORKER"] for m in members),
            "HHFAMINC": income if rng.random() >= nonresponse else -7,
            "HOMEOWN": rng.choice((1, 1, 2, 97)), "URBRUR": 1 if urban else 2,
            "RAIL": rng.choice((1, 2)) if urban else 2, "TRAVDAY": rng.randint(1, 7),
            "CHILDREN": children, "YOUNGCHILD": young, "LIF_CYC": lif,
            "GASPRICE": round(rng.uniform(210, 300), 1), "MSASIZE": rng.randint(1, 5) if urban else 6,
            "HTPPOPDN": rng.choice(DENSITIES[3:] if urban else DENSITIES[:4]),
            "HH_HISP": rng.choice((1, 2, 2, 2)),
            "CNTTDHH": sum(m.pop("_trips") for m in members),
        }
        persons.extend(members)
        households.append(hh)
    return persons, households


def _write(rows, columns, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_fixture(out_dir: str | Path, n_households: int, seed: int = 0,
                  nonresponse: float = 0.05) -> tuple[Path, Path]:
    """Write ``persons.csv`` and ``households.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    persons, households = generate(n_households, seed, nonresponse)
    p, h = out / "persons.csv", out / "households.csv"
    _write(persons, PERSON_COLUMNS, p)
    _write(households, HOUSEHOLD_COLUMNS, h)
    return p, h
