import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import median
from pemant.errors import ConfigError, DegenerateDatasetError, ReferentialIntegrityError, RowParseError
from pemant.survey import (
    CleaningPolicy,
    aggregate_household_features,
    clean_households,
    default_schema_path,
    load_dataset,
    load_schema,
    lower_median,
    parse_cell,
    split_households,
)

SCHEMA = load_schema(default_schema_path())
POLICY = CleaningPolicy.from_dict({
    "critical": ["R_AGE_IMP", "HHVEHCNT"],
    "recodes": [{"var": "RIDESHARE", "when": "negative", "to": 0}],
})

P_HEAD = "HOUSEID,PERSONID,R_AGE_IMP,WORKER,LPACT,RIDESHARE,PTUSED\n"
H_HEAD = "HOUSEID,HHSIZE,HHVEHCNT,CNTTDHH\n"


def test_minimal_input():
    persons, households = load_dataset(P_HEAD + "1,01,34,1,2,0,0\n", H_HEAD + "1,1,1,4\n", SCHEMA)
    assert len(persons) == 1 and len(households) == 1
    assert persons[0].person_id == "1:01"
    assert households[0].observed_total_trips == 4
    assert households[0].member_ids == ("1:01",)


def test_two_member_household_loads():
    persons, households = load_dataset(P_HEAD + "1,01,34,1,2,0,0\n1,02,33,0,2,0,0\n", H_HEAD + "1,2,1,9\n",
                                       SCHEMA)
    assert len(persons) == 2 and households[0].hh_size == 2


def test_orphan_person():
    with pytest.raises(ReferentialIntegrityError):
        load_dataset(P_HEAD + "2,01,34,1,2,0,0\n", H_HEAD + "1,1,1,4\n", SCHEMA)


def test_wrong_column_count_names_row():
    with pytest.raises(RowParseError) as e:
        load_dataset(P_HEAD + "1,01,34,1,2,0,0\n1,02,34\n", H_HEAD + "1,2,1,4\n", SCHEMA)
    assert e.value.row_index == 2


def test_parse_cell():
    assert parse_cell("") is None
    assert parse_cell(" 7 ") == 7
    assert parse_cell("2.5") == 2.5
    assert parse_cell("abc") == "abc"


def test_bytes_and_custom_delimiter():
    p = (P_HEAD + "1,01,34,1,2,0,0\n").replace(",", ";").encode()
    h = (H_HEAD + "1,1,1,4\n").replace(",", ";").encode()
    persons, _ = load_dataset(p, h, SCHEMA, delimiter=";")
    assert persons[0].get("R_AGE_IMP") == 34


def _load(person_rows, household_rows):
    return load_dataset(P_HEAD + "".join(person_rows), H_HEAD + "".join(household_rows), SCHEMA)


def test_household_with_missing_critical_removed_whole():
    persons, households = _load(["1,01,34,1,2,0,0\n", "1,02,30,1,2,0,0\n", "2,01,50,0,2,0,0\n"],
                                ["1,2,,4\n", "2,1,1,3\n"])
    res = clean_households(persons, households, POLICY, SCHEMA)
    assert [h.household_id for h in res.households] == ["2"]
    assert all(p.household_id == "2" for p in res.persons)
    assert res.drop_report[0].household_id == "1"
    assert res.drop_report[0].variable == "HHVEHCNT"
    assert json.loads(res.drop_report[0].to_json())["household_id"] == "1"


def test_clean_identity_when_nothing_missing():
    persons, households = _load(["1,01,34,1,2,0,0\n", "2,01,50,0,3,1,4\n"], ["1,1,1,4\n", "2,1,0,3\n"])
    res = clean_households(persons, households, POLICY, SCHEMA)
    assert res.drop_report == []
    assert [p.coded_fields for p in res.persons] == [p.coded_fields for p in persons]
    assert [h.coded_fields for h in res.households] == [h.coded_fields for h in households]


def test_median_imputation_lpact():
    rows = [f"{i},01,40,1,{v},0,0\n" for i, v in enumerate(["1", "2", "", "2", "5"], start=1)]
    persons, households = _load(rows, [f"{i},1,1,3\n" for i in range(1, 6)])
    res = clean_households(persons, households, POLICY, SCHEMA)
    assert res.stats["LPACT"] == 2
    assert [p.get("LPACT") for p in res.persons] == [1, 2, 2, 2, 5]


def test_negative_rideshare_recoded():
    persons, households = _load(["1,01,34,1,2,-9,0\n"], ["1,1,1,4\n"])
    res = clean_households(persons, households, POLICY, SCHEMA)
    assert res.persons[0].get("RIDESHARE") == 0


def test_degenerate():
    persons, households = _load(["1,01,,1,2,0,0\n"], ["1,1,1,4\n"])
    with pytest.raises(DegenerateDatasetError):
        clean_households(persons, households, POLICY, SCHEMA)


def test_size_mismatch_dropped():
    persons, households = _load(["1,01,34,1,2,0,0\n", "2,01,34,1,2,0,0\n"], ["1,2,1,4\n", "2,1,1,4\n"])
    res = clean_households(persons, households, POLICY, SCHEMA)
    assert [h.household_id for h in res.households] == ["2"]
    assert res.drop_report[0].variable == "HHSIZE"


def test_frozen_stats_are_used():
    persons, households = _load(["1,01,34,1,,0,0\n"], ["1,1,1,4\n"])
    res = clean_households(persons, households, POLICY, SCHEMA, stats={"LPACT": 6})
    assert res.persons[0].get("LPACT") == 6


@given(st.lists(st.integers(0, 30), min_size=1, max_size=30))
def test_lower_median_is_an_observed_middle_value(values):
    m = lower_median(values)
    assert m in values
    assert m <= median(values)
    s = sorted(values)
    assert s[(len(s) - 1) // 2] == m


def test_aggregates():
    persons, households = _load(["1,01,34,1,2,0,0\n", "1,02,30,0,2,0,4\n"], ["1,2,1,4\n"])
    feats = aggregate_household_features(households[0], persons, SCHEMA)
    assert feats["WORKER_PCT"] == 0.5
    assert feats["PTUSED_MEAN"] == 2.0
    assert "CNTTDHH" not in feats


def test_age_bands_partition():
    persons, households = _load(["1,01,70,0,2,0,0\n", "1,02,66,0,2,0,0\n"], ["1,2,1,4\n"])
    feats = aggregate_household_features(households[0], persons, SCHEMA)
    assert feats["AGE_65P_PCT"] == 1.0
    bands = ("AGE_U18_PCT", "AGE_18_35_PCT", "AGE_35_54_PCT", "AGE_55_64_PCT")
    assert all(feats[b] == 0 for b in bands)


def test_aggregate_needs_members():
    _, households = _load([], ["1,1,1,4\n"])
    with pytest.raises(ValueError):
        aggregate_household_features(households[0], [], SCHEMA)


@settings(max_examples=50)
@given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 10 ** 6))
def test_split_is_partition_and_deterministic(n, frac, seed):
    ids = [str(i) for i in range(n)]
    train, test = split_households(ids, frac, seed)
    assert sorted(train + test) == sorted(ids)
    assert not set(train) & set(test)
    assert (train, test) == split_households(list(reversed(ids)), frac, seed)


def test_split_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        split_households(["1", "2"], 1.0, 0)
