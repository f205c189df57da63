import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import NONRESPONSE, random_record
from pemant.errors import TranslationError
from pemant.survey import default_schema_path, load_schema
from pemant.translation import (
    contains_key,
    default_rules_path,
    forbidden_terms_in,
    format_value,
    load_rules,
    rules_from_dict,
    translate,
    validate_rule_set,
)

SCHEMA = load_schema(default_schema_path())
RULES = load_rules(default_rules_path())


def facts_for(**fields):
    return translate(fields, RULES, "p").facts


def test_age():
    assert facts_for(R_AGE_IMP=34) == ("I am 34 years old.",)


def test_zero_vehicles():
    assert facts_for(HHVEHCNT=0) == ("My household does not own any vehicles.",)


def test_relationship_nonresponse_is_generic():
    facts = translate({"R_RELAT": -7}, RULES, "p")
    assert facts.facts == ("I am a household member.",)
    assert facts.provenance[0].neutral
    for word in ("spouse", "child", "son", "daughter", "parent", "head"):
        assert word not in facts.facts[0].lower()


def test_sex_guard_switches_for_minors():
    assert facts_for(R_AGE_IMP=12, R_SEX_IMP=1)[1] == "I am a boy."
    assert facts_for(R_AGE_IMP=40, R_SEX_IMP=2)[1] == "I am a woman."


def test_son_requires_male_code():
    assert facts_for(R_RELAT=3, R_SEX_IMP=1)[-1] == "I am the son of the household head."
    assert facts_for(R_RELAT=3, R_SEX_IMP=2)[-1] == "I am the daughter of the household head."


def test_fact_order_follows_rule_file():
    f = translate({"URBRUR": 1, "HHVEHCNT": 2, "R_AGE_IMP": 50}, RULES, "p")
    assert [p.variable_name for p in f.provenance] == ["R_AGE_IMP", "HHVEHCNT", "URBRUR"]


def test_income_label():
    assert facts_for(HHFAMINC=7) == ("My household income is between $75,000 and $99,999.",)


def test_skip_code_emits_nothing():
    assert facts_for(GT1JBLWK=-1) == ()


def test_format_value():
    assert format_value(3) == "3"
    assert format_value(3.0) == "3"
    assert format_value(218.25) == "218.2"


def test_unresolvable_placeholder_raises():
    rules = rules_from_dict({"variables": [{"var": "X", "rules": [
        {"id": "x", "match": {"code": 1}, "template": "I am {R_AGE} years old."}]}]})
    with pytest.raises(TranslationError) as e:
        translate({"X": 1}, rules, "p")
    assert e.value.variable == "X" and e.value.rule_id == "x"


def test_two_plain_rules_firing_is_an_error():
    rules = rules_from_dict({"variables": [{"var": "X", "rules": [
        {"id": "a", "match": {"code": 1}, "template": "A."},
        {"id": "b", "match": {"range": [0, 5]}, "template": "B."}]}]})
    with pytest.raises(TranslationError):
        translate({"X": 1}, rules, "p")


def test_shipped_rules_validate():
    report = validate_rule_set(RULES, SCHEMA, variables=RULES.variables)
    assert report.ok
    assert report.missing_variables == []


def test_overlap_flagged():
    rules = rules_from_dict({"variables": [{"var": "WORKER", "rules": [
        {"id": "a", "match": {"code": 1}, "template": "A."},
        {"id": "b", "match": {"codes": [1, 2]}, "template": "B."}]}]})
    report = validate_rule_set(rules, SCHEMA, variables=["WORKER"])
    assert ("WORKER", "a", "b") in report.overlaps


def test_guarded_rules_do_not_overlap():
    report = validate_rule_set(RULES, SCHEMA, variables=RULES.variables)
    assert not any(v == "R_SEX_IMP" for v, _, _ in report.overlaps)


def test_unresolvable_reported():
    rules = rules_from_dict({"variables": [{"var": "WORKER", "rules": [
        {"id": "a", "match": {"code": 1}, "template": "I am {R_AGE}."}]}]})
    report = validate_rule_set(rules, SCHEMA, variables=["WORKER"])
    assert report.unresolvable == [("a", "R_AGE")]
    assert not report.ok


def test_missing_variable_reported():
    rules = rules_from_dict({"variables": [{"var": "WORKER", "rules": [
        {"id": "a", "match": {"code": 1}, "template": "A."}]}]})
    assert validate_rule_set(rules, SCHEMA, variables=["WORKER", "DRIVER"]).missing_variables == ["DRIVER"]


def test_contains_key():
    assert contains_key("My household owns 2 vehicles", "vehicle|car")
    assert contains_key("I am 34 years old", "34")
    assert not contains_key("I am 345 years old", "34")
    assert not contains_key("we saw a scar", "car")


def test_every_variable_has_a_nonresponse_descriptor():
    for var in RULES.variables:
        for code in NONRESPONSE:
            f = translate({"R_AGE_IMP": 30, var: code}, RULES, "p")
            prov = [p for p in f.provenance if p.variable_name == var]
            assert prov and prov[0].neutral, (var, code)


@settings(max_examples=300)
@given(st.integers(0, 2 ** 32))
def test_translation_is_deterministic_and_neutral(seed):
    rec = random_record(random.Random(seed), RULES, SCHEMA)
    a = translate(rec, RULES, "p")
    b = translate(dict(rec), RULES, "p")
    assert a.to_json() == b.to_json()
    rule_by_id = {r.rule_id: r for r in RULES.rules}
    for fact, prov in zip(a.facts, a.provenance):
        if prov.raw_code in NONRESPONSE:
            assert prov.neutral
            assert forbidden_terms_in(fact, rule_by_id[prov.rule_id], RULES) == []
    # at most one fact per variable
    names = [p.variable_name for p in a.provenance]
    assert len(names) == len(set(names))
