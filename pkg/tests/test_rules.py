import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labcdss.rules import (
    AgeCondition,
    DuplicateRuleError,
    GenderCondition,
    LabCondition,
    ParseError,
    RuleBase,
    UnitMismatchError,
    evaluate,
    lint,
    lint_tsv,
    parse_rulebase,
    pretty_print,
    recommend_followup,
)

from oracles import fired_rule_ids, random_panel, random_rulebase


def test_parse_basic_rule():
    rb = parse_rulebase(
        'RULE t2dm_a1c CONFIRMS E11 "T2DM" WHEN lab(hba1c) >= 6.5 % AND age >= 18'
    )
    assert len(rb.rules) == 1
    rule = rb.rules[0]
    assert rule.rule_id == "t2dm_a1c"
    assert rule.icd10 == "E11"
    assert rule.display_name == "T2DM"
    assert rule.conditions == (
        LabCondition("hba1c", ">=", 6.5, "%"),
        AgeCondition(">=", 18.0),
    )


def test_parse_gender_and_comments():
    rb = parse_rulebase(
        """# leading comment
        RULE r1 CONFIRMS D64 WHEN    # trailing comment
            lab(hemoglobin) < 12 g/dL
            AND gender == F
        """
    )
    assert rb.rules[0].conditions[1] == GenderCondition("==", "F")
    assert rb.rules[0].display_name is None


def test_parse_empty_conjunction_rejected():
    with pytest.raises(ParseError) as err:
        parse_rulebase("RULE x CONFIRMS E11 WHEN")
    assert "condition" in str(err.value)
    assert err.value.line == 1


def test_parse_error_carries_position():
    with pytest.raises(ParseError) as err:
        parse_rulebase("RULE x CONFIRMS E11 WHEN\nlab(hba1c) >= %")
    assert err.value.line == 2


def test_parse_missing_unit():
    with pytest.raises(ParseError, match="unit"):
        parse_rulebase("RULE x CONFIRMS E11 WHEN lab(hba1c) >= 6.5 AND age >= 18")


def test_parse_gender_comparator_restricted():
    with pytest.raises(ParseError, match="== or !="):
        parse_rulebase("RULE x CONFIRMS E11 WHEN gender > F")


def test_duplicate_rule_id():
    text = (
        "RULE a CONFIRMS E11 WHEN age >= 18\n"
        "RULE a CONFIRMS E11 WHEN age >= 21\n"
    )
    with pytest.raises(DuplicateRuleError):
        parse_rulebase(text)


def test_empty_input_rejected():
    with pytest.raises(ParseError):
        parse_rulebase("# nothing but comments\n")


def test_source_hash_tracks_text():
    a = parse_rulebase("RULE a CONFIRMS E11 WHEN age >= 18")
    b = parse_rulebase("RULE a CONFIRMS E11 WHEN age >= 18 # different text")
    assert a == b  # structural equality ignores the hash
    assert a.source_hash != b.source_hash


# -- round trip -------------------------------------------------------------------


def test_round_trip_seed_rules(seed_rulebase):
    assert parse_rulebase(pretty_print(seed_rulebase)) == seed_rulebase


def test_round_trip_generated():
    rng = np.random.default_rng(42)
    for i in range(100):
        rb = random_rulebase(rng, tag=f"x{i}_")
        assert parse_rulebase(pretty_print(rb)) == rb


def test_round_trip_59_rule_base():
    rng = np.random.default_rng(59)
    rules = []
    for i in range(59):
        rules.extend(random_rulebase(rng, max_rules=1, tag=f"n{i}_").rules)
    rb = RuleBase(tuple(rules))
    assert len(rb.rules) == 59
    assert parse_rulebase(pretty_print(rb)) == rb


@st.composite
def rulebases(draw):
    seed = draw(st.integers(min_value=0, max_value=2**31 - 1))
    return random_rulebase(np.random.default_rng(seed))


@settings(max_examples=50, deadline=None)
@given(rulebases())
def test_round_trip_property(rb):
    assert parse_rulebase(pretty_print(rb)) == rb


# -- evaluation --------------------------------------------------------------------


T2DM_RULE = parse_rulebase("RULE t2dm CONFIRMS E11 WHEN lab(hba1c) >= 6.5 %")


def test_evaluate_fires_on_match():
    confirmed = evaluate(T2DM_RULE, {"hba1c": 7.1})
    assert len(confirmed) == 1
    assert confirmed[0].icd10 == "E11"
    assert confirmed[0].matched[0][1] == 7.1


def test_evaluate_missing_never_satisfies():
    assert evaluate(T2DM_RULE, {}) == []
    assert evaluate(T2DM_RULE, {"glucose": 200.0}) == []
    assert evaluate(T2DM_RULE, {"hba1c": float("nan")}) == []


def test_evaluate_negated_comparator_still_requires_value():
    rb = parse_rulebase("RULE r CONFIRMS E11 WHEN lab(hba1c) != 5.0 %")
    assert evaluate(rb, {}) == []
    assert len(evaluate(rb, {"hba1c": 6.0})) == 1


def test_evaluate_demographics():
    rb = parse_rulebase(
        "RULE adult CONFIRMS E11 WHEN age >= 18 AND gender == F"
    )
    assert evaluate(rb, {}, age=30, gender="female")
    assert evaluate(rb, {}, age=30, gender="F")
    assert not evaluate(rb, {}, age=30, gender="male")
    assert not evaluate(rb, {}, age=None, gender="female")
    assert not evaluate(rb, {}, age=30, gender="unknown")


def test_evaluate_returns_rule_base_order():
    rb = parse_rulebase(
        "RULE b CONFIRMS E11 WHEN age >= 10\nRULE a CONFIRMS D64 WHEN age >= 20\n"
    )
    fired = evaluate(rb, {}, age=30)
    assert [c.rule_id for c in fired] == ["b", "a"]


def test_evaluate_unit_mismatch_raises(catalog):
    rb = parse_rulebase("RULE r CONFIRMS E11 WHEN lab(hba1c) >= 48 mmol/mol")
    with pytest.raises(UnitMismatchError):
        evaluate(rb, {"hba1c": 50.0}, catalog=catalog)


def test_evaluate_monotone_in_information():
    rng = np.random.default_rng(11)
    for i in range(200):
        rb = random_rulebase(rng, tag=f"m{i}_")
        labs, age, gender = random_panel(rng)
        before = {c.rule_id for c in evaluate(rb, labs, age=age, gender=gender)}
        # add one lab that was absent
        absent = [k for k in ("hba1c", "glucose", "tsh", "ldl") if k not in labs]
        if not absent:
            continue
        labs[absent[0]] = float(rng.uniform(0, 22))
        after = {c.rule_id for c in evaluate(rb, labs, age=age, gender=gender)}
        assert before <= after


def test_evaluate_matches_brute_force_sample():
    rng = np.random.default_rng(3)
    for i in range(300):
        rb = random_rulebase(rng, tag=f"bf{i}_")
        labs, age, gender = random_panel(rng)
        engine = [c.rule_id for c in evaluate(rb, labs, age=age, gender=gender)]
        letter = {"F": "F", "M": "M", None: None}[gender]
        assert engine == fired_rule_ids(rb, labs, age, letter)


# -- lint ---------------------------------------------------------------------------


def lint_codes(text, catalog):
    return [(w.code, w.severity) for w in lint(parse_rulebase(text), catalog)]


def test_lint_clean_seed_rules(catalog, seed_rulebase):
    assert lint(seed_rulebase, catalog) == []


def test_lint_unknown_lab(catalog):
    codes = lint_codes("RULE r CONFIRMS E11 WHEN lab(midichlorians) > 5 mg/dL", catalog)
    assert ("unknown_lab", "warning") in codes


def test_lint_unit_mismatch(catalog):
    codes = lint_codes("RULE r CONFIRMS E11 WHEN lab(hba1c) >= 48 mmol/mol", catalog)
    assert ("unit_mismatch", "warning") in codes


def test_lint_unsatisfiable_interval(catalog):
    codes = lint_codes(
        "RULE r CONFIRMS E11 WHEN lab(glucose) > 200 mg/dL AND lab(glucose) < 100 mg/dL",
        catalog,
    )
    assert ("unsatisfiable", "warning") in codes


def test_lint_satisfiable_interval_quiet(catalog):
    codes = lint_codes(
        "RULE r CONFIRMS E11 WHEN lab(glucose) > 100 mg/dL AND lab(glucose) < 200 mg/dL",
        catalog,
    )
    assert codes == []


def test_lint_unsatisfiable_point_cases(catalog):
    assert ("unsatisfiable", "warning") in lint_codes(
        "RULE r CONFIRMS E11 WHEN age >= 18 AND age <= 18 AND age != 18", catalog
    )
    assert ("unsatisfiable", "warning") in lint_codes(
        "RULE r CONFIRMS E11 WHEN age == 30 AND age == 31", catalog
    )
    assert lint_codes("RULE r CONFIRMS E11 WHEN age >= 18 AND age <= 18", catalog) == []


def test_lint_unsatisfiable_gender(catalog):
    assert ("unsatisfiable", "warning") in lint_codes(
        "RULE r CONFIRMS E11 WHEN gender == F AND gender == M", catalog
    )
    assert ("unsatisfiable", "warning") in lint_codes(
        "RULE r CONFIRMS E11 WHEN gender != F AND gender != M", catalog
    )


def test_lint_duplicate_condition(catalog):
    codes = lint_codes(
        "RULE r CONFIRMS E11 WHEN lab(glucose) > 100 mg/dL AND lab(glucose) > 100 mg/dL",
        catalog,
    )
    assert ("duplicate_condition", "warning") in codes


def test_lint_outside_pool_informational(catalog):
    codes = lint_codes("RULE r CONFIRMS X99 WHEN age > 5", catalog)
    assert ("unknown_icd10", "info") in codes


def test_lint_tsv_format(catalog):
    warnings = lint(parse_rulebase("RULE r CONFIRMS X99 WHEN age > 5"), catalog)
    text = lint_tsv(warnings)
    lines = text.strip().split("\n")
    assert lines[0] == "rule_id\tseverity\tmessage"
    assert lines[1].startswith("r\tinfo\t")


# -- follow-up recommendation ----------------------------------------------------------


def test_followup_set_difference(catalog, seed_rulebase):
    t2dm = catalog.group_by_name("T2DM")
    assert recommend_followup(seed_rulebase, t2dm, catalog, {"glucose"}) == ["hba1c"]
    assert recommend_followup(seed_rulebase, t2dm, catalog, {"glucose", "hba1c"}) == []


def test_followup_counts_by_hand_for_anemia(catalog, seed_rulebase):
    # seed file hand count: hemoglobin in anemia_female, anemia_male, and
    # iron_deficiency_anemia (3 rules); ferritin and mcv in one rule each
    anemia = catalog.group_by_name("anemia")
    assert recommend_followup(seed_rulebase, anemia, catalog, set()) == [
        "hemoglobin",
        "ferritin",
        "mcv",
    ]


def test_followup_no_rules_for_group(catalog, seed_rulebase):
    # no seed rule confirms a URTI code (URTI has no confirming lab)
    urti = catalog.group_by_name("URTI")
    assert recommend_followup(seed_rulebase, urti, catalog, set()) == []
