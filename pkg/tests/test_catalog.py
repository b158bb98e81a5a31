import math

import pytest
from hypothesis import given, strategies as st
from pytest import approx

from labcdss.catalog import (
    Catalog,
    CatalogError,
    DiseaseGroup,
    LabKey,
    UnitConversion,
    load_default_catalog,
    normalize_name,
)


def test_canonicalize_alias_hit_identity_unit(catalog):
    result = catalog.canonicalize("Hgb A1c", "%", 7.1)
    assert result.ok
    assert result.key == "hba1c"
    assert result.value == 7.1


def test_canonicalize_converts_units(catalog):
    # shipped factor for glucose mmol/L -> mg/dL is 18.02
    result = catalog.canonicalize("glucose", "mmol/L", 5.0)
    assert result.ok
    assert result.key == "glucose"
    assert result.value == approx(90.1)


def test_canonicalize_offset_conversion(catalog):
    # shipped hba1c mmol/mol -> % uses factor 0.0915 and offset 2.15
    result = catalog.canonicalize("hba1c", "mmol/mol", 48.0)
    assert result.ok
    assert result.value == approx(48.0 * 0.0915 + 2.15)


def test_canonicalize_unknown_unit(catalog):
    result = catalog.canonicalize("glucose", "furlongs", 5.0)
    assert not result.ok
    assert result.reason == "unknown_unit"


def test_canonicalize_unknown_lab(catalog):
    result = catalog.canonicalize("quantum flux", "mg/dL", 5.0)
    assert not result.ok
    assert result.reason == "unknown_lab"


def test_canonicalize_rejects_non_finite(catalog):
    with pytest.raises(ValueError):
        catalog.canonicalize("glucose", "mg/dL", float("nan"))


def test_alias_resolution_deterministic(catalog):
    first = catalog.canonicalize("  HGB   a1c ", "%", 6.0)
    for _ in range(5):
        again = catalog.canonicalize("  HGB   a1c ", "%", 6.0)
        assert again == first


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("Hgb A1c", "hgb a1c"),
        ("LDL-C", "ldl c"),
        ("  c-reactive   protein ", "c reactive protein"),
        ("25-OH Vitamin D", "25 oh vitamin d"),
    ],
)
def test_normalize_name(raw, expected):
    assert normalize_name(raw) == expected


def test_icd_to_group_table_rows(catalog):
    assert catalog.icd_to_group("J02").name == "URTI"
    assert catalog.icd_to_group("E11").name == "T2DM"
    assert catalog.icd_to_group("D50").name == "anemia"
    assert catalog.icd_to_group("N18").name == "kidney_disease"
    # codes follow the ICD-10 standard: E78 = lipoproteins, E55 = vitamin D
    assert catalog.icd_to_group("E78").name == "dyslipidemia"
    assert catalog.icd_to_group("E55").name == "vitamin_d_deficiency"
    assert catalog.icd_to_group("Z99") is None


def test_icd_to_group_uses_category_prefix(catalog):
    assert catalog.icd_to_group("E11.9").name == "T2DM"
    assert catalog.icd_to_group("j02").name == "URTI"  # case-normalized


def test_icd_to_group_malformed(catalog):
    with pytest.raises(ValueError):
        catalog.icd_to_group("diabetes")
    with pytest.raises(ValueError):
        catalog.icd_to_group("9E1")


def test_group_pool_shape(catalog):
    groups = catalog.groups
    assert len(groups) == 12
    normal = [g for g in groups if g.name == "normal"]
    assert len(normal) == 1 and normal[0].icd10_codes == frozenset()
    assert sorted(g.index for g in groups) == list(range(12))
    all_codes = [code for g in groups for code in g.icd10_codes]
    assert len(all_codes) == len(set(all_codes)), "code sets must be pairwise disjoint"


def test_duplicate_alias_rejected():
    labs = {
        "a": LabKey("a", "mg/dL", ("shared name",)),
        "b": LabKey("b", "mg/dL", ("Shared  Name",)),
    }
    with pytest.raises(CatalogError):
        Catalog(labs=labs)


def test_overlapping_group_codes_rejected():
    groups = (
        DiseaseGroup("one", frozenset({"E11"}), 0),
        DiseaseGroup("two", frozenset({"E11"}), 1),
    )
    with pytest.raises(CatalogError):
        Catalog(labs={}, groups=groups)


@given(
    value=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    factor=st.floats(min_value=1e-3, max_value=1e3),
    offset=st.floats(min_value=-100, max_value=100),
)
def test_conversion_round_trip(value, factor, offset):
    conv = UnitConversion("glucose", "mmol/L", factor, offset)
    back = conv.invert(conv.apply(value))
    assert back == approx(value, rel=1e-9, abs=1e-9)


def test_shipped_conversions_round_trip(catalog):
    for conv in catalog.conversions.values():
        for value in (0.13, 1.0, 47.5, 912.0):
            assert conv.invert(conv.apply(value)) == approx(value, rel=1e-9)


def test_default_catalog_loads_clean():
    catalog = load_default_catalog()
    assert len(catalog.labs) >= 30
    for lab in catalog.labs.values():
        assert lab.canonical_unit
    for (key, _unit), conv in catalog.conversions.items():
        assert key in catalog.labs
        assert math.isfinite(conv.factor) and conv.factor != 0
