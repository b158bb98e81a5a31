"""Canonical lab catalog, unit conversions, and the disease-group pool.

The catalog replaces an external terminology service with a local alias
table: raw lab names are normalized and resolved to stable keys, raw
units are converted into one canonical unit per lab, and everything that
cannot be resolved is rejected with a reason instead of raising.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "LabKey",
    "UnitConversion",
    "DiseaseGroup",
    "CanonicalResult",
    "Catalog",
    "CatalogError",
    "normalize_name",
    "load_default_catalog",
    "DISEASE_GROUPS",
]


class CatalogError(ValueError):
    """Raised for malformed catalog/conversion files or inconsistent tables."""


_PUNCT = re.compile(r"[^\w\s]|_")
_WS = re.compile(r"\s+")


def normalize_name(raw: str) -> str:
    """Normalize a raw lab name: lowercase, punctuation to space, collapse whitespace."""
    s = _PUNCT.sub(" ", raw.lower())
    return _WS.sub(" ", s).strip()


def _normalize_unit(raw: str) -> str:
    return raw.strip().lower()


@dataclass(frozen=True)
class LabKey:
    key: str
    canonical_unit: str
    aliases: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.key:
            raise CatalogError("lab key must be non-empty")
        if not self.canonical_unit:
            raise CatalogError(f"lab {self.key!r}: canonical unit must be non-empty")


@dataclass(frozen=True)
class UnitConversion:
    lab_key: str
    from_unit: str
    factor: float
    offset: float = 0.0

    def apply(self, value: float) -> float:
        return value * self.factor + self.offset

    def invert(self, value: float) -> float:
        return (value - self.offset) / self.factor


@dataclass(frozen=True)
class DiseaseGroup:
    name: str
    icd10_codes: frozenset[str]
    index: int
    reported_count: int = 0


# Disease pool: 11 named groups plus "normal". reported_count carries the
# reference cohort sizes used to proportion the default synthetic prevalences.
# NOTE: the source table pairs Dyslipidemia with E55 and Vitamin D Deficiency
# with E78, which is the reverse of the ICD-10 standard (E78 = disorders of
# lipoprotein metabolism, E55 = vitamin D deficiency).  The shipped pool
# follows the ICD-10 standard; the counts stay with the disease names.
DISEASE_GROUPS: tuple[DiseaseGroup, ...] = (
    DiseaseGroup("URTI", frozenset({"J00", "J01", "J02", "J03", "J06", "J31", "J32"}), 0, 102_802),
    DiseaseGroup("GERD", frozenset({"K20", "K21", "K25", "K29", "K30"}), 1, 50_086),
    DiseaseGroup("lung_disease", frozenset({"J20", "J40", "J42", "J43", "J44", "J45"}), 2, 49_121),
    DiseaseGroup("T2DM", frozenset({"E11"}), 3, 30_403),
    DiseaseGroup("anemia", frozenset({"D50", "D63", "D64"}), 4, 60_784),
    DiseaseGroup("kidney_disease", frozenset({"N17", "N18"}), 5, 25_553),
    DiseaseGroup("hypothyroidism", frozenset({"E00", "E01", "E02", "E03"}), 6, 24_084),
    DiseaseGroup("IHD", frozenset({"I20", "I21", "I25"}), 7, 15_553),
    DiseaseGroup("dyslipidemia", frozenset({"E78"}), 8, 77_558),
    DiseaseGroup("vitamin_d_deficiency", frozenset({"E55"}), 9, 69_122),
    DiseaseGroup("wbc_disorder", frozenset({"D70", "D71", "D72", "D76"}), 10, 15_346),
    DiseaseGroup("normal", frozenset(), 11, 72_643),
)

_ICD_CATEGORY = re.compile(r"^[A-Z][0-9]{2}")


@dataclass(frozen=True)
class CanonicalResult:
    """Outcome of canonicalizing one raw lab row: accepted or rejected-with-reason."""

    ok: bool
    key: str | None = None
    value: float | None = None
    reason: str | None = None  # "unknown_lab" | "unknown_unit" when not ok

    @classmethod
    def accepted(cls, key: str, value: float) -> "CanonicalResult":
        return cls(ok=True, key=key, value=value)

    @classmethod
    def rejected(cls, reason: str) -> "CanonicalResult":
        return cls(ok=False, reason=reason)


@dataclass
class Catalog:
    """Immutable-after-load lab catalog plus the disease-group pool."""

    labs: dict[str, LabKey] = field(default_factory=dict)  # key -> LabKey, insertion order
    conversions: dict[tuple[str, str], UnitConversion] = field(default_factory=dict)
    groups: tuple[DiseaseGroup, ...] = DISEASE_GROUPS
    _alias_index: dict[str, str] = field(default_factory=dict, repr=False)
    _code_index: dict[str, DiseaseGroup] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._rebuild_indexes()

    def _rebuild_indexes(self) -> None:
        self._alias_index = {}
        for lab in self.labs.values():
            for alias in (lab.key, *lab.aliases):
                norm = normalize_name(alias)
                owner = self._alias_index.get(norm)
                if owner is not None and owner != lab.key:
                    raise CatalogError(f"alias {alias!r} maps to both {owner!r} and {lab.key!r}")
                self._alias_index[norm] = lab.key
        self._code_index = {}
        for group in self.groups:
            for code in group.icd10_codes:
                if code in self._code_index:
                    raise CatalogError(f"ICD-10 code {code} appears in more than one group")
                self._code_index[code] = group
        indices = sorted(g.index for g in self.groups)
        if indices != list(range(len(self.groups))):
            raise CatalogError("disease group indices must be dense and unique")

    # -- lab resolution ------------------------------------------------------

    @property
    def lab_keys(self) -> list[str]:
        """Lab keys in catalog order (the feature order)."""
        return list(self.labs.keys())

    @property
    def n_classes(self) -> int:
        return len(self.groups)

    def group_names(self) -> list[str]:
        return [g.name for g in sorted(self.groups, key=lambda g: g.index)]

    def group_by_name(self, name: str) -> DiseaseGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def resolve_lab(self, raw_name: str) -> LabKey | None:
        key = self._alias_index.get(normalize_name(raw_name))
        return self.labs[key] if key is not None else None

    def canonicalize(self, raw_name: str, raw_unit: str, value: float) -> CanonicalResult:
        """Resolve a raw (name, unit, value) row into canonical form.

        Rejection is a value, not an error: rows with unknown labs or units
        are meant to be ignored by ingestion, so the reasons come back in
        the result instead of an exception.
        """
        if not math.isfinite(value):
            raise ValueError(f"lab value must be finite, got {value!r}")
        lab = self.resolve_lab(raw_name)
        if lab is None:
            return CanonicalResult.rejected("unknown_lab")
        unit = _normalize_unit(raw_unit)
        if unit == _normalize_unit(lab.canonical_unit):
            return CanonicalResult.accepted(lab.key, value)
        conv = self.conversions.get((lab.key, unit))
        if conv is None:
            return CanonicalResult.rejected("unknown_unit")
        return CanonicalResult.accepted(lab.key, conv.apply(value))

    # -- disease groups ------------------------------------------------------

    def icd_to_group(self, icd10_code: str) -> DiseaseGroup | None:
        """Map an ICD-10 code to its disease group by 3-character category prefix."""
        code = icd10_code.strip().upper()
        if not _ICD_CATEGORY.match(code):
            raise ValueError(f"malformed ICD-10 code: {icd10_code!r}")
        return self._code_index.get(code[:3])


# -- file loading -----------------------------------------------------------


def _read_tsv(path: Path) -> list[list[str]]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append([lineno, *line.split("\t")])
    return rows


def load_catalog(catalog_path: Path, conversions_path: Path | None = None) -> Catalog:
    """Load a catalog from TSV files; see data/catalog.tsv for the format."""
    labs: dict[str, LabKey] = {}
    for lineno, *cols in _read_tsv(Path(catalog_path)):
        if len(cols) != 3:
            raise CatalogError(f"{catalog_path}:{lineno}: expected 3 columns, got {len(cols)}")
        key, unit, aliases = cols
        if key in labs:
            raise CatalogError(f"{catalog_path}:{lineno}: duplicate lab key {key!r}")
        labs[key] = LabKey(key, unit, tuple(a for a in aliases.split("|") if a))

    conversions: dict[tuple[str, str], UnitConversion] = {}
    if conversions_path is not None:
        for lineno, *cols in _read_tsv(Path(conversions_path)):
            if len(cols) != 4:
                raise CatalogError(f"{conversions_path}:{lineno}: expected 4 columns")
            lab_key, from_unit, factor, offset = cols
            if lab_key not in labs:
                raise CatalogError(f"{conversions_path}:{lineno}: unknown lab {lab_key!r}")
            conv = UnitConversion(lab_key, from_unit, float(factor), float(offset))
            if conv.factor == 0:
                raise CatalogError(f"{conversions_path}:{lineno}: factor must be nonzero")
            conversions[(lab_key, _normalize_unit(from_unit))] = conv

    return Catalog(labs=labs, conversions=conversions)


def default_data_path(name: str) -> Path:
    return Path(str(resources.files("labcdss").joinpath("data").joinpath(name)))


def load_default_catalog() -> Catalog:
    return load_catalog(default_data_path("catalog.tsv"), default_data_path("conversions.tsv"))
