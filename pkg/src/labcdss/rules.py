"""Textual rule language for confirming ICD-10 diagnoses from canonical labs.

Grammar (comments run from '#' to end of line)::

    rulebase  := rule+
    rule      := "RULE" ident "CONFIRMS" icd10 string? "WHEN" condition ("AND" condition)*
    condition := "lab" "(" ident ")" cmp number unit
               | "age" cmp number
               | "gender" ("==" | "!=") ("F" | "M")
    cmp       := ">" | ">=" | "<" | "<=" | "==" | "!="

Conditions are a conjunction: a rule fires only when every condition holds.
A lab condition whose lab has no observed value never holds, so confirmation
stays conservative on partial panels.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

from .catalog import Catalog, DiseaseGroup

__all__ = [
    "LabCondition",
    "AgeCondition",
    "GenderCondition",
    "Condition",
    "Rule",
    "RuleBase",
    "ConfirmedDiagnosis",
    "LintWarning",
    "ParseError",
    "DuplicateRuleError",
    "UnitMismatchError",
    "parse_rulebase",
    "pretty_print",
    "evaluate",
    "lint",
    "lint_tsv",
    "format_condition",
    "recommend_followup",
    "load_rules",
]

COMPARATORS = (">", ">=", "<", "<=", "==", "!=")

_CMP_FN = {
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class LabCondition:
    lab_key: str
    comparator: str
    threshold: float
    unit: str


@dataclass(frozen=True)
class AgeCondition:
    comparator: str
    threshold: float


@dataclass(frozen=True)
class GenderCondition:
    comparator: str  # "==" or "!="
    value: str  # "F" or "M"


Condition = Union[LabCondition, AgeCondition, GenderCondition]


@dataclass(frozen=True)
class Rule:
    rule_id: str
    icd10: str
    conditions: tuple[Condition, ...]
    display_name: str | None = None


@dataclass(frozen=True)
class RuleBase:
    rules: tuple[Rule, ...]
    source_hash: str = field(compare=False, default="")

    def __len__(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class ConfirmedDiagnosis:
    rule_id: str
    icd10: str
    matched: tuple[tuple[Condition, float | str], ...]
    display_name: str | None = None
    confirmed_at: dt.datetime | None = None


@dataclass(frozen=True)
class LintWarning:
    rule_id: str
    severity: str  # "warning" | "info"
    code: str
    message: str


# -- errors -------------------------------------------------------------------


class ParseError(ValueError):
    def __init__(self, line: int, col: int, message: str):
        self.line = line
        self.col = col
        self.message = message
        super().__init__(f"line {line}, col {col}: {message}")


class DuplicateRuleError(ParseError):
    pass


class UnitMismatchError(ValueError):
    """A rule's unit differs from the catalog's canonical unit at evaluation time."""


# -- lexer --------------------------------------------------------------------

_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_IDENT = re.compile(r"[a-z_][a-z0-9_]*")
_UPPER_WORD = re.compile(r"[A-Z][A-Z0-9.]*")
_ICD10 = re.compile(r"[A-Z]\d{2}(?:\.[0-9A-Z]{1,4})?$")
_KEYWORDS = ("RULE", "CONFIRMS", "WHEN", "AND")


@dataclass(frozen=True)
class _Token:
    kind: str  # KEYWORD IDENT ICD10 NUMBER STRING CMP LPAREN RPAREN UNIT EOF
    text: str
    line: int
    col: int


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _advance(self, n: int) -> None:
        for ch in self.text[self.pos : self.pos + n]:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += n

    def _skip_space_and_comments(self) -> None:
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "#":
                end = self.text.find("\n", self.pos)
                self._advance((end if end != -1 else len(self.text)) - self.pos)
            elif ch.isspace():
                self._advance(1)
            else:
                return

    def next_token(self) -> _Token:
        self._skip_space_and_comments()
        line, col = self.line, self.col
        if self.pos >= len(self.text):
            return _Token("EOF", "", line, col)
        rest = self.text[self.pos :]
        ch = rest[0]

        for op in (">=", "<=", "==", "!="):
            if rest.startswith(op):
                self._advance(2)
                return _Token("CMP", op, line, col)
        if ch in "><":
            self._advance(1)
            return _Token("CMP", ch, line, col)
        if ch == "(":
            self._advance(1)
            return _Token("LPAREN", ch, line, col)
        if ch == ")":
            self._advance(1)
            return _Token("RPAREN", ch, line, col)
        if ch == '"':
            end = rest.find('"', 1)
            if end == -1 or "\n" in rest[1:end]:
                raise ParseError(line, col, "unterminated string")
            self._advance(end + 1)
            return _Token("STRING", rest[1:end], line, col)
        m = _NUMBER.match(rest)
        if m:
            self._advance(m.end())
            return _Token("NUMBER", m.group(), line, col)
        m = _UPPER_WORD.match(rest)
        if m:
            word = m.group()
            self._advance(m.end())
            if word in _KEYWORDS:
                return _Token("KEYWORD", word, line, col)
            if word in ("F", "M"):
                return _Token("GENDER", word, line, col)
            if _ICD10.match(word):
                return _Token("ICD10", word, line, col)
            raise ParseError(line, col, f"unrecognized token {word!r}")
        m = _IDENT.match(rest)
        if m:
            self._advance(m.end())
            return _Token("IDENT", m.group(), line, col)
        raise ParseError(line, col, f"unexpected character {ch!r}")

    def next_unit(self) -> _Token:
        """Scan one whitespace-delimited chunk as a unit string."""
        self._skip_space_and_comments()
        line, col = self.line, self.col
        end = self.pos
        while end < len(self.text) and not self.text[end].isspace():
            end += 1
        chunk = self.text[self.pos : end]
        if not chunk or chunk == "AND":
            raise ParseError(line, col, "expected unit after lab threshold")
        self._advance(len(chunk))
        return _Token("UNIT", chunk, line, col)


# -- parser -------------------------------------------------------------------


class _Parser:
    # one-token lookahead, filled lazily so the lexer never scans past the
    # token the parser has actually looked at (units are scanned raw)
    def __init__(self, text: str):
        self.lexer = _Lexer(text)
        self._peeked: _Token | None = None

    def _peek(self) -> _Token:
        if self._peeked is None:
            self._peeked = self.lexer.next_token()
        return self._peeked

    def _bump(self) -> _Token:
        tok = self._peek()
        self._peeked = None
        return tok

    def _expect(self, kind: str, text: str | None = None, what: str | None = None) -> _Token:
        tok = self._peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            expected = what or (text if text is not None else kind)
            got = tok.text or "end of input"
            raise ParseError(tok.line, tok.col, f"expected {expected}, got {got!r}")
        return self._bump()

    def parse(self) -> tuple[Rule, ...]:
        rules: list[Rule] = []
        seen: set[str] = set()
        while self._peek().kind != "EOF":
            tok = self._peek()
            rule = self._rule()
            if rule.rule_id in seen:
                raise DuplicateRuleError(tok.line, tok.col, f"duplicate rule id {rule.rule_id!r}")
            seen.add(rule.rule_id)
            rules.append(rule)
        if not rules:
            tok = self._peek()
            raise ParseError(tok.line, tok.col, "expected at least one RULE")
        return tuple(rules)

    def _rule(self) -> Rule:
        self._expect("KEYWORD", "RULE")
        rule_id = self._expect("IDENT", what="rule identifier").text
        self._expect("KEYWORD", "CONFIRMS")
        icd10 = self._expect("ICD10", what="ICD-10 code").text
        display_name = self._bump().text if self._peek().kind == "STRING" else None
        self._expect("KEYWORD", "WHEN")
        conditions = [self._condition()]
        while self._peek().kind == "KEYWORD" and self._peek().text == "AND":
            self._bump()
            conditions.append(self._condition())
        return Rule(rule_id, icd10, tuple(conditions), display_name)

    def _condition(self) -> Condition:
        tok = self._peek()
        if tok.kind != "IDENT":
            raise ParseError(tok.line, tok.col, "expected condition (lab(...), age, or gender)")
        subject = self._bump().text
        if subject == "lab":
            self._expect("LPAREN", what="'('")
            key = self._expect("IDENT", what="lab key").text
            self._expect("RPAREN", what="')'")
            cmp_op = self._expect("CMP", what="comparator").text
            threshold = float(self._expect("NUMBER", what="threshold").text)
            unit = self.lexer.next_unit()
            return LabCondition(key, cmp_op, threshold, unit.text)
        if subject == "age":
            cmp_op = self._expect("CMP", what="comparator").text
            threshold = float(self._expect("NUMBER", what="threshold").text)
            return AgeCondition(cmp_op, threshold)
        if subject == "gender":
            cmp_tok = self._peek()
            cmp_op = self._expect("CMP", what="'==' or '!='").text
            if cmp_op not in ("==", "!="):
                raise ParseError(cmp_tok.line, cmp_tok.col, "gender conditions use only == or !=")
            value = self._expect("GENDER", what="'F' or 'M'").text
            return GenderCondition(cmp_op, value)
        raise ParseError(tok.line, tok.col, f"expected condition subject, got {subject!r}")


def parse_rulebase(text: str) -> RuleBase:
    """Parse rule text; raises ParseError with line/col on the first error."""
    rules = _Parser(text).parse()
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return RuleBase(rules, source_hash=digest)


def load_rules(path: Path) -> RuleBase:
    return parse_rulebase(Path(path).read_text(encoding="utf-8"))


# -- pretty printer -----------------------------------------------------------


def format_condition(cond: Condition) -> str:
    if isinstance(cond, LabCondition):
        return f"lab({cond.lab_key}) {cond.comparator} {cond.threshold!r} {cond.unit}"
    if isinstance(cond, AgeCondition):
        return f"age {cond.comparator} {cond.threshold!r}"
    return f"gender {cond.comparator} {cond.value}"


def pretty_print(rulebase: RuleBase) -> str:
    """Emit canonical rule text; parse(pretty_print(rb)) is structurally rb."""
    blocks = []
    for rule in rulebase.rules:
        head = f"RULE {rule.rule_id} CONFIRMS {rule.icd10}"
        if rule.display_name is not None:
            head += f' "{rule.display_name}"'
        head += " WHEN"
        lines = [head]
        for i, cond in enumerate(rule.conditions):
            prefix = "    " if i == 0 else "    AND "
            lines.append(prefix + format_condition(cond))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


# -- evaluation ---------------------------------------------------------------


def _gender_letter(gender: str | None) -> str | None:
    if gender == "female":
        return "F"
    if gender == "male":
        return "M"
    if gender in ("F", "M"):
        return gender
    return None


def evaluate(
    rulebase: RuleBase,
    labs: Mapping[str, float],
    age: float | None = None,
    gender: str | None = None,
    catalog: Catalog | None = None,
    at: dt.datetime | None = None,
) -> list[ConfirmedDiagnosis]:
    """Return every rule whose conditions all hold, in rule-base order.

    `labs` maps canonical lab keys to canonical-unit values.  Missing labs
    (and missing age/gender) never satisfy a condition.  When a catalog is
    given, a rule unit that differs from the canonical unit raises
    UnitMismatchError; lint catches these ahead of time.
    """
    letter = _gender_letter(gender)
    confirmed = []
    for rule in rulebase.rules:
        matched: list[tuple[Condition, float | str]] = []
        for cond in rule.conditions:
            if isinstance(cond, LabCondition):
                if catalog is not None:
                    lab = catalog.labs.get(cond.lab_key)
                    if lab is not None and cond.unit.lower() != lab.canonical_unit.lower():
                        raise UnitMismatchError(
                            f"rule {rule.rule_id}: unit {cond.unit!r} for lab "
                            f"{cond.lab_key!r} differs from canonical {lab.canonical_unit!r}"
                        )
                value = labs.get(cond.lab_key)
                if value is None or (isinstance(value, float) and math.isnan(value)):
                    break
                if not _CMP_FN[cond.comparator](value, cond.threshold):
                    break
                matched.append((cond, float(value)))
            elif isinstance(cond, AgeCondition):
                if age is None or not _CMP_FN[cond.comparator](age, cond.threshold):
                    break
                matched.append((cond, float(age)))
            else:
                if letter is None or not _CMP_FN[cond.comparator](letter, cond.value):
                    break
                matched.append((cond, letter))
        else:
            confirmed.append(
                ConfirmedDiagnosis(rule.rule_id, rule.icd10, tuple(matched), rule.display_name, at)
            )
    return confirmed


# -- linter -------------------------------------------------------------------


def _interval_feasible(constraints: list[tuple[str, float]]) -> bool:
    """Whether a conjunction of numeric comparisons on one subject is satisfiable."""
    lo, lo_strict = -math.inf, False
    hi, hi_strict = math.inf, False
    eqs: set[float] = set()
    neqs: set[float] = set()
    for op, thr in constraints:
        if op == ">":
            if thr > lo or (thr == lo and not lo_strict):
                lo, lo_strict = thr, True
        elif op == ">=":
            if thr > lo:
                lo, lo_strict = thr, False
        elif op == "<":
            if thr < hi or (thr == hi and not hi_strict):
                hi, hi_strict = thr, True
        elif op == "<=":
            if thr < hi:
                hi, hi_strict = thr, False
        elif op == "==":
            eqs.add(thr)
        else:
            neqs.add(thr)
    if len(eqs) > 1:
        return False
    if eqs:
        v = next(iter(eqs))
        if v in neqs:
            return False
        above = v > lo or (v == lo and not lo_strict)
        below = v < hi or (v == hi and not hi_strict)
        return above and below
    if lo > hi:
        return False
    if lo == hi:
        # a point interval survives only if both ends are inclusive and not excluded
        return not (lo_strict or hi_strict) and lo not in neqs
    return True


def lint(rulebase: RuleBase, catalog: Catalog) -> list[LintWarning]:
    """Static checks against the catalog; lint never raises."""
    warnings: list[LintWarning] = []
    for rule in rulebase.rules:
        seen: set[Condition] = set()
        numeric: dict[str, list[tuple[str, float]]] = {}
        gender_cs: list[GenderCondition] = []
        for cond in rule.conditions:
            if cond in seen:
                warnings.append(
                    LintWarning(
                        rule.rule_id, "warning", "duplicate_condition",
                        f"condition repeated: {format_condition(cond)}",
                    )
                )
            seen.add(cond)
            if isinstance(cond, LabCondition):
                lab = catalog.labs.get(cond.lab_key)
                if lab is None:
                    warnings.append(
                        LintWarning(
                            rule.rule_id, "warning", "unknown_lab",
                            f"lab {cond.lab_key!r} is not in the catalog",
                        )
                    )
                elif cond.unit.lower() != lab.canonical_unit.lower():
                    warnings.append(
                        LintWarning(
                            rule.rule_id, "warning", "unit_mismatch",
                            f"lab {cond.lab_key!r}: rule unit {cond.unit!r} differs "
                            f"from canonical {lab.canonical_unit!r}",
                        )
                    )
                numeric.setdefault(f"lab({cond.lab_key})", []).append(
                    (cond.comparator, cond.threshold)
                )
            elif isinstance(cond, AgeCondition):
                numeric.setdefault("age", []).append((cond.comparator, cond.threshold))
            else:
                gender_cs.append(cond)

        for subject, constraints in numeric.items():
            if not _interval_feasible(constraints):
                warnings.append(
                    LintWarning(
                        rule.rule_id, "warning", "unsatisfiable",
                        f"conditions on {subject} can never all hold",
                    )
                )
        required = {c.value for c in gender_cs if c.comparator == "=="}
        excluded = {c.value for c in gender_cs if c.comparator == "!="}
        if len(required) > 1 or (required & excluded) or excluded == {"F", "M"}:
            warnings.append(
                LintWarning(rule.rule_id, "warning", "unsatisfiable",
                            "conditions on gender can never all hold")
            )

        try:
            group = catalog.icd_to_group(rule.icd10)
        except ValueError:
            group = None
        if group is None:
            warnings.append(
                LintWarning(
                    rule.rule_id, "info", "unknown_icd10",
                    f"ICD-10 {rule.icd10} is outside the disease-group pool",
                )
            )
    return warnings


def lint_tsv(warnings: list[LintWarning]) -> str:
    lines = ["rule_id\tseverity\tmessage"]
    lines += [f"{w.rule_id}\t{w.severity}\t{w.message}" for w in warnings]
    return "\n".join(lines) + "\n"


# -- follow-up recommendation ---------------------------------------------------


def recommend_followup(
    rulebase: RuleBase,
    group: DiseaseGroup,
    catalog: Catalog,
    present_labs: set[str] = frozenset(),
) -> list[str]:
    """Labs that could still confirm a diagnosis in `group`.

    Collects lab keys referenced by rules whose ICD-10 falls in the group,
    drops labs already present, and orders by how many rules reference each
    lab (ties lexicographic) so the most-unlocking labs come first.
    """
    counts: dict[str, int] = {}
    for rule in rulebase.rules:
        try:
            rule_group = catalog.icd_to_group(rule.icd10)
        except ValueError:
            continue
        if rule_group is None or rule_group.index != group.index:
            continue
        for key in {c.lab_key for c in rule.conditions if isinstance(c, LabCondition)}:
            counts[key] = counts.get(key, 0) + 1
    candidates = [k for k in counts if k not in present_labs]
    return sorted(candidates, key=lambda k: (-counts[k], k))
