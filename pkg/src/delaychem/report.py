"""Structured verdicts for hypothesis and theorem checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

HOLDS = "holds"
FAILS = "fails"
INCONCLUSIVE = "inconclusive"

# margins within this band of zero are neither holds nor fails
EQUALITY_BAND = 1e-12

CONDITION_IDS = (
    "H1", "H2", "EXT_I", "EXT_STAB", "EXT_GAS", "RI_SIGN",
    "H3", "H3A", "H3B", "H3C", "H4", "H4_0", "H4_1",
    "PERS", "EXCL_1", "COEX", "COEX_AVG",
)


def verdict_for(margin: float) -> str:
    if not math.isfinite(margin):
        return INCONCLUSIVE
    if margin > EQUALITY_BAND:
        return HOLDS
    if margin < -EQUALITY_BAND:
        return FAILS
    return INCONCLUSIVE


@dataclass
class Entry:
    condition_id: str
    verdict: str
    margin: float
    species: int | None = None  # zero-based
    witness_t: float | None = None
    witness_x: float | None = None
    note: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition_id not in CONDITION_IDS:
            raise ValueError(f"unknown condition id {self.condition_id!r}")
        if self.verdict not in (HOLDS, FAILS, INCONCLUSIVE):
            raise ValueError(f"bad verdict {self.verdict!r}")

    @classmethod
    def from_margin(cls, condition_id: str, margin: float, **kw) -> "Entry":
        return cls(condition_id, verdict_for(margin), float(margin), **kw)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    @property
    def label(self) -> str:
        return self.condition_id if self.species is None else f"{self.condition_id}.{self.species + 1}"


@dataclass
class ConditionReport:
    entries: list[Entry] = field(default_factory=list)

    def add(self, entry: Entry) -> Entry:
        self.entries.append(entry)
        return entry

    def extend(self, other: "ConditionReport") -> "ConditionReport":
        self.entries.extend(other.entries)
        return self

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def find(self, condition_id: str, species: int | None = None) -> list[Entry]:
        out = [e for e in self.entries if e.condition_id == condition_id]
        if species is not None:
            out = [e for e in out if e.species == species]
        return out

    def get(self, condition_id: str, species: int | None = None) -> Entry:
        found = self.find(condition_id, species)
        if not found:
            raise KeyError(f"no entry {condition_id} for species {species}")
        return found[0]

    def verdict(self, condition_id: str, species: int | None = None) -> str:
        """Combined verdict: holds only if every matching entry holds."""
        found = self.find(condition_id, species)
        if not found:
            raise KeyError(condition_id)
        verdicts = {e.verdict for e in found}
        if verdicts == {HOLDS}:
            return HOLDS
        if FAILS in verdicts:
            return FAILS
        return INCONCLUSIVE

    def margin(self, condition_id: str, species: int | None = None) -> float:
        return min(e.margin for e in self.find(condition_id, species))

    def all_pass(self) -> bool:
        return all(e.holds for e in self.entries)

    def to_text(self) -> str:
        """One block per entry, ``[ID.species]`` followed by ``key = value`` lines."""
        blocks = []
        for e in self.entries:
            lines = [f"[{e.label}]", f"verdict = {e.verdict}", f"margin = {e.margin:.12g}"]
            if e.species is not None:
                lines.append(f"species = {e.species + 1}")
            if e.witness_t is not None:
                lines.append(f"witness_t = {e.witness_t:.12g}")
            if e.witness_x is not None:
                lines.append(f"witness_x = {e.witness_x:.12g}")
            for key, value in e.details.items():
                lines.append(f"{key} = {_fmt(value)}")
            if e.note:
                lines.append(f"note = {e.note}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"

    def summary_lines(self) -> list[str]:
        out = []
        for e in self.entries:
            where = f" t={e.witness_t:.4f}" if e.witness_t is not None else ""
            out.append(f"{e.label:<12} {e.verdict:<13} margin={e.margin: .6e}{where}")
        return out


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)
