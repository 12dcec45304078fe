"""Attacker trace generators and the row-ownership overlay used to detect isolation breaches."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .controller import Request, SimReport
from .dram import Geometry, RowAddress
from .errors import OwnershipError


class Owner(str, Enum):
    ATTACKER = "attacker"
    VICTIM = "victim"
    KERNEL = "kernel"
    FREE = "free"


class PageMap:
    """Owner label for every (bank, row). Rows not assigned explicitly are free."""

    def __init__(self, geometry: Geometry):
        self.geometry = geometry
        self._owners = [Owner.FREE] * geometry.total_rows
        self._ranges: list[dict] = []

    def assign(self, owner: Owner | str, bank: int, first: int, last: int | None = None) -> "PageMap":
        owner = Owner(owner)
        last = first if last is None else last
        if first > last:
            raise ValueError(f"empty row range [{first}, {last}]")
        self.geometry.check(RowAddress(bank, first))
        self.geometry.check(RowAddress(bank, last))
        base = bank * self.geometry.rows_per_bank
        for row in range(first, last + 1):
            self._owners[base + row] = owner
        self._ranges.append({"owner": owner.value, "bank": bank, "rows": [first, last]})
        return self

    def owner(self, bank: int, row: int) -> Owner:
        self.geometry.check(RowAddress(bank, row))
        return self._owners[bank * self.geometry.rows_per_bank + row]

    def is_breach(self, bank: int, row: int) -> bool:
        return self.owner(bank, row) is not Owner.ATTACKER

    def rows_owned_by(self, owner: Owner | str, bank: int) -> list[int]:
        owner = Owner(owner)
        base = bank * self.geometry.rows_per_bank
        return [r for r in range(self.geometry.rows_per_bank) if self._owners[base + r] is owner]

    @classmethod
    def from_ranges(cls, geometry: Geometry, ranges: Iterable[dict]) -> "PageMap":
        pm = cls(geometry)
        for entry in ranges:
            lo, hi = entry["rows"]
            pm.assign(entry["owner"], entry["bank"], lo, hi)
        return pm

    def to_ranges(self) -> list[dict]:
        return [dict(r) for r in self._ranges]


class AttackKind(str, Enum):
    SINGLE_SIDED = "single_sided"
    DOUBLE_SIDED = "double_sided"
    RANDOM_BASELINE = "random_baseline"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    target_victim_row: int
    bank: int = 0
    iterations: int = 0
    seed: int = 0
    conflict_row: int | None = None  # single_sided only; chosen automatically when None
    op: str = "R"
    write_pattern: bytes = b"\x00"

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.op not in ("R", "W"):
            raise ValueError("op must be 'R' or 'W'")
        if self.op == "W" and not self.write_pattern:
            raise ValueError("write attacks need a non-empty write_pattern")

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "target_victim_row": self.target_victim_row,
            "bank": self.bank,
            "iterations": self.iterations,
            "seed": self.seed,
        }
        if self.conflict_row is not None:
            d["conflict_row"] = self.conflict_row
        if self.op != "R":
            d["op"] = self.op
            d["write_pattern"] = self.write_pattern.hex()
        return d


def _require_attacker(pages: PageMap, bank: int, row: int, role: str) -> None:
    owner = pages.owner(bank, row)
    if owner is not Owner.ATTACKER:
        raise OwnershipError(f"{role} row {row} in bank {bank} is owned by {owner.value}, not the attacker", bank, row)


def _pick_conflict_row(pages: PageMap, spec: AttackSpec, aggressor: int) -> int:
    candidates = [r for r in pages.rows_owned_by(Owner.ATTACKER, spec.bank) if r != aggressor]
    if not candidates:
        raise OwnershipError(
            f"single-sided attack needs a second attacker-owned row in bank {spec.bank}", spec.bank, aggressor
        )
    # prefer a row that does not also hammer the victim from the other side
    far = [r for r in candidates if abs(r - spec.target_victim_row) > 1]
    return (far or candidates)[0]


def generate_trace(spec: AttackSpec, geometry: Geometry, pages: PageMap) -> list[Request]:
    """Expand an attack into a request trace. Every address is the first byte of its row."""
    victim, bank = spec.target_victim_row, spec.bank
    geometry.check(RowAddress(bank, victim))
    if spec.kind is not AttackKind.RANDOM_BASELINE and pages.owner(bank, victim) is Owner.ATTACKER:
        raise OwnershipError(f"victim row {victim} in bank {bank} is attacker-owned", bank, victim)

    def req(row: int) -> Request:
        addr = geometry.row_base_address(bank, row)
        if spec.op == "W":
            return Request("W", addr, spec.write_pattern)
        return Request("R", addr)

    if spec.kind is AttackKind.DOUBLE_SIDED:
        if not 1 <= victim <= geometry.rows_per_bank - 2:
            raise ValueError(f"double-sided victim row must be in [1, {geometry.rows_per_bank - 2}]")
        _require_attacker(pages, bank, victim - 1, "aggressor")
        _require_attacker(pages, bank, victim + 1, "aggressor")
        pair = [req(victim - 1), req(victim + 1)]
        return pair * spec.iterations

    if spec.kind is AttackKind.SINGLE_SIDED:
        aggressor = victim - 1
        if aggressor < 0:
            raise ValueError("single-sided attack needs victim row >= 1")
        _require_attacker(pages, bank, aggressor, "aggressor")
        conflict = spec.conflict_row
        if conflict is None:
            conflict = _pick_conflict_row(pages, spec, aggressor)
        elif conflict == aggressor:
            raise ValueError("conflict row must differ from the aggressor row")
        _require_attacker(pages, bank, conflict, "conflict")
        return [req(aggressor), req(conflict)] * spec.iterations

    rows = pages.rows_owned_by(Owner.ATTACKER, bank)
    if not rows:
        raise OwnershipError(f"bank {bank} has no attacker-owned rows", bank, victim)
    picks = np.random.default_rng(spec.seed).integers(0, len(rows), size=spec.iterations)
    return [req(rows[i]) for i in picks.tolist()]


@dataclass
class BreachReport:
    total_flips: int
    flips_by_owner: dict[str, int]

    @property
    def breaches(self) -> int:
        return self.total_flips - self.flips_by_owner[Owner.ATTACKER.value]

    def to_dict(self) -> dict:
        return {"total_flips": self.total_flips, "flips_by_owner": dict(self.flips_by_owner), "breaches": self.breaches}


def isolation_breach_report(report: SimReport, pages: PageMap) -> BreachReport:
    """Classify flips by the owner of the row they landed in."""
    counts = Counter(pages.owner(f.bank, f.row).value for f in report.flips)
    by_owner = {o.value: counts.get(o.value, 0) for o in Owner}
    return BreachReport(total_flips=len(report.flips), flips_by_owner=by_owner)
