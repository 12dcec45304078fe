"""Read-disturb fault model.

Each row keeps two exposure counters: activations of its physically-left
neighbour and of its physically-right neighbour since the row was last
refreshed. A vulnerable cell flips once the relevant exposure reaches its
threshold, provided the stored bit satisfies the cell's pattern gate. The
model is deterministic; no randomness enters here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .dram import CellArray, Geometry, RemapTable, RowAddress, neighbor_sides
from .errors import UsageError

INF = math.inf


class FlipDirection(str, Enum):
    ONE_TO_ZERO = "one_to_zero"
    ZERO_TO_ONE = "zero_to_one"


class PatternGate(str, Enum):
    ALWAYS = "always"
    REQUIRES_STORED_ONE = "requires_stored_one"
    REQUIRES_STORED_ZERO = "requires_stored_zero"

    def admits(self, stored: int) -> bool:
        if self is PatternGate.ALWAYS:
            return True
        return stored == (1 if self is PatternGate.REQUIRES_STORED_ONE else 0)


class CoupledSide(str, Enum):
    EITHER = "either"
    LEFT_ONLY = "left_only"
    RIGHT_ONLY = "right_only"


_CELL_FIELDS = ("bank", "victim_row", "bit", "threshold", "flip_direction", "pattern_gate", "coupled_side")


@dataclass(frozen=True)
class VulnerableCell:
    bank: int
    victim_row: int
    bit: int
    threshold: int
    flip_direction: FlipDirection = FlipDirection.ONE_TO_ZERO
    pattern_gate: PatternGate = PatternGate.ALWAYS
    coupled_side: CoupledSide = CoupledSide.EITHER

    def __post_init__(self):
        object.__setattr__(self, "flip_direction", FlipDirection(self.flip_direction))
        object.__setattr__(self, "pattern_gate", PatternGate(self.pattern_gate))
        object.__setattr__(self, "coupled_side", CoupledSide(self.coupled_side))
        for name in ("bank", "victim_row", "bit", "threshold"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")
        if min(self.bank, self.victim_row, self.bit) < 0:
            raise ValueError("bank, victim_row and bit must be non-negative")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.bank, self.victim_row, self.bit)

    def to_dict(self) -> dict:
        return {
            "bank": self.bank,
            "victim_row": self.victim_row,
            "bit": self.bit,
            "threshold": self.threshold,
            "flip_direction": self.flip_direction.value,
            "pattern_gate": self.pattern_gate.value,
            "coupled_side": self.coupled_side.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VulnerableCell":
        unknown = set(d) - set(_CELL_FIELDS)
        if unknown:
            raise ValueError(f"unknown field(s) {sorted(unknown)}")
        missing = {"bank", "victim_row", "bit", "threshold"} - set(d)
        if missing:
            raise ValueError(f"missing field(s) {sorted(missing)}")
        return cls(**d)


class DisturbanceProfile:
    """The set of vulnerable cells of one simulated chip."""

    def __init__(self, cells: Iterable[VulnerableCell] = ()):
        self.cells: list[VulnerableCell] = list(cells)
        seen = set()
        for cell in self.cells:
            if cell.key in seen:
                raise ValueError(f"duplicate vulnerable cell (bank, victim_row, bit) = {cell.key}")
            seen.add(cell.key)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def __eq__(self, other):
        return isinstance(other, DisturbanceProfile) and self.cells == other.cells

    def validate(self, geometry: Geometry) -> None:
        for i, cell in enumerate(self.cells):
            if cell.bank >= geometry.banks:
                raise ValueError(f"cell {i}: bank {cell.bank} >= {geometry.banks}")
            if cell.victim_row >= geometry.rows_per_bank:
                raise ValueError(f"cell {i}: victim_row {cell.victim_row} >= {geometry.rows_per_bank}")
            if cell.bit >= geometry.row_size_bits:
                raise ValueError(f"cell {i}: bit {cell.bit} >= {geometry.row_size_bits}")

    @property
    def min_threshold(self) -> int | None:
        return min((c.threshold for c in self.cells), default=None)

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.cells]

    @classmethod
    def from_list(cls, items: list) -> "DisturbanceProfile":
        if not isinstance(items, list):
            raise ValueError("profile must be a JSON array of vulnerable cells")
        cells = []
        for i, item in enumerate(items):
            if not isinstance(item, dict):
                raise ValueError(f"[{i}]: expected an object")
            try:
                cells.append(VulnerableCell.from_dict(item))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"[{i}]: {exc}") from None
        return cls(cells)

    @classmethod
    def load(cls, path: str | Path) -> "DisturbanceProfile":
        with open(path) as f:
            return cls.from_list(json.load(f))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_list(), indent=2) + "\n")


def generate_profile(
    geometry: Geometry,
    cells: int,
    t_min: int = 32,
    t_max: int = 128,
    seed: int = 0,
    side_weights: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> DisturbanceProfile:
    """Random profile: ``cells`` distinct cells, thresholds uniform on ``[t_min, t_max]``.

    Each cell's pattern gate is either ``always`` or the gate matching its
    flip direction (a one_to_zero cell needs a stored one), with equal odds.
    """
    if not 1 <= t_min <= t_max:
        raise ValueError("need 1 <= t_min <= t_max")
    if cells > geometry.capacity_bits:
        raise ValueError("more cells requested than the geometry holds")
    rng = np.random.default_rng(seed)
    chosen: set[int] = set()
    # rejection sampling on flat bit indices; fine while cells << capacity
    while len(chosen) < cells:
        draw = rng.integers(0, geometry.capacity_bits, size=cells - len(chosen))
        for flat in draw.tolist():
            if len(chosen) < cells:
                chosen.add(flat)
    flats = sorted(chosen)
    n = len(flats)
    thresholds = rng.integers(t_min, t_max + 1, size=n).tolist()
    directions = rng.integers(0, 2, size=n).tolist()
    gated = rng.integers(0, 2, size=n).tolist()
    sides = rng.choice(3, size=n, p=np.asarray(side_weights) / sum(side_weights)).tolist()
    side_values = list(CoupledSide)
    out = []
    row_bits = geometry.row_size_bits
    for i, flat in enumerate(flats):
        row_flat, bit = divmod(flat, row_bits)
        bank, row = divmod(row_flat, geometry.rows_per_bank)
        direction = FlipDirection.ONE_TO_ZERO if directions[i] == 0 else FlipDirection.ZERO_TO_ONE
        if gated[i]:
            gate = (
                PatternGate.REQUIRES_STORED_ONE
                if direction is FlipDirection.ONE_TO_ZERO
                else PatternGate.REQUIRES_STORED_ZERO
            )
        else:
            gate = PatternGate.ALWAYS
        out.append(VulnerableCell(bank, row, bit, thresholds[i], direction, gate, side_values[sides[i]]))
    return DisturbanceProfile(out)


@dataclass(frozen=True)
class FlipEvent:
    time: int
    bank: int
    row: int
    bit: int
    direction: FlipDirection
    aggressor_row: int

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "bank": self.bank,
            "row": self.row,
            "bit": self.bit,
            "direction": FlipDirection(self.direction).value,
            "aggressor_row": self.aggressor_row,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlipEvent":
        return cls(d["time"], d["bank"], d["row"], d["bit"], FlipDirection(d["direction"]), d["aggressor_row"])


class HammerLedger:
    """Per-row exposure counters, stored flat at index ``bank * rows_per_bank + row``."""

    def __init__(self, geometry: Geometry):
        self.rows_per_bank = geometry.rows_per_bank
        n = geometry.total_rows
        self.left = [0] * n
        self.right = [0] * n
        self.last_refresh = [0.0] * n

    def index(self, addr: RowAddress) -> int:
        return addr.bank * self.rows_per_bank + addr.row

    def exposure(self, addr: RowAddress) -> tuple[int, int]:
        i = self.index(addr)
        return self.left[i], self.right[i]

    def last_refresh_time(self, addr: RowAddress) -> float:
        return self.last_refresh[self.index(addr)]


class DisturbanceEngine:
    """Applies activations and refreshes to a ledger and flips vulnerable cells.

    The engine owns the mapping from rows to their vulnerable cells and the
    per-window "already flipped" marks.
    """

    def __init__(
        self,
        geometry: Geometry,
        profile: DisturbanceProfile,
        cells: CellArray | None = None,
        ledger: HammerLedger | None = None,
        remap: RemapTable | None = None,
    ):
        profile.validate(geometry)
        self.geometry = geometry
        self.profile = profile
        self.cells = cells if cells is not None else CellArray(geometry)
        self.ledger = ledger if ledger is not None else HammerLedger(geometry)
        self.remap = remap
        rows = geometry.rows_per_bank
        self._rows = rows
        by_row: dict[int, list[VulnerableCell]] = {}
        for cell in profile:
            by_row.setdefault(cell.bank * rows + cell.victim_row, []).append(cell)
        for lst in by_row.values():
            lst.sort(key=lambda c: (c.threshold, c.bit))
        self.cells_by_row = by_row
        self._base_min = {i: lst[0].threshold for i, lst in by_row.items()}
        # smallest threshold among cells not yet flipped in the current window
        self.min_pending = [INF] * geometry.total_rows
        for i, t in self._base_min.items():
            self.min_pending[i] = t
        self._flipped: dict[int, set[int]] = {}
        self._neighbors = self._build_neighbor_tables(remap)
        self._last_time = -INF

    def _build_neighbor_tables(self, remap):
        rows = self._rows
        identity = [tuple(neighbor_sides(r, None, rows)) for r in range(rows)]
        tables = []
        for bank in range(self.geometry.banks):
            if remap is None or remap.is_identity(bank):
                tables.append(identity)
            else:
                tables.append([tuple(neighbor_sides(r, remap, rows, bank)) for r in range(rows)])
        return tables

    def neighbors(self, bank: int, row: int) -> tuple[tuple[int, bool], ...]:
        return self._neighbors[bank][row]

    def on_activate(self, agg: RowAddress, time) -> list[FlipEvent]:
        """Record one activation of ``agg`` at ``time`` and return any resulting flips."""
        self.geometry.check(agg)
        if time < self._last_time:
            raise UsageError(f"activation time {time} precedes previous activation at {self._last_time}")
        self._last_time = time
        bank, row = agg
        base = bank * self._rows
        left, right, pending = self.ledger.left, self.ledger.right, self.min_pending
        flips: list[FlipEvent] = []
        for victim, from_left in self._neighbors[bank][row]:
            i = base + victim
            if from_left:
                left[i] += 1
            else:
                right[i] += 1
            if left[i] + right[i] >= pending[i]:
                flips.extend(self.evaluate(bank, victim, time, row))
        return flips

    def evaluate(self, bank: int, victim: int, time, aggressor_row: int) -> list[FlipEvent]:
        """Flip every cell of ``(bank, victim)`` whose exposure and gate are satisfied."""
        i = bank * self._rows + victim
        l, r = self.ledger.left[i], self.ledger.right[i]
        total = l + r
        flipped = self._flipped.setdefault(i, set())
        out = []
        remaining = INF
        for cell in self.cells_by_row[i]:
            if cell.bit in flipped:
                continue
            if cell.threshold > total:
                remaining = min(remaining, cell.threshold)
                break
            side = cell.coupled_side
            exposure = total if side is CoupledSide.EITHER else (l if side is CoupledSide.LEFT_ONLY else r)
            stored = self.cells.bit(bank, victim, cell.bit)
            if exposure < cell.threshold or not cell.pattern_gate.admits(stored):
                remaining = min(remaining, cell.threshold)
                continue
            self.cells.invert_bit(bank, victim, cell.bit)
            flipped.add(cell.bit)
            direction = FlipDirection.ONE_TO_ZERO if stored else FlipDirection.ZERO_TO_ONE
            out.append(FlipEvent(time, bank, victim, cell.bit, direction, aggressor_row))
        self.min_pending[i] = remaining
        return out

    def on_refresh(self, victim: RowAddress, time) -> None:
        """Restore charge: zero exposure and start a new window. Flipped data stays flipped."""
        self.refresh_index(victim.bank * self._rows + victim.row, time)

    def refresh_index(self, i: int, time) -> None:
        ledger = self.ledger
        ledger.left[i] = 0
        ledger.right[i] = 0
        ledger.last_refresh[i] = time
        if i in self._flipped:
            del self._flipped[i]
            self.min_pending[i] = self._base_min[i]

    def flipped_this_window(self, addr: RowAddress) -> frozenset[int]:
        return frozenset(self._flipped.get(addr.bank * self._rows + addr.row, ()))
