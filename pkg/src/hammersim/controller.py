"""Closed-page memory controller: request traces to ACT/PRE, periodic refresh, mitigations.

Every request opens its row, accesses it and closes it again, so each
request is exactly one activation. A bank accepts a new activation ``t_rc``
after the previous one; different banks proceed in parallel and there is no
bus model. Time is kept in integer nanoseconds.

Refresh is staggered: slot ``j`` fires at ``j * t_refw_eff / rows_per_bank``
and refreshes row ``j % rows_per_bank`` in every bank. Refresh slots are
compared against activation times in exact integer arithmetic (times scaled
by ``k * rows_per_bank``), so windows that do not divide evenly by ``t_rc``
behave exactly. A row cycle ``[t, t + t_rc)`` only disturbs a victim whose
window contains the whole cycle; a refresh landing inside the cycle restores
the victim and the straddling activation never counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, NamedTuple

import numpy as np

from .dram import CellArray, Geometry, RemapTable, RowAddress, fill_pattern
from .disturbance import DisturbanceEngine, DisturbanceProfile, FlipEvent
from .errors import AddressRangeError, TraceFormatError

if TYPE_CHECKING:
    from .attacks import PageMap

DEFAULT_T_RC = 50  # ns
DEFAULT_T_REFW = 64_000_000  # ns (64 ms)


def _as_int(name: str, value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, int):
        raise ValueError(f"{name} must be an integer number of nanoseconds, got {value!r}")
    return value


@dataclass(frozen=True)
class TimingParams:
    t_rc: int = DEFAULT_T_RC
    t_refw: int = DEFAULT_T_REFW
    refresh_multiplier_k: int = 1

    def __post_init__(self):
        for name in ("t_rc", "t_refw", "refresh_multiplier_k"):
            object.__setattr__(self, name, _as_int(name, getattr(self, name)))
        if self.t_rc <= 0:
            raise ValueError("t_rc must be > 0")
        if self.t_refw < self.t_rc:
            raise ValueError("t_refw must be >= t_rc")
        if self.refresh_multiplier_k < 1:
            raise ValueError("refresh_multiplier_k must be >= 1")

    @property
    def effective_window(self) -> Fraction:
        return Fraction(self.t_refw, self.refresh_multiplier_k)

    def to_dict(self) -> dict:
        return {"t_rc": self.t_rc, "t_refw": self.t_refw, "refresh_multiplier_k": self.refresh_multiplier_k}


class PolicyKind(str, Enum):
    NONE = "none"
    INCREASED_REFRESH = "increased_refresh"
    PARA = "para"


@dataclass(frozen=True)
class MitigationPolicy:
    kind: PolicyKind = PolicyKind.NONE
    k: int = 1
    p: float = 0.0
    rng_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ValueError(f"k must be an integer >= 1, got {self.k!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p!r}")
        if self.kind is PolicyKind.PARA:
            if self.rng_seed is None:
                raise ValueError("para policy requires rng_seed")
            if not 0 <= self.rng_seed < 2**64:
                raise ValueError("rng_seed must be a 64-bit unsigned integer")

    @classmethod
    def none(cls) -> "MitigationPolicy":
        return cls()

    @classmethod
    def increased_refresh(cls, k: int) -> "MitigationPolicy":
        return cls(PolicyKind.INCREASED_REFRESH, k=k)

    @classmethod
    def para(cls, p: float, seed: int) -> "MitigationPolicy":
        return cls(PolicyKind.PARA, p=float(p), rng_seed=seed)

    def effective_timing(self, timing: TimingParams) -> TimingParams:
        """The policy's multiplier stacks on top of the timing's baseline multiplier."""
        if self.kind is PolicyKind.INCREASED_REFRESH:
            return replace(timing, refresh_multiplier_k=timing.refresh_multiplier_k * self.k)
        return timing

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is PolicyKind.INCREASED_REFRESH:
            d["k"] = self.k
        elif self.kind is PolicyKind.PARA:
            d["p"] = self.p
            d["rng_seed"] = self.rng_seed
        return d


class Request(NamedTuple):
    op: str  # "R" or "W"
    addr: int
    data: bytes | None = None


def read(addr: int) -> Request:
    return Request("R", addr)


def write(addr: int, data: bytes) -> Request:
    return Request("W", addr, bytes(data))


def _parse_hex(token: str) -> int:
    return int(token, 16)


def parse_trace(lines: Iterable[str], geometry: Geometry | None = None) -> list[Request]:
    """Parse ``R <hex-addr>`` / ``W <hex-addr> <hex-bytes>`` lines; ``#`` starts a comment line."""
    out = []
    cap = geometry.capacity_bytes if geometry is not None else None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        op = parts[0].upper()
        if op not in ("R", "W"):
            raise TraceFormatError(f"unknown operation {parts[0]!r}", lineno)
        if op == "R" and len(parts) != 2:
            raise TraceFormatError("expected 'R <hex-addr>'", lineno)
        if op == "W" and len(parts) != 3:
            raise TraceFormatError("expected 'W <hex-addr> <hex-byte-pattern>'", lineno)
        try:
            addr = _parse_hex(parts[1])
        except ValueError:
            raise TraceFormatError(f"bad hex address {parts[1]!r}", lineno) from None
        if addr < 0:
            raise TraceFormatError("negative address", lineno)
        if cap is not None and addr >= cap:
            raise AddressRangeError(f"line {lineno}: address {addr:#x} out of range (capacity {cap} bytes)")
        data = None
        if op == "W":
            token = parts[2][2:] if parts[2].lower().startswith("0x") else parts[2]
            try:
                data = bytes.fromhex(token)
            except ValueError:
                raise TraceFormatError(f"bad hex byte pattern {parts[2]!r}", lineno) from None
            if not data:
                raise TraceFormatError("empty byte pattern", lineno)
        out.append(Request(op, addr, data))
    return out


def load_trace(path: str | Path, geometry: Geometry | None = None) -> list[Request]:
    with open(path) as f:
        return parse_trace(f, geometry)


def format_trace(trace: Iterable[Request]) -> str:
    lines = []
    for req in trace:
        if req.op == "W":
            lines.append(f"W {req.addr:#x} {req.data.hex()}")
        else:
            lines.append(f"R {req.addr:#x}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class SimReport:
    activations: int = 0
    periodic_refreshes: int = 0
    para_refreshes: int = 0
    flips: list[FlipEvent] = field(default_factory=list)
    flips_in_victim_pages: int = 0
    simulated_time: int = 0
    trace_requests: int = 0

    def to_dict(self) -> dict:
        return {
            "activations": self.activations,
            "periodic_refreshes": self.periodic_refreshes,
            "para_refreshes": self.para_refreshes,
            "flips": [f.to_dict() for f in self.flips],
            "flips_in_victim_pages": self.flips_in_victim_pages,
            "simulated_time": self.simulated_time,
            "trace_requests": self.trace_requests,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimReport":
        return cls(
            activations=d["activations"],
            periodic_refreshes=d["periodic_refreshes"],
            para_refreshes=d["para_refreshes"],
            flips=[FlipEvent.from_dict(f) for f in d["flips"]],
            flips_in_victim_pages=d["flips_in_victim_pages"],
            simulated_time=d["simulated_time"],
            trace_requests=d["trace_requests"],
        )


class RefreshEvent(NamedTuple):
    time: Fraction  # ns
    row: int


def periodic_refresh_schedule(timing: TimingParams, rows_per_bank: int) -> Iterator[RefreshEvent]:
    """Endless stream of staggered refresh events, in time order."""
    step = Fraction(timing.t_refw, timing.refresh_multiplier_k * rows_per_bank)
    j = 0
    while True:
        yield RefreshEvent(j * step, j % rows_per_bank)
        j += 1


class ParaRng:
    """Uniform [0, 1) stream for PARA draws, pulled from numpy in blocks.

    Block size does not affect the sequence: PCG64 doubles come out the same
    whether drawn one at a time or in bulk.
    """

    def __init__(self, seed: int, block: int = 4096):
        self.generator = np.random.default_rng(seed)
        self._block = block
        self._buf: list[float] = []
        self._pos = 0
        self.draws = 0

    def uniform(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self.generator.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        self.draws += 1
        return u


def para_on_close(closed: RowAddress, policy: MitigationPolicy, rng: ParaRng, engine: DisturbanceEngine, time) -> int:
    """One PARA decision for a row close; returns the number of rows refreshed."""
    u = rng.uniform()
    if u < policy.p:
        victims = engine.neighbors(closed.bank, closed.row)
        for victim, _ in victims:
            engine.on_refresh(RowAddress(closed.bank, victim), time)
        return len(victims)
    return 0


class Simulator:
    """Mutable state of one simulation run. Feed requests with :meth:`run`."""

    def __init__(
        self,
        geometry: Geometry,
        timing: TimingParams,
        policy: MitigationPolicy,
        profile: DisturbanceProfile,
        remap: RemapTable | None = None,
        fill: bytes = b"\x00",
        rng: ParaRng | None = None,
    ):
        self.geometry = geometry
        self.policy = policy
        self.timing = policy.effective_timing(timing)
        self.engine = DisturbanceEngine(geometry, profile, CellArray(geometry, fill), remap=remap)
        self.rng = None
        if policy.kind is PolicyKind.PARA:
            self.rng = rng if rng is not None else ParaRng(policy.rng_seed)
        self.activations = 0
        self.periodic_refreshes = 0
        self.para_refreshes = 0
        self.requests = 0
        self.flips: list[FlipEvent] = []
        self._now = 0
        self._bank_ready = [0] * geometry.banks
        self._next_slot = 0

    @property
    def cells(self) -> CellArray:
        return self.engine.cells

    @property
    def ledger(self):
        return self.engine.ledger

    @property
    def simulated_time(self) -> int:
        return max(self._bank_ready)

    def _refresh_slot(self, slot: int, time: float) -> None:
        rows = self.geometry.rows_per_bank
        row = slot % rows
        refresh = self.engine.refresh_index
        for bank in range(self.geometry.banks):
            refresh(bank * rows + row, time)
        self.periodic_refreshes += self.geometry.banks

    def run(self, trace: Iterable[Request]) -> list[FlipEvent]:
        """Simulate ``trace`` and return the flips it caused (also appended to ``self.flips``)."""
        g = self.geometry
        rows, banks, row_bytes, cap = g.rows_per_bank, g.banks, g.row_bytes, g.capacity_bytes
        t_rc = self.timing.t_rc
        slot_step = self.timing.t_refw
        scale = self.timing.refresh_multiplier_k * rows
        engine = self.engine
        left, right, pending = engine.ledger.left, engine.ledger.right, engine.min_pending
        neighbors = engine._neighbors
        evaluate = engine.evaluate
        refresh_index = engine.refresh_index
        cells = engine.cells
        bank_ready = self._bank_ready
        now = self._now
        slot = self._next_slot
        slot_time = slot * slot_step
        para = self.rng is not None
        p = self.policy.p
        uniform = self.rng.uniform if para else None
        flips: list[FlipEvent] = []
        activations = 0
        para_refreshes = 0
        n = self.requests
        try:
            for req in trace:
                n += 1
                try:
                    op, addr, data = req
                except (TypeError, ValueError):
                    raise TraceFormatError(f"malformed request {req!r}", n) from None
                if type(addr) is not int:
                    raise TraceFormatError(f"address must be an integer, got {addr!r}", n)
                if not 0 <= addr < cap:
                    raise AddressRangeError(f"request {n}: address {addr:#x} out of range (capacity {cap} bytes)")
                row, bank = divmod(addr // row_bytes, banks)
                t = bank_ready[bank]
                if t < now:
                    t = now
                now = t
                end = t + t_rc
                bank_ready[bank] = end
                ts = t * scale
                if slot_time <= ts:
                    self._next_slot = slot  # keep counters consistent if _refresh_slot raises
                    while slot_time <= ts:
                        self._refresh_slot(slot, slot_time / scale)
                        slot += 1
                        slot_time += slot_step
                if op == "W":
                    if not data:
                        raise TraceFormatError("write without a data pattern", n)
                    cells.write_row(RowAddress(bank, row), fill_pattern(data, row_bytes))
                elif op != "R":
                    raise TraceFormatError(f"unknown operation {op!r}", n)
                base = bank * rows
                shielded = None
                if slot_time < end * scale:
                    # refreshes landing inside this row cycle
                    shielded = set()
                    j, jt, es = slot, slot_time, end * scale
                    while jt < es:
                        shielded.add(j % rows)
                        j += 1
                        jt += slot_step
                victims = neighbors[bank][row]
                for victim, from_left in victims:
                    if shielded is not None and victim in shielded:
                        continue
                    i = base + victim
                    if from_left:
                        left[i] += 1
                    else:
                        right[i] += 1
                    if left[i] + right[i] >= pending[i]:
                        flips.extend(evaluate(bank, victim, t, row))
                activations += 1
                if para and uniform() < p:
                    for victim, _ in victims:
                        refresh_index(base + victim, end)
                    para_refreshes += len(victims)
        finally:
            self._now = now
            self._next_slot = slot
            self.requests = n
            self.activations += activations
            self.para_refreshes += para_refreshes
            self.flips.extend(flips)
        return flips

    def _pending_refreshes(self) -> int:
        """Refresh events between the last processed slot and the end of simulated time."""
        end = self.simulated_time * self.timing.refresh_multiplier_k * self.geometry.rows_per_bank
        step = self.timing.t_refw
        first = self._next_slot * step
        if first >= end:
            return 0
        return -(-(end - first) // step) * self.geometry.banks

    def report(self, page_map: "PageMap | None" = None) -> SimReport:
        in_victim_pages = 0
        if page_map is not None:
            in_victim_pages = sum(1 for f in self.flips if page_map.is_breach(f.bank, f.row))
        return SimReport(
            activations=self.activations,
            periodic_refreshes=self.periodic_refreshes + self._pending_refreshes(),
            para_refreshes=self.para_refreshes,
            flips=list(self.flips),
            flips_in_victim_pages=in_victim_pages,
            simulated_time=self.simulated_time,
            trace_requests=self.requests,
        )


def run_trace(
    trace: Iterable[Request],
    geometry: Geometry,
    timing: TimingParams,
    policy: MitigationPolicy,
    profile: DisturbanceProfile,
    remap: RemapTable | None = None,
    page_map: "PageMap | None" = None,
    fill: bytes = b"\x00",
) -> SimReport:
    sim = Simulator(geometry, timing, policy, profile, remap=remap, fill=fill)
    sim.run(trace)
    return sim.report(page_map)
