"""DRAM topology: geometry, address mapping, physical row adjacency and cell storage.

Single channel, single rank. Consecutive row-sized blocks of the byte address
space alternate between banks (row interleaving). Bits inside a row are
numbered LSB-first within each byte, so column ``8*b + j`` is bit ``j`` of
byte ``b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import AddressRangeError, TraceFormatError

_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class Geometry:
    banks: int = 1
    rows_per_bank: int = 8
    row_size_bits: int = 8192
    page_size_bits: int | None = None  # defaults to one page per row

    def __post_init__(self):
        if self.page_size_bits is None:
            object.__setattr__(self, "page_size_bits", self.row_size_bits)
        for name in ("banks", "rows_per_bank", "row_size_bits", "page_size_bits"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if self.banks < 1:
            raise ValueError("banks must be >= 1")
        if self.rows_per_bank < 2:
            raise ValueError("rows_per_bank must be >= 2")
        if self.row_size_bits < 8 or self.row_size_bits % 8:
            raise ValueError("row_size_bits must be a positive multiple of 8")
        if self.page_size_bits < 1:
            raise ValueError("page_size_bits must be >= 1")
        page, row = self.page_size_bits, self.row_size_bits
        if row % page and page % row:
            raise ValueError("page_size_bits must divide row_size_bits or be a multiple of it")
        if self.banks * self.rows_per_bank * self.row_size_bits > _U64_MAX:
            raise ValueError("total capacity in bits does not fit in 64 bits")

    @property
    def row_bytes(self) -> int:
        return self.row_size_bits // 8

    @property
    def capacity_bits(self) -> int:
        return self.banks * self.rows_per_bank * self.row_size_bits

    @property
    def capacity_bytes(self) -> int:
        return self.capacity_bits // 8

    @property
    def total_rows(self) -> int:
        return self.banks * self.rows_per_bank

    def check(self, addr: "RowAddress") -> None:
        if not (0 <= addr.bank < self.banks and 0 <= addr.row < self.rows_per_bank):
            raise AddressRangeError(
                f"row address {tuple(addr)} outside {self.banks} banks x {self.rows_per_bank} rows"
            )

    def row_base_address(self, bank: int, row: int) -> int:
        """Byte address of the first byte of ``(bank, row)``; inverse of :func:`map_address`."""
        self.check(RowAddress(bank, row))
        return (row * self.banks + bank) * self.row_bytes

    def page_index(self, bank: int, row: int, column: int = 0) -> int:
        """OS page number holding the given bit."""
        bit_addr = self.row_base_address(bank, row) * 8 + column
        return bit_addr // self.page_size_bits

    def to_dict(self) -> dict:
        return {
            "banks": self.banks,
            "rows_per_bank": self.rows_per_bank,
            "row_size_bits": self.row_size_bits,
            "page_size_bits": self.page_size_bits,
        }


class RowAddress(NamedTuple):
    bank: int
    row: int


def map_address(addr: int, geometry: Geometry) -> tuple[RowAddress, int]:
    """Map a byte address to ``(RowAddress, column)`` where column is a bit offset."""
    cap = geometry.capacity_bytes
    if not 0 <= addr < cap:
        raise AddressRangeError(f"address {addr:#x} out of range (capacity {cap} bytes)")
    row_bytes = geometry.row_bytes
    block, offset = divmod(addr, row_bytes)
    row, bank = divmod(block, geometry.banks)
    return RowAddress(bank, row), offset * 8


class RemapTable:
    """Per-bank bijection from logical row index to physical row position.

    Banks without an explicit mapping use the identity.
    """

    def __init__(self, rows_per_bank: int, mapping: Mapping[int, Sequence[int]] | None = None):
        self.rows_per_bank = rows_per_bank
        self._to_phys: dict[int, tuple[int, ...]] = {}
        self._to_logical: dict[int, tuple[int, ...]] = {}
        for bank, perm in (mapping or {}).items():
            perm = tuple(int(x) for x in perm)
            if sorted(perm) != list(range(rows_per_bank)):
                raise ValueError(f"remap for bank {bank} is not a permutation of 0..{rows_per_bank - 1}")
            if perm == tuple(range(rows_per_bank)):
                continue
            inverse = [0] * rows_per_bank
            for logical, phys in enumerate(perm):
                inverse[phys] = logical
            self._to_phys[int(bank)] = perm
            self._to_logical[int(bank)] = tuple(inverse)

    @classmethod
    def identity(cls, rows_per_bank: int) -> "RemapTable":
        return cls(rows_per_bank)

    @classmethod
    def swap(cls, rows_per_bank: int, a: int, b: int, bank: int = 0) -> "RemapTable":
        """Identity except that logical rows ``a`` and ``b`` trade physical positions."""
        perm = list(range(rows_per_bank))
        perm[a], perm[b] = perm[b], perm[a]
        return cls(rows_per_bank, {bank: perm})

    def is_identity(self, bank: int | None = None) -> bool:
        if bank is None:
            return not self._to_phys
        return bank not in self._to_phys

    def physical(self, row: int, bank: int = 0) -> int:
        perm = self._to_phys.get(bank)
        return row if perm is None else perm[row]

    def logical(self, position: int, bank: int = 0) -> int:
        inv = self._to_logical.get(bank)
        return position if inv is None else inv[position]

    def remapped_banks(self) -> list[int]:
        return sorted(self._to_phys)

    def to_dict(self) -> dict[str, list[int]]:
        return {str(bank): list(perm) for bank, perm in sorted(self._to_phys.items())}


def neighbor_sides(row: int, remap: RemapTable | None, rows_per_bank: int, bank: int = 0) -> list[tuple[int, bool]]:
    """Physical neighbours of ``row`` as ``(victim, aggressor_is_left_of_victim)`` pairs."""
    if not 0 <= row < rows_per_bank:
        raise AddressRangeError(f"row {row} outside 0..{rows_per_bank - 1}")
    if remap is None or remap.is_identity(bank):
        pos, to_logical = row, None
    else:
        pos, to_logical = remap.physical(row, bank), remap.logical
    out = []
    # the aggressor sits left of the victim one position above it, and vice versa
    if pos > 0:
        out.append((pos - 1, False))
    if pos < rows_per_bank - 1:
        out.append((pos + 1, True))
    if to_logical is not None:
        out = [(to_logical(p, bank), left) for p, left in out]
    return out


def physical_neighbors(row: int, remap: RemapTable | None = None, rows_per_bank: int = 8, bank: int = 0) -> frozenset[int]:
    """Logical rows physically adjacent (+-1) to ``row``."""
    return frozenset(v for v, _ in neighbor_sides(row, remap, rows_per_bank, bank))


def get_bit(data: bytes | bytearray, bit: int) -> int:
    return (data[bit >> 3] >> (bit & 7)) & 1


def fill_pattern(pattern: bytes, length: int) -> bytes:
    """Repeat ``pattern`` cyclically to exactly ``length`` bytes."""
    if not pattern:
        raise TraceFormatError("empty byte pattern")
    reps, rem = divmod(length, len(pattern))
    return bytes(pattern) * reps + bytes(pattern[:rem])


class CellArray:
    """Stored row contents, materialized lazily from ``fill``."""

    def __init__(self, geometry: Geometry, fill: bytes = b"\x00"):
        self.geometry = geometry
        self._fill = fill_pattern(fill, geometry.row_bytes)
        self._rows: dict[tuple[int, int], bytearray] = {}

    def _row(self, bank: int, row: int) -> bytearray:
        data = self._rows.get((bank, row))
        if data is None:
            data = self._rows[(bank, row)] = bytearray(self._fill)
        return data

    def read_row(self, addr: RowAddress) -> bytes:
        self.geometry.check(addr)
        return bytes(self._rows.get((addr.bank, addr.row), self._fill))

    def write_row(self, addr: RowAddress, data: bytes) -> None:
        self.geometry.check(addr)
        if len(data) != self.geometry.row_bytes:
            raise TraceFormatError(
                f"row data is {len(data) * 8} bits, expected {self.geometry.row_size_bits}"
            )
        self._rows[(addr.bank, addr.row)] = bytearray(data)

    def write_pattern(self, addr: RowAddress, pattern: bytes) -> None:
        self.write_row(addr, fill_pattern(pattern, self.geometry.row_bytes))

    def bit(self, bank: int, row: int, bit: int) -> int:
        data = self._rows.get((bank, row), self._fill)
        return get_bit(data, bit)

    def invert_bit(self, bank: int, row: int, bit: int) -> int:
        """Invert one stored bit and return its new value."""
        data = self._row(bank, row)
        data[bit >> 3] ^= 1 << (bit & 7)
        return get_bit(data, bit)

    def touched_rows(self) -> Iterable[tuple[int, int]]:
        return self._rows.keys()
