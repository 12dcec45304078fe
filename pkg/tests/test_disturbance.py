import pytest
from hypothesis import given, settings, strategies as st

from hammersim.disturbance import (
    CoupledSide,
    DisturbanceEngine,
    DisturbanceProfile,
    FlipDirection,
    PatternGate,
    VulnerableCell,
    generate_profile,
)
from hammersim.dram import CellArray, Geometry, RowAddress
from hammersim.errors import UsageError

G = Geometry(banks=1, rows_per_bank=8, row_size_bits=64)
ONES = b"\xff" * 8
ZEROS = b"\x00" * 8


def cell(row=3, bit=17, threshold=5, gate=PatternGate.REQUIRES_STORED_ONE, side=CoupledSide.EITHER,
         direction=FlipDirection.ONE_TO_ZERO, bank=0):
    return VulnerableCell(bank, row, bit, threshold, direction, gate, side)


def engine(cells, victim_data=ONES, victim_row=3, geometry=G):
    store = CellArray(geometry)
    store.write_row(RowAddress(0, victim_row), victim_data)
    return DisturbanceEngine(geometry, DisturbanceProfile(cells), store)


def hammer(eng, rows, start=0):
    """Activate each row in turn; return (activation index, flip) pairs."""
    out = []
    for i, r in enumerate(rows, start):
        for f in eng.on_activate(RowAddress(0, r), i):
            out.append((i, f))
    return out


def test_flip_on_fifth_activation():
    eng = engine([cell()])
    flips = hammer(eng, [2] * 5)
    assert len(flips) == 1
    idx, f = flips[0]
    assert idx == 4
    assert (f.row, f.bit, f.aggressor_row, f.direction) == (3, 17, 2, FlipDirection.ONE_TO_ZERO)
    assert eng.cells.bit(0, 3, 17) == 0


def test_below_threshold_no_flip():
    assert hammer(engine([cell()]), [2] * 4) == []


def test_pattern_gate_blocks_on_zeros():
    assert hammer(engine([cell()], ZEROS), [2] * 500) == []


def test_double_sided_exposure_adds():
    eng = engine([cell()])
    flips = hammer(eng, [2, 2, 2, 4, 4])
    assert [(i, f.aggressor_row) for i, f in flips] == [(4, 4)]


def test_side_only_cells():
    left = cell(bit=1, side=CoupledSide.LEFT_ONLY, threshold=3, gate=PatternGate.ALWAYS)
    right = cell(bit=2, side=CoupledSide.RIGHT_ONLY, threshold=3, gate=PatternGate.ALWAYS)
    eng = engine([left, right])
    # row 2 is the physical left neighbour of row 3
    flips = hammer(eng, [4, 4, 2, 2, 2])
    assert [(i, f.bit) for i, f in flips] == [(4, 1)]
    assert eng.ledger.exposure(RowAddress(0, 3)) == (3, 2)
    flips = hammer(eng, [4], start=5)
    assert [(i, f.bit) for i, f in flips] == [(5, 2)]


def test_refresh_splits_window():
    eng = engine([cell()])
    assert hammer(eng, [2] * 4) == []
    eng.on_refresh(RowAddress(0, 3), 4)
    assert eng.ledger.exposure(RowAddress(0, 3)) == (0, 0)
    assert eng.ledger.last_refresh_time(RowAddress(0, 3)) == 4
    assert hammer(eng, [2] * 4, start=5) == []


def test_refresh_on_zero_exposure_is_noop():
    eng = engine([cell()])
    eng.on_refresh(RowAddress(0, 5), 0)
    assert eng.ledger.exposure(RowAddress(0, 5)) == (0, 0)


def test_no_second_flip_when_gate_now_fails():
    eng = engine([cell()])
    assert len(hammer(eng, [2] * 5)) == 1
    eng.on_refresh(RowAddress(0, 3), 10)
    assert hammer(eng, [2] * 5, start=11) == []
    # flipped data persists across refresh
    assert eng.cells.bit(0, 3, 17) == 0


def test_always_gate_flips_again_next_window():
    eng = engine([cell(gate=PatternGate.ALWAYS)])
    assert len(hammer(eng, [2] * 10)) == 1  # once per window
    eng.on_refresh(RowAddress(0, 3), 20)
    second = hammer(eng, [2] * 5, start=21)
    assert len(second) == 1
    assert second[0][1].direction == FlipDirection.ZERO_TO_ONE
    assert eng.cells.bit(0, 3, 17) == 1


def test_time_must_not_go_backwards():
    eng = engine([cell()])
    eng.on_activate(RowAddress(0, 2), 10)
    with pytest.raises(UsageError):
        eng.on_activate(RowAddress(0, 2), 9)


def _count_oracle(threshold, n):
    """Flips for a single cell hammered n times with no refresh: 1 iff n >= threshold."""
    return 1 if n >= threshold else 0


@pytest.mark.parametrize("t", range(1, 65))
def test_threshold_exactness(t):
    for n in (t - 1, t):
        eng = engine([cell(threshold=t)])
        assert len(hammer(eng, [2] * n)) == _count_oracle(t, n)


def test_aggressor_rows_never_modified():
    g = Geometry(banks=1, rows_per_bank=4, row_size_bits=64)
    # every cell of every row vulnerable at threshold 1
    cells = [VulnerableCell(0, r, b, 1, pattern_gate=PatternGate.ALWAYS) for r in range(4) for b in range(64)]
    eng = DisturbanceEngine(g, DisturbanceProfile(cells))
    for i in range(20):
        agg = i % 4
        before = eng.cells.read_row(RowAddress(0, agg))
        flips = eng.on_activate(RowAddress(0, agg), i)
        assert eng.cells.read_row(RowAddress(0, agg)) == before
        assert all(f.row != agg and f.aggressor_row == agg for f in flips)


def test_profile_validation():
    with pytest.raises(ValueError, match="duplicate"):
        DisturbanceProfile([cell(), cell(threshold=9)])
    with pytest.raises(ValueError):
        cell(threshold=0)
    with pytest.raises(ValueError):
        DisturbanceProfile([cell(bit=64)]).validate(G)
    with pytest.raises(ValueError):
        DisturbanceProfile([cell(row=8)]).validate(G)


def test_profile_json_roundtrip(tmp_path):
    prof = generate_profile(Geometry(banks=2, rows_per_bank=16, row_size_bits=256), 40, 32, 128, seed=5)
    path = tmp_path / "p.json"
    prof.dump(path)
    assert DisturbanceProfile.load(path) == prof
    with pytest.raises(ValueError, match="unknown"):
        DisturbanceProfile.from_list([{**cell().to_dict(), "extra": 1}])


def test_generate_profile_properties():
    g = Geometry(banks=2, rows_per_bank=16, row_size_bits=256)
    a = generate_profile(g, 200, 32, 128, seed=11)
    b = generate_profile(g, 200, 32, 128, seed=11)
    assert a == b
    assert len(a) == 200
    a.validate(g)
    assert all(32 <= c.threshold <= 128 for c in a)
    assert min(c.threshold for c in a) < 50 and max(c.threshold for c in a) > 110
    for c in a:
        if c.pattern_gate is PatternGate.REQUIRES_STORED_ONE:
            assert c.flip_direction is FlipDirection.ONE_TO_ZERO
        if c.pattern_gate is PatternGate.REQUIRES_STORED_ZERO:
            assert c.flip_direction is FlipDirection.ZERO_TO_ONE
    assert generate_profile(g, 200, 32, 128, seed=12) != a


rows_strategy = st.lists(st.integers(0, 7), max_size=120)
cells_strategy = st.lists(
    st.builds(
        VulnerableCell,
        bank=st.just(0),
        victim_row=st.integers(0, 7),
        bit=st.integers(0, 63),
        threshold=st.integers(1, 20),
        flip_direction=st.sampled_from(list(FlipDirection)),
        pattern_gate=st.sampled_from(list(PatternGate)),
        coupled_side=st.sampled_from(list(CoupledSide)),
    ),
    max_size=12,
    unique_by=lambda c: c.key,
)


def _run(cells, rows, data=ONES):
    store = CellArray(G, data[:1])
    eng = DisturbanceEngine(G, DisturbanceProfile(cells), store)
    return [f for _, f in hammer(eng, rows)], eng


@settings(max_examples=150)
@given(cells_strategy, rows_strategy, st.integers(0, 120))
def test_prefix_monotonicity_and_determinism(cells, rows, cut):
    full, _ = _run(cells, rows)
    again, _ = _run(cells, rows)
    assert full == again
    prefix, _ = _run(cells, rows[:cut])
    assert full[: len(prefix)] == prefix


@settings(max_examples=150)
@given(cells_strategy, rows_strategy, st.sampled_from([ONES, ZEROS]))
def test_flip_log_matches_data_difference(cells, rows, data):
    flips, eng = _run(cells, rows, data)
    for r in range(8):
        got = int.from_bytes(eng.cells.read_row(RowAddress(0, r)), "little")
        want = int.from_bytes(data, "little")
        for f in flips:
            if f.row == r:
                want ^= 1 << f.bit
        assert got == want


def _gate_oracle(cell, stored):
    if cell.pattern_gate is PatternGate.ALWAYS:
        return True
    return stored == (1 if cell.pattern_gate is PatternGate.REQUIRES_STORED_ONE else 0)


@settings(max_examples=150)
@given(cells_strategy, st.integers(0, 7), st.integers(1, 60))
def test_pattern_dependence(cells, agg, n):
    # one aggressor, no refresh: each neighbour cell flips iff its side exposure reaches threshold and gate admits
    for data, stored in ((ONES, 1), (ZEROS, 0)):
        flips, _ = _run(cells, [agg] * n, data)
        got = {(f.row, f.bit) for f in flips}
        want = set()
        for c in cells:
            if abs(c.victim_row - agg) != 1:
                continue
            from_left = agg < c.victim_row
            side_ok = (
                c.coupled_side is CoupledSide.EITHER
                or (c.coupled_side is CoupledSide.LEFT_ONLY and from_left)
                or (c.coupled_side is CoupledSide.RIGHT_ONLY and not from_left)
            )
            if side_ok and n >= c.threshold and _gate_oracle(c, stored):
                want.add((c.victim_row, c.bit))
        assert got == want
