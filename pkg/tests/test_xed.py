"""Catch-word protocol, diagnosis, erasure Double-Chipkill and lifetime rules."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memshield.codes import CodecError
from memshield.faultmodel import (
    DDR3_X4_CHIPKILL,
    DDR3_X8,
    ConfigError,
    FaultRecord,
    Footprint,
    Granularity,
    IndexSet,
    Permanence,
)
from memshield.simkernel import Verdict
from memshield.xed import (
    ChipState,
    Outcome,
    Transfer,
    XedDimm,
    build_overlap_scheme,
    chip_respond,
    chipkill_encode,
    collision_check_and_rotate,
    erasure_double_chipkill,
    false_identification_probability,
    interline_diagnosis,
    intraline_diagnosis,
    multi_catchword_probability,
    ondie_codec,
    ondie_miss_rate,
    reconstruct,
    transient_word_due_probability,
    xed_evaluate,
)

u64 = st.integers(0, 2**64 - 1)
ALL = 2**64 - 1


def stuck_flip(dimm: XedDimm, chip: int, row: int, col: int, bits: list[int]) -> None:
    """Permanently invert ``bits`` of a chip's stored codeword."""
    raw = dimm.raw(chip, row, col)
    mask = sum(1 << b for b in bits)
    dimm.inject_permanent(chip, row, col, mask, ~raw & mask)


def written(dimm: XedDimm, row: int, col: int, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    data = [int(x) for x in rng.integers(0, 2**63, size=dimm.data_chips)]
    dimm.write(row, col, data)
    return data


# Chip response ---------------------------------------------------------------------


def test_chip_respond_examples():
    codec = ondie_codec("crc8atm", 64)
    chip = ChipState(cwr=0xABCD, codec=codec)
    cw = codec.encode(42)
    assert chip_respond(chip, cw) == 42
    assert chip_respond(chip, cw ^ 1 << 9) == 42
    chip.enable()
    assert chip_respond(chip, cw) == 42
    assert chip_respond(chip, cw ^ 1 << 9) == 0xABCD
    assert chip_respond(chip, cw ^ 0b111 << 20) == 0xABCD


def test_catchword_must_fit_before_enable():
    chip = ChipState(cwr=1 << 70, codec=ondie_codec("crc8atm", 64))
    with pytest.raises(CodecError):
        chip.enable()


def test_transfer_flags():
    t = Transfer((1, 7, 3), (1, 2, 3))
    assert t.is_catchword == (True, False, True)
    assert t.catch_chips() == [0, 2]


def test_raid3_identity_exhaustive_at_two_bits():
    for words in itertools.product(range(4), repeat=4):
        parity = words[0] ^ words[1] ^ words[2] ^ words[3]
        values = list(words) + [parity]
        for chip in range(5):
            assert reconstruct(values, chip) == values[chip]


@given(st.lists(u64, min_size=8, max_size=8), st.integers(0, 8))
def test_raid3_identity_at_64_bits(words, chip):
    parity = 0
    for w in words:
        parity ^= w
    values = words + [parity]
    assert reconstruct(values, chip) == values[chip]


# Controller --------------------------------------------------------------------------


def test_clean_read_passthrough():
    d = XedDimm(rows=1, cols=4)
    data = written(d, 0, 1, seed=1)
    assert d.read(0, 1) == (data, Outcome.OK)


@pytest.mark.parametrize("chip", range(9))
def test_single_catchword_is_reconstructed(chip):
    d = XedDimm(rows=1, cols=4, seed=chip)
    data = written(d, 0, 2, seed=chip)
    d.inject_transient(chip, 0, 2, 0b111 << 5)
    assert d.read(0, 2) == (data, Outcome.CORRECTED)


def test_protocol_transparency_with_enable_off():
    d = XedDimm(rows=1, cols=2, seed=3)
    data = written(d, 0, 0, seed=3)
    d.inject_transient(4, 0, 0, 1 << 17)
    values = d.transfer(0, 0, enable=False).values
    assert list(values[:8]) == data


def test_two_scaling_faults_use_serial_mode():
    d = XedDimm(rows=1, cols=2, seed=4)
    data = written(d, 0, 0, seed=4)
    stuck_flip(d, 1, 0, 0, [3])
    stuck_flip(d, 6, 0, 0, [40])
    assert len(d.transfer(0, 0).catch_chips()) == 2
    assert d.read(0, 0) == (data, Outcome.CORRECTED)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.tuples(st.integers(0, 8), st.integers(0, 71)),
                                       min_size=1, max_size=9, unique_by=lambda t: t[0]))
def test_pure_scaling_faults_always_recovered(seed, faults):
    d = XedDimm(rows=1, cols=2, seed=seed)
    data = written(d, 0, 1, seed)
    for chip, bit in faults:
        stuck_flip(d, chip, 0, 1, [bit])
    got, outcome = d.read(0, 1)
    assert got == data and outcome is Outcome.CORRECTED


def test_undetected_fault_goes_to_diagnosis():
    d = XedDimm(rows=1, cols=16, seed=5)
    data = written(d, 0, 3, seed=5)
    codec = d.chips[2].codec
    # A nonzero codeword of the on-die code is invisible to it.
    d.inject_transient(2, 0, 3, codec.encode(0x55))
    assert d.transfer(0, 3).catch_chips() == []
    got, outcome = d.read(0, 3)
    assert outcome is Outcome.DUE and got != data


def test_undetected_permanent_fault_found_by_intraline():
    d = XedDimm(rows=1, cols=16, seed=6)
    data = written(d, 0, 3, seed=6)
    codec = d.chips[2].codec
    pattern = codec.encode(0x55)
    raw = d.raw(2, 0, 3)
    d.inject_permanent(2, 0, 3, pattern, (raw ^ pattern) & pattern)
    assert d.read(0, 3) == (data, Outcome.CORRECTED)
    assert d.fct_lookup(0) == 2


# Diagnosis ----------------------------------------------------------------------------


def test_interline_finds_bank_failure():
    d = XedDimm(rows=1, cols=128, seed=7)
    for col in range(128):
        written(d, 0, col, seed=col)
        stuck_flip(d, 5, 0, col, [1, 2, 3])
    assert interline_diagnosis(d, 0) == 5


def test_interline_ignores_sparse_faults():
    d = XedDimm(rows=1, cols=128, seed=8)
    for col in range(0, 128, 16):
        stuck_flip(d, 3, 0, col, [0])
    assert interline_diagnosis(d, 0) is None


def test_row_fault_fills_one_fct_entry_only():
    d = XedDimm(rows=2, cols=8, seed=9)
    d.fct_record(0, 4)
    assert d.fct_lookup(0) == 4 and not d.chips[4].marked_faulty


def test_fct_marks_chip_when_all_entries_agree():
    d = XedDimm(rows=8, cols=2, seed=10)
    for row in range(5):
        d.fct_record(row, 6)
    assert d.chips[6].marked_faulty
    data = written(d, 7, 0, seed=1)
    d.inject_transient(6, 7, 0, ALL >> 8)
    assert d.read(7, 0) == (data, Outcome.CORRECTED)


def test_intraline_examples():
    d = XedDimm(rows=1, cols=2, seed=11)
    written(d, 0, 0, seed=11)
    # One stuck bit is fixed on-die; three stuck-at-0 bits show on all-ones.
    d.inject_permanent(2, 0, 0, 1 << 7, 0)
    assert intraline_diagnosis(d, 0, 0) is None
    d.inject_permanent(2, 0, 0, 0b111 << 7, 0)
    assert intraline_diagnosis(d, 0, 0) == 2
    d2 = XedDimm(rows=1, cols=2, seed=12)
    written(d2, 0, 0, seed=12)
    d2.inject_transient(2, 0, 0, 0xFF)
    assert intraline_diagnosis(d2, 0, 0) is None
    d3 = XedDimm(rows=1, cols=2, seed=13)
    written(d3, 0, 0, seed=13)
    d3.inject_permanent(1, 0, 0, 0b111 << 3, 0)
    d3.inject_permanent(4, 0, 0, 0b111 << 3, 0)
    assert intraline_diagnosis(d3, 0, 0) is None


def test_false_identification_binomial_tail():
    p_line = 1 - (1 - 1e-4) ** 72
    per_chip = sum(math.comb(128, k) * p_line**k * (1 - p_line) ** (128 - k) for k in range(13, 129))
    want = 1 - (1 - per_chip) ** 9
    assert false_identification_probability(1e-4) == pytest.approx(want, rel=1e-6)


# Collisions ----------------------------------------------------------------------------


def test_no_collision_for_ordinary_value():
    d = XedDimm(rows=1, cols=2, seed=14)
    assert not collision_check_and_rotate(d, d.chips[0].cwr ^ 1, 0, 0, 0)


def test_forced_collision_rotates_and_returns_data():
    d = XedDimm(rows=1, cols=2, seed=15)
    old = d.chips[3].cwr
    data = [0] * 8
    data[3] = old
    d.write(0, 0, data)
    got, outcome = d.read(0, 0)
    assert got == data
    assert d.collisions == 1 and d.chips[3].cwr != old
    assert len({c.cwr for c in d.chips}) == 1


# Double-Chipkill by erasure -----------------------------------------------------------


def test_erasure_all_position_pairs():
    rng = np.random.default_rng(16)
    data = [int(x) for x in rng.integers(0, 2**32, size=16)]
    rank = chipkill_encode(data)
    assert erasure_double_chipkill(rank, [False] * 18) == (data, Outcome.OK)
    for a, b in itertools.combinations(range(18), 2):
        flags = [i in (a, b) for i in range(18)]
        damaged = [0xDEAD if f else v for v, f in zip(rank, flags)]
        assert erasure_double_chipkill(damaged, flags) == (data, Outcome.CORRECTED)
    flags = [i < 3 for i in range(18)]
    assert erasure_double_chipkill(rank, flags)[1] is Outcome.DUE
    with pytest.raises(ConfigError):
        erasure_double_chipkill(rank, [False] * 17)


# Closed forms ---------------------------------------------------------------------------


@pytest.mark.parametrize("ber,printed", [(1e-4, 2e-5), (1e-5, 2e-7), (1e-6, 2e-9)])
def test_multi_catchword_table_with_beat_width(ber, printed):
    got = multi_catchword_probability(ber, bits_per_chip=8)
    assert round(got / printed, 0) == 1


def test_multi_catchword_oracle():
    q = 1 - (1 - 1e-4) ** 72
    want = 1 - (1 - q) ** 9 - 9 * q * (1 - q) ** 8
    assert multi_catchword_probability(1e-4) == pytest.approx(want, rel=1e-9)


def test_transient_due_composition():
    p_word, miss, due = transient_word_due_probability()
    assert p_word == pytest.approx(1 - math.exp(-1.4e-9 * 7 * 8760 * 9), rel=1e-12)
    assert round(p_word, 5) == 7.7e-4
    assert round(miss, 3) == 0.008
    assert due == pytest.approx(p_word * miss)
    assert ondie_miss_rate("crc8atm", "burst") == 0.0
    with pytest.raises(ConfigError):
        ondie_miss_rate("crc8atm", "diagonal")


# Lifetime rules -----------------------------------------------------------------------


def fault(gran, device, t, bank=0, rows=None, cols=None, perm=Permanence.PERMANENT, draw=0.5,
          geometry=DDR3_X8, index=0):
    rows = rows or IndexSet.span(geometry.rows_per_bank)
    cols = cols or IndexSet.span(geometry.cols_per_row)
    fp = Footprint((device,), IndexSet.single(bank), rows, cols, geometry.all_bits)
    return FaultRecord(gran, perm, t, fp, index, draw)


def test_lifetime_examples():
    assert xed_evaluate([], "xed", DDR3_X8).verdict is Verdict.SURVIVED
    bank = fault(Granularity.BANK, 3, 10.0)
    assert xed_evaluate([bank], "xed", DDR3_X8).verdict is Verdict.SURVIVED
    assert xed_evaluate([bank], "eccdimm", DDR3_X8).verdict is Verdict.DUE
    second = fault(Granularity.BANK, 5, 20.0, index=1)
    out = xed_evaluate([bank, second], "xed", DDR3_X8)
    assert out.verdict is Verdict.DUE and out.first_event_hours == 20.0
    other_rank = fault(Granularity.BANK, 12, 20.0, index=1)
    assert xed_evaluate([bank, other_rank], "xed", DDR3_X8).verdict is Verdict.SURVIVED


def test_transient_word_miss_is_due_for_xed():
    word = fault(Granularity.WORD, 2, 5.0, rows=IndexSet.single(4), cols=IndexSet.single(9),
                 perm=Permanence.TRANSIENT, draw=0.001)
    assert xed_evaluate([word], "xed", DDR3_X8).verdict is Verdict.DUE
    lucky = fault(Granularity.WORD, 2, 5.0, rows=IndexSet.single(4), cols=IndexSet.single(9),
                  perm=Permanence.TRANSIENT, draw=0.5)
    assert xed_evaluate([lucky], "xed", DDR3_X8).verdict is Verdict.SURVIVED


def test_double_chipkill_needs_three_symbols():
    g = DDR3_X4_CHIPKILL
    faults = [fault(Granularity.BANK, d, 1.0 + d, geometry=g, index=i) for i, d in enumerate((0, 1))]
    assert xed_evaluate(faults, "double-chipkill", g).verdict is Verdict.SURVIVED
    assert xed_evaluate(faults, "chipkill", g).verdict is Verdict.DUE
    third = fault(Granularity.BANK, 2, 9.0, geometry=g, index=2)
    assert xed_evaluate(faults + [third], "double-chipkill", g).verdict is Verdict.DUE


def test_scheme_geometry_checked():
    with pytest.raises(ConfigError):
        build_overlap_scheme("chipkill", DDR3_X8)
