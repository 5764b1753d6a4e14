"""Acceptance criteria 1-13 at their stated tolerances.

Each test carries ``criterion(n)``; the terminal summary prints one
PASS/FAIL line per criterion, counting expected failures as FAIL.
"""

from __future__ import annotations

import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memshield.archshield import overflow_failure_probability, overflow_monte_carlo
from memshield.citadel import ToyStack, citadel_config, faulty_bank_census
from memshield.codes import (
    BitBlock,
    Status,
    detection_rate_probe,
    get_codec,
    hamming7264_decode,
    hamming7264_encode,
    parity_xor,
)
from memshield.faultmodel import (
    Constraint,
    birthday_capacity,
    birthday_simulate,
    expected_faulty_words,
    scaling_fault_layout,
    sttram_cell_ber,
)
from memshield.simkernel import run_campaign, wilson_interval
from memshield.sudoku import (
    DEFAULT_CACHE,
    ScrubVerdict,
    SudokuCache,
    analytic_fit,
    fit_table,
    hash_disjoint,
    mttf_ladder,
    sdr_case_probabilities,
)
from memshield.xed import Outcome, XedDimm, transient_word_due_probability, xed_config
from tolerance import agrees, same_decade

criterion = pytest.mark.criterion


def within_factor(x: float, target: float, factor: float) -> bool:
    return target / factor <= x <= target * factor


# 1. Multi-bit word counts ---------------------------------------------------------------------

WORDS = expected_faulty_words(1e-4, 72, 2**30)


@criterion(1)
def test_c01_faulty_word_counts():
    assert agrees(WORDS[1], "7.7e6")
    assert agrees(WORDS[2], "28e3")
    assert agrees(WORDS[3], "67")
    assert agrees(WORDS[4], "0.1")


@criterion(1)
@pytest.mark.xfail(strict=True, reason="0.99 Bln clean words does not fit 2^30 words; computed 1.07e9")
def test_c01_fault_free_words():
    assert agrees(WORDS[0], "0.99e9")


# 2. Birthday capacity ---------------------------------------------------------------------------


@criterion(2)
def test_c02_birthday_capacity():
    first = birthday_simulate(2**20, 10_000, seed=1)
    assert abs(first.mean() / (1.2 * 2**10) - 1) <= 0.05
    assert round(birthday_capacity(2**30), -4) == 40_000


# 3. Overflow provisioning ---------------------------------------------------------------------------

LOAD = int(7.74e6 // 64)


@criterion(3)
def test_c03_overflow_bound_and_monotone():
    groups, runs = 2048, 100_000
    analytic = overflow_failure_probability(LOAD, groups, (16,))[16]
    assert analytic <= 1e-3
    fails = overflow_monte_carlo(LOAD, groups, [16], runs, seed=1)[16]
    assert fails / runs <= 1e-3
    curve = [overflow_failure_probability(e, groups, (16,))[16] for e in (90_000, LOAD, 150_000, 200_000)]
    assert all(a < b for a, b in zip(curve, curve[1:]))


# 4. On-die code detection ---------------------------------------------------------------------

HAMMING_RANDOM = {1: 100.0, 2: 100.0, 3: 100.0, 5: 100.0, 6: 99.1, 7: 100.0, 8: 99.16}
CRC_RANDOM = {1: 100.0, 2: 100.0, 3: 100.0, 4: 99.2, 5: 100.0, 6: 99.22, 7: 100.0, 8: 99.22}


@criterion(4)
def test_c04_burst_rows():
    assert abs(100 * detection_rate_probe("hamming7264", 4, "burst") - 50.73) <= 1.0
    for e in range(1, 9):
        assert detection_rate_probe("crc8atm", e, "burst") == 1.0


@criterion(4)
@pytest.mark.parametrize("codec,table", [("hamming7264", HAMMING_RANDOM), ("crc8atm", CRC_RANDOM)])
def test_c04_random_rows(codec, table):
    for e, want in table.items():
        got = 100 * detection_rate_probe(codec, e, "random", trials=1_000_000, seed=e)
        assert abs(got - want) <= 0.5, (codec, e, got)


@criterion(4)
@pytest.mark.xfail(strict=True, reason="Hamming random-4 evaluates to 98.89%, printed 98.3%")
def test_c04_hamming_random_four():
    got = 100 * detection_rate_probe("hamming7264", 4, "random", trials=1_000_000, seed=4)
    assert abs(got - 98.3) <= 0.5


# 5. DIMM-level ordering ----------------------------------------------------------------------------


@criterion(5)
def test_c05_xed_chipkill_eccdimm():
    res = {s: run_campaign(xed_config(s, seed=1), 1_000_000) for s in ("xed", "chipkill", "eccdimm")}
    xed, ck, ecc = res["xed"], res["chipkill"], res["eccdimm"]
    assert xed.p_fail < ck.p_fail < ecc.p_fail
    assert xed.ci_high < ck.ci_low and ck.ci_high < ecc.ci_low
    assert within_factor(ecc.p_fail / xed.p_fail, 172, 3)
    assert within_factor(ecc.p_fail / ck.p_fail, 43, 2)


# 6. Scaling faults under XED ---------------------------------------------------------------------


@criterion(6)
def test_c06_pure_scaling_faults_never_fail():
    chips, target = 9, 100_000
    lines = int(target / (1 - (1 - 1e-4) ** (72 * chips)) * 1.05)
    lay = scaling_fault_layout(lines * chips, 72, 1e-4, Constraint.MAX_ONE_PER_WORD, seed=6)
    by_line: dict[int, list[tuple[int, int]]] = {}
    for w, bits in zip(lay.words.tolist(), lay.bits):
        by_line.setdefault(w // chips, []).append((w % chips, bits[0]))
    scenarios = list(by_line.values())[:target]
    assert len(scenarios) == target
    rng = np.random.default_rng(6)
    failures = 0
    for i, faults in enumerate(scenarios):
        d = XedDimm(rows=1, cols=1, seed=i)
        data = [int(x) for x in rng.integers(0, 2**63, size=8)]
        d.write(0, 0, data)
        for chip, bit in faults:
            raw = d.raw(chip, 0, 0)
            d.inject_permanent(chip, 0, 0, 1 << bit, ~raw & (1 << bit))
        got, outcome = d.read(0, 0)
        failures += got != data or outcome not in (Outcome.OK, Outcome.CORRECTED)
    assert failures == 0


# 7. Transient DUE composition -----------------------------------------------------------------


@criterion(7)
def test_c07_transient_due():
    p_word, miss, due = transient_word_due_probability()
    assert due == pytest.approx(p_word * miss)
    assert within_factor(due, 6.1e-6, 2)


# 8. Stacked-memory protection ------------------------------------------------------------------


@pytest.fixture(scope="module")
def stack_runs():
    n = 1_000_000
    out = {s: run_campaign(citadel_config(s, seed=1), n) for s in ("stripe", "3dp", "3dp-dds")}
    out["stripe@1430"] = run_campaign(citadel_config("stripe", tsv_fit=1430.0, seed=1), n)
    return out


@criterion(8)
@pytest.mark.xfail(strict=True, reason="two large faults defeat 3DP; stripe/3DP measures ~0.6, not >= 3")
def test_c08_3dp_over_stripe(stack_runs):
    assert stack_runs["stripe"].p_fail / stack_runs["3dp"].p_fail >= 3


@criterion(8)
def test_c08_dds_over_stripe(stack_runs):
    dds = stack_runs["3dp-dds"]
    # Zero observed failures still bound the rate by the interval's upper end.
    assert stack_runs["stripe"].p_fail / dds.ci_high >= 100


@criterion(8)
def test_c08_tsv_swap_hides_tsv_faults(stack_runs):
    ratio = stack_runs["stripe@1430"].p_fail / stack_runs["stripe"].p_fail
    assert within_factor(ratio, 1.0, 2)


# 9. Failed-bank census ----------------------------------------------------------------------------


@criterion(9)
@pytest.mark.xfail(strict=True, reason="independent arrivals give ~97/3/0 %, not 67/33/0.04 %")
def test_c09_failed_bank_split():
    c = faulty_bank_census(1_000_000, seed=1)
    assert abs(c["one"] - 0.6698) <= 0.02
    assert abs(c["two"] - 0.3298) <= 0.02
    assert abs(c["three_plus"] - 0.0004) <= 0.02


# 10. Cache FIT tables -------------------------------------------------------------------------------


@criterion(10)
def test_c10_retention_ber_table():
    assert same_decade(sttram_cell_ber(60, 0.020), -19)
    assert same_decade(sttram_cell_ber(45, 0.020), -12)
    assert agrees(sttram_cell_ber(30, 0.020), "1.9e-6")


@criterion(10)
@pytest.mark.xfail(strict=True, reason="ECC-4 FIT 184 conflicts with the 1.8K cell of the scrub table")
def test_c10_ecc_table():
    cells = {
        "ecc1": ("4.8e-7", "4e-1", None),
        "ecc2": ("1.7e-10", "1.7e-4", "3.11e10"),
        "ecc3": ("4.4e-14", "4.6e-8", "8.3e6"),
        "ecc4": ("9.8e-18", "1e-11", "184"),
        "ecc5": ("1.9e-21", "2e-15", "0.351"),
    }
    bad = []
    for scheme, (line, cache, fit) in cells.items():
        r = analytic_fit(scheme)
        bad += [(scheme, "line")] if not agrees(r.p_line_fail, line) else []
        bad += [(scheme, "cache")] if not agrees(r.p_cache_fail_per_scrub, cache) else []
        bad += [(scheme, "fit")] if fit and not agrees(r.fit, fit) else []
    assert analytic_fit("ecc1").fit > 1e11
    assert not bad, bad


@criterion(10)
@pytest.mark.xfail(strict=True, reason="ECC-4 40 ms cell 3K and the SuDoku-Z column miss by 10-20%")
def test_c10_scrub_table():
    rows = {
        5: ("4.7e-7", "7.2", "0.0003", "4e-6"),
        10: ("9.4e-7", "115", "0.011", "6e-5"),
        20: ("1.9e-6", "1.8K", "0.351", "0.0009"),
        40: ("3.8e-6", "3K", "11.2", "0.014"),
        80: ("7.5e-6", "471K", "359", "0.224"),
    }
    bad = []
    for ms, cells in rows.items():
        e4, e5, z = fit_table(["ecc4", "ecc5", "z"], [ms])
        for name, got, want in zip(("ber", "ecc4", "ecc5", "z"), (e4.ber, e4.fit, e5.fit, z.fit), cells):
            if not agrees(got, want):
                bad.append((ms, name, got, want))
    assert not bad, bad


# 11. Resurrection combinatorics ------------------------------------------------------------------


@criterion(11)
def test_c11_sdr_cases():
    for bits in (4, 6, 9):
        pairs = list(combinations(range(bits), 2))
        tally = [0, 0, 0]
        for a in pairs:
            for b in pairs:
                tally[len(set(a) & set(b))] += 1
        p = sdr_case_probabilities(bits)
        total = len(pairs) ** 2
        assert p["p_no_overlap"] * total == tally[0]
        assert p["p_one_overlap"] * total == tally[1]
        assert p["p_both_overlap"] * total == tally[2]
    p = sdr_case_probabilities(512)
    assert round(100 * float(p["p_one_overlap"]), 2) == 0.78
    assert float(p["p_both_overlap"]) == pytest.approx(7.6e-6, rel=0.01)
    # The printed 0.0004% is about half of the exact value.
    assert float(p["p_both_overlap"]) > 1.5 * 0.0004e-2


# 12. MTTF ladder ------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ladder():
    return mttf_ladder(DEFAULT_CACHE, samples=2000, seed=0)


@criterion(12)
def test_c12_x_and_z(ladder):
    assert within_factor(ladder.mttf_x_seconds, 137, 2)
    assert ladder.mttf_hours["z"] / ladder.mttf_hours["y"] >= 1e4


@criterion(12)
@pytest.mark.xfail(strict=True, reason="SuDoku-Y composes to ~1050 h, beyond x/3 of 129 h")
def test_c12_y(ladder):
    assert within_factor(ladder.mttf_hours["y"], 129, 3)


# 13. Invariant suites ---------------------------------------------------------------------------


@criterion(13)
@settings(max_examples=500)
@given(st.integers(0, 2**64 - 1))
def test_c13_codec_roundtrips(data):
    cw = hamming7264_encode(BitBlock(data, 64))
    got, v = hamming7264_decode(cw)
    assert got.value == data and v.status is Status.CLEAN
    for cid in ("crc8atm", "crc21"):
        code = get_codec(cid)
        d = data & ((1 << code.k) - 1)
        out, v = code.decode(code.encode(d))
        assert out == d and v.status is Status.CLEAN


@criterion(13)
def test_c13_secded_exhaustive():
    rng = np.random.default_rng(13)
    for data in [0, 2**64 - 1, *(int(x) for x in rng.integers(0, 2**63, size=3))]:
        cw = hamming7264_encode(BitBlock(data, 64))
        for b in range(72):
            got, v = hamming7264_decode(cw.flip(b))
            assert got.value == data and v.status is Status.CORRECTED
        for a, b in combinations(range(72), 2):
            assert hamming7264_decode(cw.flip(a, b))[1].status is Status.DETECTED_UNCORRECTABLE


@criterion(13)
@settings(max_examples=300)
@given(st.lists(st.integers(0, 2**512 - 1), min_size=2, max_size=16), st.data())
def test_c13_parity_reconstruction(values, data):
    lines = [BitBlock(v, 512) for v in values]
    parity = parity_xor(lines, 512)
    lost = data.draw(st.integers(0, len(values) - 1))
    acc = parity.value
    for i, v in enumerate(values):
        if i != lost:
            acc ^= v
    assert acc == values[lost]


@criterion(13)
def test_c13_3dp_recompute_oracle():
    s = ToyStack(dies=9, banks=4, rows=8, cols=4, seed=13)
    rng = np.random.default_rng(13)
    for _ in range(5_000):
        addr = tuple(int(rng.integers(n)) for n in s.data.shape)
        s.write(addr, int(rng.integers(0, 2**63)))
    dies, banks, rows, cols = s.data.shape
    d1 = np.zeros((rows, cols), dtype=np.uint64)
    d2 = np.zeros((dies, cols), dtype=np.uint64)
    d3 = np.zeros((banks, cols), dtype=np.uint64)
    for die in range(dies):
        for bank in range(banks):
            for row in range(rows):
                for col in range(cols):
                    v = s.data[die, bank, row, col]
                    d1[row, col] ^= v
                    d2[die, col] ^= v
                    d3[bank, col] ^= v
    assert (s.parity.dim1 == d1).all() and (s.parity.dim2 == d2).all() and (s.parity.dim3 == d3).all()


@criterion(13)
def test_c13_hash_disjointness():
    assert hash_disjoint(2**16, 256)


@criterion(13)
def test_c13_determinism_under_parallelism():
    cfg = xed_config("xed", seed=13)
    assert run_campaign(cfg, 20_000, parallelism=1) == run_campaign(cfg, 20_000, parallelism=4)


@criterion(13)
def test_c13_sdr_success_rate():
    rng = np.random.default_rng(13)
    runs, fails = 1_000_000, 0
    for _ in range(runs):
        c = SudokuCache(2, 2, "y", seed=None)
        for a in (0, 1):
            c.inject(a, [c.codec.cw_bit_of_data(int(i)) for i in rng.choice(512, 2, replace=False)])
        fails += c.scrub().verdict is not ScrubVerdict.OK
    lo, _ = wilson_interval(runs - fails, runs)
    assert (runs - fails) / runs >= 0.99999 and lo > 0.9999
