"""Fault map, replication area and overflow provisioning."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memshield.archshield import (
    ENTRIES_PER_SET,
    SETS_PER_GROUP,
    RAGroup,
    ReplicationArea,
    ReplicationTag,
    SetState,
    WordClass,
    archshield_provision,
    classify_count,
    classify_words,
    fault_map_bytes,
    fm_decode,
    fm_encode,
    line_class_fractions,
    overflow_failure_probability,
    overflow_monte_carlo,
    ra_build,
    ra_groups_for,
    ra_lookup,
    tmr_vote,
)
from memshield.faultmodel import scaling_fault_layout
from memshield.simkernel import wilson_interval

GiB = 2**30


def test_classify_count():
    assert [classify_count(n) for n in (0, 1, 2, 5)] == [WordClass.NFC, WordClass.SFC, WordClass.MFC, WordClass.MFC]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_classify_words_matches_brute_force(seed):
    lay = scaling_fault_layout(2048, 72, 2e-3, seed=seed)
    got = classify_words(lay)
    want: dict[int, WordClass] = {}
    for w, bits in lay.as_dict().items():
        line = w // 8
        want[line] = max(want.get(line, WordClass.NFC), classify_count(len(bits)))
    assert got == want
    frac = line_class_fractions(got, 256)
    assert sum(frac.values()) == pytest.approx(1.0)


def test_fault_map_codes():
    for c in WordClass:
        assert fm_decode(fm_encode(c)) is c
    # One flipped bit in a faulty-line entry reads back as MFC, never NFC.
    for c in (WordClass.SFC, WordClass.MFC):
        for b in range(4):
            assert fm_decode(fm_encode(c) ^ (1 << b)) is WordClass.MFC
    with pytest.raises(ValueError):
        fm_decode(16)


@given(st.integers(0, 63), st.integers(0, 7), st.integers(0, 1), st.integers(0, 3))
def test_tag_pack_roundtrip(addr, word, valid, ov):
    tag = ReplicationTag(addr, word, valid, ov)
    assert ReplicationTag.unpack(tag.pack()) == tag
    assert tag.pack() < 1 << 12


def test_tag_field_limits():
    with pytest.raises(ValueError):
        ReplicationTag(64, 0)
    with pytest.raises(ValueError):
        ReplicationTag.unpack(1 << 12)


@given(st.integers(0, 31), st.integers(0, 2), st.integers(0, 4))
def test_tmr_link_survives_one_corrupt_copy(link, which, bit):
    s = SetState()
    s.set_link(link & 0xF)
    s.link_copies[which] ^= 1 << bit
    assert s.link() == link & 0xF


def test_tmr_vote_is_majority():
    assert tmr_vote(0b1100, 0b1010, 0b1001) == 0b1000


def test_group_capacity():
    assert RAGroup.capacity() == 2 * SETS_PER_GROUP * ENTRIES_PER_SET == 192
    assert RAGroup.footprint_bytes() == 2048


def test_replication_area_places_and_finds():
    rng = np.random.default_rng(4)
    groups = 16
    lines = rng.choice(groups * SETS_PER_GROUP * 64, size=900, replace=False)
    words = [(int(line), int(rng.integers(8))) for line in lines]
    ra = ra_build(words, groups, seed=3)
    assert ra.placed
    for line, word in words:
        hit, accesses = ra_lookup(ra, line, word)
        assert hit and accesses in (1, 2)
    assert ra.occupancy()["normal_entries"] + ra.occupancy()["overflow_entries"] == len(words)
    absent = next(x for x in range(10**6) if x not in set(lines.tolist()))
    assert not ra_lookup(ra, absent, 0)[0]


def test_overflow_chain_costs_one_extra_access():
    ra = ReplicationArea(groups=1)
    same_set = [s * SETS_PER_GROUP for s in range(ENTRIES_PER_SET + 2)]
    for line in same_set:
        assert ra.insert(line, 0)
    assert ra.lookup(same_set[0], 0) == (True, 1)
    assert ra.lookup(same_set[-1], 0) == (True, 2)


def test_group_exhaustion_is_reported():
    lines = [s * SETS_PER_GROUP for s in range(64)]
    ra = ra_build([(line, w) for line in lines for w in range(4)], groups=1, overflow_sets=4)
    assert not ra.placed and ra.failed_words
    with pytest.raises(ValueError):
        ra_build([], 0)


def test_overflow_analytic_matches_monte_carlo_at_small_scale():
    analytic = overflow_failure_probability(400, 8, (1, 2))
    runs = 20_000
    mc = overflow_monte_carlo(400, 8, [1, 2], runs, seed=3)
    lo, hi = wilson_interval(mc[1], runs, z=4.0)
    assert lo <= analytic[1] <= hi
    lo, hi = wilson_interval(mc[2], runs, z=4.0)
    assert lo <= analytic[2] <= hi


def test_overflow_probability_monotone():
    errors = [90_000, 120_000, 150_000, 200_000]
    curves = [overflow_failure_probability(e, 2048, (8, 12, 16)) for e in errors]
    for k in (8, 12, 16):
        vals = [c[k] for c in curves]
        assert all(a < b for a, b in zip(vals, vals[1:]))
    for c in curves:
        assert c[8] >= c[12] >= c[16]


def test_provisioning_for_8gb_at_1e4():
    p = archshield_provision(1e-4, 8 * GiB)
    assert p["fault_map_bytes"] == 64 * 2**20 == fault_map_bytes(8 * GiB)
    assert p["ra_groups"] == 128 * 1024
    assert p["replication_bytes"] == 256 * 2**20
    assert p["expected_faulty_words"] == pytest.approx(7.76e6, rel=0.01)
    assert round((1 - p["visible_fraction"]) * 100) == 4
    assert ra_groups_for(0) == 0
    with pytest.raises(ValueError):
        archshield_provision(1e-4, 0)
