"""Word classification, the redundant Fault Map and the Replication Area."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .faultmodel import ScalingLayout, word_fault_prob

SETS_PER_GROUP = 16
ENTRIES_PER_SET = 6
ENTRY_BYTES = 9.5
GROUP_BYTES = 2048
LINE_BYTES = 64
WORDS_PER_LINE = 8
# Provision the Replication Area so the mean load is 4 of 6 entries per set.
TARGET_SET_LOAD = 4


class WordClass(enum.IntEnum):
    NFC = 0
    SFC = 1
    MFC = 2


def classify_count(nfaults: int) -> WordClass:
    if nfaults <= 0:
        return WordClass.NFC
    return WordClass.SFC if nfaults == 1 else WordClass.MFC


def classify_words(layout: ScalingLayout, line_size_words: int = WORDS_PER_LINE) -> dict[int, WordClass]:
    """Class of every line holding at least one faulty word (absent lines are NFC)."""
    out: dict[int, WordClass] = {}
    for w, bits in zip(layout.words.tolist(), layout.bits):
        line = w // line_size_words
        c = classify_count(len(bits))
        if c > out.get(line, WordClass.NFC):
            out[line] = c
    return out


def line_class_fractions(classes: dict[int, WordClass], n_lines: int) -> dict[WordClass, float]:
    counts = {c: 0 for c in WordClass}
    for c in classes.values():
        counts[c] += 1
    counts[WordClass.NFC] = n_lines - counts[WordClass.SFC] - counts[WordClass.MFC]
    return {c: counts[c] / n_lines for c in WordClass}


# Fault Map -----------------------------------------------------------------------

_FM_CODE = {WordClass.NFC: 0b0000, WordClass.SFC: 0b1111, WordClass.MFC: 0b1100}


def fm_encode(cls: WordClass) -> int:
    return _FM_CODE[WordClass(cls)]


def fm_decode(raw: int) -> WordClass:
    """Anything other than the two clean patterns is conservatively MFC."""
    if not 0 <= raw <= 0xF:
        raise ValueError(f"fault map entries are 4 bits, got {raw!r}")
    if raw == 0b0000:
        return WordClass.NFC
    if raw == 0b1111:
        return WordClass.SFC
    return WordClass.MFC


def fault_map_bytes(capacity_bytes: int) -> int:
    return capacity_bytes // LINE_BYTES * 4 // 8


# Replication Area ---------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationTag:
    line_address_bits: int
    word_in_line: int
    valid: int = 1
    overflow_bits: int = 0

    WIDTHS = (6, 3, 1, 2)

    def __post_init__(self) -> None:
        for v, w in zip(
            (self.line_address_bits, self.word_in_line, self.valid, self.overflow_bits), self.WIDTHS
        ):
            if not 0 <= v < (1 << w):
                raise ValueError(f"tag field {v} does not fit {w} bits")

    def pack(self) -> int:
        return (
            self.line_address_bits
            | self.word_in_line << 6
            | self.valid << 9
            | self.overflow_bits << 10
        )

    @classmethod
    def unpack(cls, raw: int) -> "ReplicationTag":
        if raw >> 12:
            raise ValueError("tag exceeds 12 bits")
        return cls(raw & 0x3F, (raw >> 6) & 0x7, (raw >> 9) & 1, (raw >> 10) & 0x3)


def tmr_vote(a: int, b: int, c: int) -> int:
    return (a & b) | (a & c) | (b & c)


@dataclass
class SetState:
    entries: list[ReplicationTag] = field(default_factory=list)
    # Stored three times; reads take the bitwise majority.
    link_copies: list[int] = field(default_factory=lambda: [0, 0, 0])

    def link(self) -> int | None:
        raw = tmr_vote(*self.link_copies)
        return (raw & 0xF) if raw & 0x10 else None

    def set_link(self, index: int) -> None:
        raw = 0x10 | (index & 0xF)
        self.link_copies = [raw, raw, raw]

    @property
    def full(self) -> bool:
        return len(self.entries) >= ENTRIES_PER_SET


@dataclass
class RAGroup:
    normal: list[SetState] = field(default_factory=lambda: [SetState() for _ in range(SETS_PER_GROUP)])
    overflow: list[SetState] = field(default_factory=lambda: [SetState() for _ in range(SETS_PER_GROUP)])

    @staticmethod
    def capacity() -> int:
        return 2 * SETS_PER_GROUP * ENTRIES_PER_SET

    @staticmethod
    def footprint_bytes() -> float:
        return 2 * SETS_PER_GROUP * LINE_BYTES


@dataclass
class ReplicationArea:
    groups: int
    overflow_sets: int = SETS_PER_GROUP
    table: dict[int, RAGroup] = field(default_factory=dict)
    placed: bool = True
    failed_words: list[tuple[int, int]] = field(default_factory=list)

    def address(self, line: int) -> tuple[int, int, int]:
        g = line % self.groups
        rest = line // self.groups
        return g, rest % SETS_PER_GROUP, rest // SETS_PER_GROUP

    def _group(self, g: int) -> RAGroup:
        grp = self.table.get(g)
        if grp is None:
            grp = RAGroup(overflow=[SetState() for _ in range(self.overflow_sets)])
            self.table[g] = grp
        return grp

    def insert(self, line: int, word: int) -> bool:
        g, s, tag_bits = self.address(line)
        if tag_bits >= 64:
            raise ValueError(f"line {line} outside the address space of {self.groups} groups")
        tag = ReplicationTag(tag_bits, word)
        grp = self._group(g)
        home = grp.normal[s]
        if not home.full:
            home.entries.append(tag)
            return True
        cur = home
        visited = set()
        while True:
            nxt = cur.link()
            if nxt is None:
                nxt = next((i for i, o in enumerate(grp.overflow) if not o.full), None)
                if nxt is None:
                    return False
                cur.set_link(nxt)
            if nxt in visited:
                return False
            visited.add(nxt)
            cur = grp.overflow[nxt]
            if not cur.full:
                cur.entries.append(tag)
                return True

    def lookup(self, line: int, word: int) -> tuple[bool, int]:
        g, s, tag_bits = self.address(line)
        grp = self.table.get(g)
        if grp is None:
            return False, 1
        cur = grp.normal[s]
        if any(t.line_address_bits == tag_bits and t.word_in_line == word for t in cur.entries):
            return True, 1
        visited = set()
        nxt = cur.link()
        while nxt is not None and nxt not in visited:
            visited.add(nxt)
            cur = grp.overflow[nxt]
            if any(t.line_address_bits == tag_bits and t.word_in_line == word for t in cur.entries):
                # The overflow region shares one row, so the chain costs one extra read.
                return True, 2
            nxt = cur.link()
        return False, 2 if visited else 1

    def occupancy(self) -> dict[str, float]:
        normal = sum(len(s.entries) for grp in self.table.values() for s in grp.normal)
        over = sum(len(s.entries) for grp in self.table.values() for s in grp.overflow)
        return {
            "normal_entries": normal,
            "overflow_entries": over,
            "groups_touched": len(self.table),
            "max_group_entries": max(
                (sum(len(s.entries) for s in grp.normal + grp.overflow) for grp in self.table.values()),
                default=0,
            ),
        }


def ra_build(
    faulty_words: Iterable[tuple[int, int]],
    groups: int,
    seed: int = 0,
    overflow_sets: int = SETS_PER_GROUP,
) -> ReplicationArea:
    """Place every faulty (line, word) pair; ``seed`` shuffles insertion order."""
    if groups < 1:
        raise ValueError("groups must be >= 1")
    words = list(faulty_words)
    if seed:
        order = np.random.default_rng(seed).permutation(len(words))
        words = [words[i] for i in order]
    ra = ReplicationArea(groups, overflow_sets)
    for line, word in words:
        if not ra.insert(line, word):
            ra.placed = False
            ra.failed_words.append((line, word))
    return ra


def ra_lookup(ra: ReplicationArea, line: int, word: int) -> tuple[bool, int]:
    return ra.lookup(line, word)


# Overflow probability ----------------------------------------------------------


def group_overflow_joint(mean_per_set: float, tmax: int, cap: int, sets: int = SETS_PER_GROUP) -> np.ndarray:
    """J[t, o] = P(total = t, capped overflow = o) for iid Poisson set loads."""
    x = np.arange(tmax + 1)
    px = stats.poisson.pmf(x, mean_per_set)
    ov = np.minimum(np.maximum(x - ENTRIES_PER_SET, 0), cap)
    joint = np.zeros((tmax + 1, cap + 1))
    joint[0, 0] = 1.0
    for _ in range(sets):
        nxt = np.zeros_like(joint)
        for xi in range(tmax + 1):
            if px[xi] == 0.0:
                continue
            o = ov[xi]
            block = joint[: tmax + 1 - xi, :] * px[xi]
            if o == 0:
                nxt[xi:, :] += block
            else:
                nxt[xi:, o:cap] += block[:, : cap - o]
                nxt[xi:, cap] += block[:, cap - o :].sum(axis=1)
        joint = nxt
    return joint


def overflow_failure_probability(
    errors: float, groups: int, overflow_sets: Sequence[int] = (8, 12, 16)
) -> dict[int, float]:
    """Exact-in-distribution P(some group cannot place its words).

    Group loads are Binomial(errors, 1/groups); given a load, set loads are
    multinomial, obtained by conditioning iid Poisson loads on their total.
    Groups are treated as independent when combining.
    """
    n = int(round(errors))
    p = 1.0 / groups
    mean = n * p
    tmax = int(mean + 12 * math.sqrt(mean) + 60)
    cap = ENTRIES_PER_SET * max(overflow_sets) + 1
    joint = group_overflow_joint(mean / SETS_PER_GROUP, tmax, cap)
    row_tot = joint.sum(axis=1)
    pn = stats.binom.pmf(np.arange(tmax + 1), n, p)
    out = {}
    for k in overflow_sets:
        c = ENTRIES_PER_SET * k
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(row_tot > 0, joint[:, c + 1 :].sum(axis=1) / row_tot, 1.0)
        p_group = float(np.sum(pn * cond)) + float(stats.binom.sf(tmax, n, p))
        out[k] = -math.expm1(groups * math.log1p(-min(p_group, 1.0 - 1e-300)))
    return out


def overflow_monte_carlo(
    errors: int,
    groups: int,
    overflow_sets: Sequence[int],
    runs: int,
    seed: int,
) -> dict[int, int]:
    """Count runs in which some group exhausts its overflow sets."""
    rng = np.random.default_rng(seed)
    fails = {k: 0 for k in overflow_sets}
    thresholds = {k: ENTRIES_PER_SET * k for k in overflow_sets}
    pg = np.full(groups, 1.0 / groups)
    ps = np.full(SETS_PER_GROUP, 1.0 / SETS_PER_GROUP)
    for _ in range(runs):
        per_group = rng.multinomial(errors, pg)
        sets = rng.multinomial(per_group, ps)
        over = np.maximum(sets - ENTRIES_PER_SET, 0).sum(axis=1).max()
        for k, c in thresholds.items():
            if over > c:
                fails[k] += 1
    return fails


# Provisioning ------------------------------------------------------------------


def expected_faulty_word_count(ber: float, capacity_bytes: int, word_bits: int = 72) -> float:
    words = capacity_bytes // 8
    return words * (1.0 - word_fault_prob(ber, word_bits, 0)) if ber > 0 else 0.0


def ra_groups_for(faulty_words: float) -> int:
    if faulty_words <= 0:
        return 0
    need = faulty_words / (SETS_PER_GROUP * TARGET_SET_LOAD)
    return 1 << max(0, math.ceil(math.log2(need)))


def archshield_provision(ber: float, capacity_bytes: int) -> dict[str, float]:
    if capacity_bytes <= 0:
        raise ValueError("capacity must be positive")
    fm = fault_map_bytes(capacity_bytes)
    faulty = expected_faulty_word_count(ber, capacity_bytes)
    groups = ra_groups_for(faulty)
    ra = groups * GROUP_BYTES
    return {
        "fault_map_bytes": fm,
        "replication_bytes": ra,
        "ra_groups": groups,
        "expected_faulty_words": faulty,
        "visible_fraction": 1.0 - (fm + ra) / capacity_bytes,
    }
