"""Exposed on-die error detection (catch-words) and the lifetime rules built on it.

Two layers live here.  The protocol layer is a bit-accurate toy DIMM: each
chip stores on-die codewords, answers reads through its DC-Mux, and the
controller reconstructs, diagnoses and rotates catch-words.  The lifetime
layer abstracts that behaviour into overlap rules over fault footprints so
the Monte-Carlo kernel can run millions of systems.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .codes import (
    CODECS,
    CRC8_ATM,
    CodecError,
    CrcCode,
    CrcSpec,
    HammingCode,
    ProbeMode,
    Status,
    detection_rate_probe,
    pq_encode,
    pq_recover,
)
from .faultmodel import (
    DDR3_X4_CHIPKILL,
    DDR3_X8,
    SEVEN_YEARS_H,
    ConfigError,
    FaultRecord,
    FitTable,
    Footprint,
    Geometry,
    Granularity,
    Permanence,
    SRIDHARAN12,
    expected_count,
)
from .simkernel import EpochResult, EpochVerdict, TrialConfig, TrialOutcome, evaluate, register

ROW_LINES = 128
FCT_ENTRIES = 4
# A chip is blamed when more than 10% of the row's lines carry its catch-word.
INTERLINE_THRESHOLD = 12


class Outcome(enum.Enum):
    OK = "OK"
    CORRECTED = "CORRECTED"
    DUE = "DUE"
    SDC = "SDC"


# On-die codecs ------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def ondie_codec(codec_id: str, width: int) -> HammingCode | CrcCode:
    """On-die code protecting one ``width``-bit chip word."""
    if width == 64 and codec_id in ("hamming7264", "crc8atm"):
        return CODECS[codec_id]
    if codec_id == "hamming7264":
        return HammingCode(width, extended=True)
    if codec_id == "crc8atm":
        return CrcCode(CrcSpec(f"crc8atm{width}", 8, CRC8_ATM.generator, 0, width))
    raise CodecError(f"unsupported on-die codec {codec_id!r}")


@dataclass
class ChipState:
    cwr: int
    codec: HammingCode | CrcCode
    xed_enable: int = 0
    marked_faulty: bool = False

    @property
    def width(self) -> int:
        return self.codec.k

    def enable(self) -> None:
        if self.cwr >> self.width:
            raise CodecError("catch-word wider than the chip word")
        self.xed_enable = 1


def chip_respond(chip: ChipState, stored_codeword: int) -> int:
    """DC-Mux: corrected data, or the catch-word when enabled and not clean."""
    data, verdict = chip.codec.decode(stored_codeword)
    if not chip.xed_enable or verdict.status is Status.CLEAN:
        return data
    return chip.cwr


@dataclass(frozen=True)
class Transfer:
    values: tuple[int, ...]
    cwrs: tuple[int, ...]

    @property
    def is_catchword(self) -> tuple[bool, ...]:
        return tuple(v == c for v, c in zip(self.values, self.cwrs))

    def catch_chips(self) -> list[int]:
        return [i for i, f in enumerate(self.is_catchword) if f]


def _xor(values: Sequence[int]) -> int:
    acc = 0
    for v in values:
        acc ^= v
    return acc


def reconstruct(values: Sequence[int], chip: int) -> int:
    """RAID-3 identity: a chip's word is the XOR of every other word incl. parity."""
    return _xor(v for i, v in enumerate(values) if i != chip)


@dataclass
class _Stuck:
    mask: int
    value: int


class XedDimm:
    """Toy ECC-DIMM: ``data_chips`` data chips plus one parity chip.

    Permanent faults are stuck-at masks applied on every read; transient
    faults flip stored bits until the word is rewritten.
    """

    def __init__(
        self,
        rows: int = 2,
        cols: int = ROW_LINES,
        data_chips: int = 8,
        width: int = 64,
        codec_id: str = "crc8atm",
        seed: int = 0,
    ):
        if rows < 1 or cols < 1 or data_chips < 1:
            raise ConfigError("toy DIMM dimensions must be positive")
        self.rows = rows
        self.cols = cols
        self.data_chips = data_chips
        self.width = width
        self.rng = np.random.default_rng(seed)
        codec = ondie_codec(codec_id, width)
        self.chips = [ChipState(self._fresh_cwr(), codec) for _ in range(data_chips + 1)]
        for c in self.chips:
            c.enable()
        self.fct: list[tuple[int, int]] = []
        self.collisions = 0
        self._store = [[[codec.encode(0)] * (data_chips + 1) for _ in range(cols)] for _ in range(rows)]
        self._stuck: dict[tuple[int, int, int], _Stuck] = {}

    @property
    def nchips(self) -> int:
        return self.data_chips + 1

    def _fresh_cwr(self) -> int:
        raw = int.from_bytes(self.rng.bytes((self.width + 7) // 8), "little")
        return raw & ((1 << self.width) - 1)

    # Storage --------------------------------------------------------------

    def write(self, row: int, col: int, data: Sequence[int]) -> None:
        if len(data) != self.data_chips:
            raise ConfigError(f"expected {self.data_chips} data words")
        words = list(data) + [_xor(data)]
        self._store[row][col] = [self.chips[i].codec.encode(w) for i, w in enumerate(words)]

    def inject_transient(self, chip: int, row: int, col: int, flip_mask: int) -> None:
        self._store[row][col][chip] ^= flip_mask

    def inject_permanent(self, chip: int, row: int, col: int, mask: int, value: int) -> None:
        self._stuck[(chip, row, col)] = _Stuck(mask, value & mask)

    def raw(self, chip: int, row: int, col: int) -> int:
        cw = self._store[row][col][chip]
        s = self._stuck.get((chip, row, col))
        if s is not None:
            cw = (cw & ~s.mask) | s.value
        return cw

    def transfer(self, row: int, col: int, enable: bool = True) -> Transfer:
        vals = []
        for i, chip in enumerate(self.chips):
            saved = chip.xed_enable
            chip.xed_enable = int(enable)
            vals.append(chip_respond(chip, self.raw(i, row, col)))
            chip.xed_enable = saved
        return Transfer(tuple(vals), tuple(c.cwr for c in self.chips))

    # Controller -----------------------------------------------------------

    def read(self, row: int, col: int) -> tuple[list[int], Outcome]:
        return controller_receive(self.transfer(row, col), self, row, col)

    def fct_lookup(self, row: int) -> int | None:
        for r, c in self.fct:
            if r == row:
                return c
        return None

    def fct_record(self, row: int, chip: int) -> None:
        if self.fct_lookup(row) is not None:
            return
        if len(self.fct) < FCT_ENTRIES:
            self.fct.append((row, chip))
            return
        # Full table, no eviction: a further row on the same chip condemns it.
        if all(c == chip for _, c in self.fct):
            self.chips[chip].marked_faulty = True


def _finish(values: list[int], dimm: XedDimm, outcome: Outcome) -> tuple[list[int], Outcome]:
    return values[: dimm.data_chips], outcome


def controller_receive(
    t: Transfer, dimm: XedDimm, row: int, col: int
) -> tuple[list[int], Outcome]:
    values = list(t.values)
    marked = [i for i, c in enumerate(dimm.chips) if c.marked_faulty]
    catch = [i for i in t.catch_chips() if i not in marked]
    if marked:
        if len(marked) > 1:
            return _finish(values, dimm, Outcome.DUE)
        (m,) = marked
        if catch:
            values = list(dimm.transfer(row, col, enable=False).values)
        values[m] = reconstruct(values, m)
        return _finish(values, dimm, Outcome.CORRECTED)
    if not catch:
        if _xor(values) == 0:
            return _finish(values, dimm, Outcome.OK)
        return diagnose_and_correct(dimm, row, col, values)
    if len(catch) == 1:
        (c,) = catch
        values[c] = reconstruct(values, c)
        collision_check_and_rotate(dimm, values[c], c, row, col)
        return _finish(values, dimm, Outcome.CORRECTED)
    return serial_mode_scaling_fix(dimm, row, col)


def serial_mode_scaling_fix(dimm: XedDimm, row: int, col: int) -> tuple[list[int], Outcome]:
    """Re-read with XED disabled so each chip's on-die code corrects itself."""
    values = list(dimm.transfer(row, col, enable=False).values)
    if _xor(values) == 0:
        return _finish(values, dimm, Outcome.CORRECTED)
    return diagnose_and_correct(dimm, row, col, values)


def diagnose_and_correct(
    dimm: XedDimm, row: int, col: int, values: list[int]
) -> tuple[list[int], Outcome]:
    chip = dimm.fct_lookup(row)
    if chip is None:
        chip = interline_diagnosis(dimm, row)
        if chip is None:
            chip = intraline_diagnosis(dimm, row, col)
        if chip is None:
            return _finish(values, dimm, Outcome.DUE)
        dimm.fct_record(row, chip)
    values = list(values)
    values[chip] = reconstruct(values, chip)
    return _finish(values, dimm, Outcome.CORRECTED)


def interline_diagnosis(dimm: XedDimm, row: int) -> int | None:
    """Stream the row and blame the unique chip above the catch-word threshold."""
    counts = [0] * dimm.nchips
    for col in range(dimm.cols):
        for i in dimm.transfer(row, col).catch_chips():
            counts[i] += 1
    threshold = INTERLINE_THRESHOLD * dimm.cols / ROW_LINES
    over = [i for i, n in enumerate(counts) if n > threshold]
    return over[0] if len(over) == 1 else None


def intraline_diagnosis(dimm: XedDimm, row: int, col: int) -> int | None:
    """Write all-zeros then all-ones; a chip that cannot hold them is faulty.

    Only stuck cells survive the rewrite, so transient faults stay invisible.
    The line's contents are restored (the caller reconstructs the culprit).
    """
    saved = [dimm._store[row][col][i] for i in range(dimm.nchips)]
    ones = (1 << dimm.width) - 1
    bad: set[int] = set()
    for pattern in (0, ones):
        for i, chip in enumerate(dimm.chips):
            dimm._store[row][col][i] = chip.codec.encode(pattern)
        vals = dimm.transfer(row, col, enable=False).values
        bad.update(i for i, v in enumerate(vals) if v != pattern)
    for i in range(dimm.nchips):
        dimm._store[row][col][i] = saved[i]
    return bad.pop() if len(bad) == 1 else None


def collision_check_and_rotate(
    dimm: XedDimm, value: int, chip: int, row: int, col: int
) -> bool:
    """A clean word equal to the catch-word looks like a detection; rotate the cwr."""
    if value != dimm.chips[chip].cwr:
        return False
    _, verdict = dimm.chips[chip].codec.decode(dimm.raw(chip, row, col))
    if verdict.status is not Status.CLEAN:
        return False
    dimm.collisions += 1
    fresh = dimm._fresh_cwr()
    while fresh == value:
        fresh = dimm._fresh_cwr()
    # Every chip receives the new catch-word; all are equal-width registers.
    for c in dimm.chips:
        c.cwr = fresh
    return True


# Double-Chipkill by erasure -----------------------------------------------------


def chipkill_encode(data: Sequence[int], width: int = 32) -> list[int]:
    """16 data symbols plus the P/Q check pair, one x4 chip each."""
    p, q = pq_encode(data, width)
    return list(data) + [p, q]


def erasure_double_chipkill(
    rank18: Sequence[int], catchword_flags: Sequence[bool], width: int = 32
) -> tuple[list[int], Outcome]:
    """Rebuild up to two flagged chips from the two check symbols."""
    if len(rank18) != len(catchword_flags) or len(rank18) < 3:
        raise ConfigError("need one flag per chip")
    nflag = sum(bool(f) for f in catchword_flags)
    ndata = len(rank18) - 2
    if nflag == 0:
        return list(rank18[:ndata]), Outcome.OK
    if nflag > 2:
        return list(rank18[:ndata]), Outcome.DUE
    syms = [None if f else v for v, f in zip(rank18[:ndata], catchword_flags[:ndata])]
    p = None if catchword_flags[ndata] else rank18[ndata]
    q = None if catchword_flags[ndata + 1] else rank18[ndata + 1]
    return pq_recover(syms, p, q, width), Outcome.CORRECTED


# Closed forms -----------------------------------------------------------------


def multi_catchword_probability(ber: float, chips: int = 9, bits_per_chip: int = 72) -> float:
    """P(two or more chips send a catch-word) when each bit fails w.p. ``ber``."""
    q = -math.expm1(bits_per_chip * math.log1p(-ber))
    return float(stats.binom.sf(1, chips, q))


def false_identification_probability(
    ber: float, lines: int = ROW_LINES, bits_per_line: int = 72, chips: int = 9
) -> float:
    """P(some healthy chip crosses the inter-line threshold on scaling faults alone)."""
    p_line = -math.expm1(bits_per_line * math.log1p(-ber))
    per_chip = float(stats.binom.sf(INTERLINE_THRESHOLD, lines, p_line))
    return -math.expm1(chips * math.log1p(-per_chip))


@functools.lru_cache(maxsize=None)
def ondie_miss_rate(codec_id: str = "crc8atm", pattern: str = "random") -> float:
    """Measured fraction of multi-bit patterns the on-die code lets through.

    ``random`` averages the 4/6/8-error random rows; ``burst`` takes the worst
    burst row.  Fixed seed, so the value is a constant of the codec.
    """
    if pattern == "random":
        rates = [detection_rate_probe(codec_id, k, ProbeMode.RANDOM, 200_000, seed=k) for k in (4, 6, 8)]
        return 1.0 - float(np.mean(rates))
    if pattern == "burst":
        return 1.0 - min(detection_rate_probe(codec_id, k, ProbeMode.BURST) for k in (4, 8))
    raise ConfigError(f"unknown pattern class {pattern!r}")


def transient_word_due_probability(
    fit: FitTable = SRIDHARAN12,
    chips: int = 9,
    lifetime_hours: float = SEVEN_YEARS_H,
    codec_id: str = "crc8atm",
) -> tuple[float, float, float]:
    """(P(transient word fault), miss rate, product) for one rank."""
    lam = expected_count(fit.rate(Granularity.WORD, Permanence.TRANSIENT), lifetime_hours, chips)
    p_word = -math.expm1(-lam)
    miss = ondie_miss_rate(codec_id, "random")
    return p_word, miss, p_word * miss


# Lifetime rules ------------------------------------------------------------------


class Scheme(enum.Enum):
    ECC_DIMM = "eccdimm"
    XED = "xed"
    CHIPKILL = "chipkill"
    XED_ON_CHIPKILL = "xed-chipkill"
    DOUBLE_CHIPKILL = "double-chipkill"


_GEOMETRY = {
    Scheme.ECC_DIMM: DDR3_X8,
    Scheme.XED: DDR3_X8,
    Scheme.CHIPKILL: DDR3_X4_CHIPKILL,
    Scheme.XED_ON_CHIPKILL: DDR3_X4_CHIPKILL,
    Scheme.DOUBLE_CHIPKILL: DDR3_X4_CHIPKILL,
}

# Faults that inter-line diagnosis can pin down when on-die misses them.
_ROW_SCALE = {Granularity.ROW, Granularity.BANK, Granularity.MULTIBANK, Granularity.MULTIRANK}


def scheme_geometry(scheme: str | Scheme) -> Geometry:
    return _GEOMETRY[Scheme(scheme)]


def xed_config(scheme: str | Scheme, **kw) -> TrialConfig:
    s = Scheme(scheme)
    kw.setdefault("geometry", _GEOMETRY[s])
    kw.setdefault("fit_table", SRIDHARAN12)
    return TrialConfig(scheme=s.value, **kw)


@dataclass
class OverlapScheme:
    """Correction groups that tolerate ``tolerate`` overlapping bad devices.

    ``counts_bits`` says whether single-bit faults occupy a symbol (true for
    codes without on-die help) or are absorbed by on-die correction.
    """

    name: str
    geometry: Geometry
    tolerate: int
    counts_bits: bool
    any_multibit_fails: bool = False
    undetected_fails: bool = False
    codec_id: str = "crc8atm"
    scaling_ber: float = 0.0
    # Codewords span this many channels (same rank index in each).
    channels_per_group: int = 1
    _miss: dict[Granularity, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.geometry.channels % self.channels_per_group:
            raise ConfigError("channels per group must divide the channel count")
        if self.undetected_fails:
            rnd = ondie_miss_rate(self.codec_id, "random")
            bur = ondie_miss_rate(self.codec_id, "burst")
            self._miss = {Granularity.WORD: rnd, Granularity.COLUMN: bur}
        # A bit fault landing in a word that already holds a scaling fault
        # defeats the concealed on-die SEC code.
        self._bit_scaling = -math.expm1(
            (self.geometry.bits_per_chip_per_access + 8 - 1) * math.log1p(-self.scaling_ber)
        ) if self.scaling_ber > 0 else 0.0

    def new_state(self) -> None:
        return None

    def group(self, device: int) -> tuple[int, int]:
        channel, rank, _ = self.geometry.locate(device)
        return channel // self.channels_per_group, rank

    def _single(self, f: FaultRecord) -> str | None:
        if self.any_multibit_fails:
            if f.multibit:
                return f"{f.granularity.value}"
            if f.draw < self._bit_scaling:
                return "bit+scaling"
            return None
        if self.undetected_fails and f.transient and f.granularity in self._miss:
            # Transient faults vanish before intra-line diagnosis can see them.
            if f.draw < self._miss[f.granularity]:
                return f"undetected-{f.granularity.value}"
        return None

    def _members(self, faults: list[FaultRecord]) -> dict[tuple[int, int], list[tuple[int, FaultRecord]]]:
        groups: dict[tuple[int, int], list[tuple[int, FaultRecord]]] = {}
        for f in faults:
            if not self.counts_bits and not f.multibit:
                continue
            for d in f.footprint.devices:
                groups.setdefault(self.group(d), []).append((d, f))
        return groups

    def _overlap(self, members: list[tuple[int, FaultRecord]], fresh: set[int]) -> FaultRecord | None:
        """Newest fault completing a set of ``tolerate + 1`` devices sharing an address."""
        need = self.tolerate + 1
        n = len(members)
        if len({d for d, _ in members}) < need:
            return None
        best: FaultRecord | None = None

        def extend(start: int, devs: frozenset[int], fp: Footprint, chosen: list[FaultRecord]) -> None:
            nonlocal best
            if len(devs) == need:
                if any(c.index in fresh for c in chosen):
                    latest = max(chosen, key=lambda c: c.sort_key())
                    if best is None or latest.sort_key() < best.sort_key():
                        best = latest
                return
            for j in range(start, n):
                d, g = members[j]
                if d in devs:
                    continue
                inter = fp.intersect_address(g.footprint) if chosen else g.footprint
                if inter is None:
                    continue
                extend(j + 1, devs | {d}, inter, chosen + [g])

        extend(0, frozenset(), members[0][1].footprint, [])
        return best

    def epoch(
        self, state: None, active: list[FaultRecord], new: list[FaultRecord], epoch: int
    ) -> EpochResult:
        worst: tuple[tuple[float, int], str] | None = None
        for f in new:
            cause = self._single(f)
            if cause is not None and (worst is None or f.sort_key() < worst[0]):
                worst = (f.sort_key(), cause)
        fresh = {f.index for f in new}
        for members in self._members(active).values():
            hit = self._overlap(members, fresh)
            if hit is not None and (worst is None or hit.sort_key() < worst[0]):
                worst = (hit.sort_key(), f"multi-chip-{hit.granularity.value}")
        if worst is None:
            return EpochResult()
        return EpochResult(EpochVerdict.DUE, worst[0][0], worst[1])


def build_overlap_scheme(scheme: str | Scheme, geometry: Geometry, codec_id: str = "crc8atm",
                         scaling_ber: float = 0.0) -> OverlapScheme:
    s = Scheme(scheme)
    want = _GEOMETRY[s].chips_per_rank
    if geometry.chips_per_rank != want:
        raise ConfigError(f"{s.value} needs {want} chips per rank, got {geometry.chips_per_rank}")
    common = dict(name=s.value, geometry=geometry, codec_id=codec_id, scaling_ber=scaling_ber)
    if s is Scheme.ECC_DIMM:
        return OverlapScheme(tolerate=0, counts_bits=False, any_multibit_fails=True, **common)
    if s is Scheme.XED:
        return OverlapScheme(tolerate=1, counts_bits=False, undetected_fails=True, **common)
    if s is Scheme.CHIPKILL:
        return OverlapScheme(tolerate=1, counts_bits=True, **common)
    if s is Scheme.XED_ON_CHIPKILL:
        return OverlapScheme(tolerate=2, counts_bits=False, **common)
    # 36 chips: the same rank in two lock-stepped channels.
    pair = 2 if geometry.channels % 2 == 0 else 1
    return OverlapScheme(tolerate=2, counts_bits=True, channels_per_group=pair, **common)


def xed_evaluate(fault_set: Sequence[FaultRecord], scheme: str | Scheme, geometry: Geometry,
                 scrub_interval_hours: float = 12.0) -> TrialOutcome:
    return evaluate(list(fault_set), build_overlap_scheme(scheme, geometry), scrub_interval_hours)


def _factory(s: Scheme):
    def make(cfg: TrialConfig) -> OverlapScheme:
        return build_overlap_scheme(s, cfg.geometry, cfg.param("ondie_codec", "crc8atm"), cfg.scaling_ber)

    return make


for _s in Scheme:
    register(_s.value, _factory(_s))
