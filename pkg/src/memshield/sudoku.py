"""Transient-fault cache protection: per-line ECC-1 + CRC-21, RAID-4 parity
groups, sequential data resurrection and skewed dual hashing, plus the
closed-form FIT ladder."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import binom

from .codes import CRC21, CrcCode, CrcSpec, HammingCode
from .faultmodel import ConfigError, sttram_cell_ber
from .simkernel import SURVIVED, TrialOutcome, Verdict

DATA_BITS = 512
ECC1_BITS = 10
CRC_BITS = 21
LINE_BITS = DATA_BITS + ECC1_BITS + CRC_BITS
CRC_MISS = 2.0**-21
SDR_MAX_MISMATCH = 6
HOURS = 3600.0


def ecc_line_bits(k: int) -> int:
    """Stored width of a 512-bit line with a k-error BCH code over GF(2^10)."""
    return DATA_BITS + 10 * k


@dataclass(frozen=True)
class CacheModel:
    lines: int = 2**20
    group_size: int = 1024
    scrub_interval_s: float = 0.020
    delta: float = 30.0
    ber_override: float | None = None

    def __post_init__(self) -> None:
        if self.lines < 1 or self.group_size < 1 or self.lines % self.group_size:
            raise ConfigError("lines must be a positive multiple of group_size")
        if self.scrub_interval_s <= 0:
            raise ConfigError("scrub interval must be positive")

    @property
    def ber(self) -> float:
        if self.ber_override is not None:
            return self.ber_override
        return sttram_cell_ber(self.delta, self.scrub_interval_s)

    @property
    def groups(self) -> int:
        return self.lines // self.group_size

    @property
    def scrubs_per_hour(self) -> float:
        return HOURS / self.scrub_interval_s

    @property
    def overhead_bits(self) -> int:
        return ECC1_BITS + CRC_BITS


DEFAULT_CACHE = CacheModel()


# Line codec -----------------------------------------------------------------------


class LineCodec:
    """ECC-1 (Hamming SEC) over the 533-bit payload ``data << 21 | crc21(data)``."""

    def __init__(self, data_bits: int = DATA_BITS):
        spec = CRC21 if data_bits == DATA_BITS else CrcSpec("crc21", 21, CRC21.generator, 0, data_bits)
        self.data_bits = data_bits
        self.crc = CrcCode(spec)
        self.ham = HammingCode(data_bits + CRC_BITS)
        self.n = self.ham.n
        # Codeword bit of each payload bit; payload bit j = data bit j - 21.
        self._cw_of_payload = [p - 1 for p in self.ham.data_positions]
        self._payload_of_cw = {b: j for j, b in enumerate(self._cw_of_payload)}

    def cw_bit_of_data(self, i: int) -> int:
        return self._cw_of_payload[i + CRC_BITS]

    def encode(self, data: int) -> int:
        return self.ham.encode(self.crc.encode(data))

    def payload(self, cw: int) -> int:
        out = 0
        c = cw
        while c:
            low = c & -c
            j = self._payload_of_cw.get(low.bit_length() - 1)
            if j is not None:
                out |= 1 << j
            c ^= low
        return out

    def data(self, cw: int) -> int:
        return self.payload(cw) >> CRC_BITS

    def crc_clean(self, cw: int) -> bool:
        return self.crc.syndrome(self.payload(cw)) == 0

    def syndrome(self, cw: int) -> int:
        syn = 0
        c = cw
        while c:
            low = c & -c
            syn ^= low.bit_length()
            c ^= low
        return syn

    def ecc1(self, cw: int) -> int:
        """Single-error correction by syndrome; out-of-range syndromes leave cw."""
        s = self.syndrome(cw)
        if 0 < s <= self.n:
            return cw ^ (1 << (s - 1))
        return cw

    def data_positions_mask(self) -> int:
        return (1 << self.data_bits) - 1


@lru_cache(maxsize=None)
def line_codec(data_bits: int = DATA_BITS) -> LineCodec:
    return LineCodec(data_bits)


class ReadVerdict(enum.Enum):
    CLEAN = "CLEAN"
    CORRECTED = "CORRECTED"
    DIRTY = "DIRTY"


def sudoku_read(cw: int, codec: LineCodec | None = None) -> tuple[int, int, ReadVerdict]:
    """CRC check, then ECC-1 and re-check.  Returns (data, codeword, verdict)."""
    codec = codec or line_codec()
    if codec.crc_clean(cw):
        if codec.syndrome(cw):
            # A flipped check bit: data is intact, rewrite the codeword so it does not linger.
            fixed = codec.ecc1(cw)
            if fixed != cw and codec.crc_clean(fixed) and codec.data(fixed) == codec.data(cw):
                return codec.data(fixed), fixed, ReadVerdict.CORRECTED
        return codec.data(cw), cw, ReadVerdict.CLEAN
    fixed = codec.ecc1(cw)
    if fixed != cw and codec.crc_clean(fixed):
        return codec.data(fixed), fixed, ReadVerdict.CORRECTED
    return codec.data(cw), cw, ReadVerdict.DIRTY


# Hashes -----------------------------------------------------------------------------


def hash1(addr: int, lines: int, group: int) -> int:
    """Consecutive lines share a group."""
    return addr // group


def hash2(addr: int, lines: int, group: int) -> int:
    """Line address rotated by log2(group): members are ``lines/group`` apart."""
    return addr % (lines // group)


def check_hash_pair(lines: int, group: int) -> None:
    if lines < group * group:
        raise ConfigError("dual hashing needs lines >= group_size^2 for disjoint groups")


def hash_disjoint(lines: int, group: int) -> bool:
    """Exhaustive: no two lines share a group under both hashes."""
    seen: dict[tuple[int, int], int] = {}
    for a in range(lines):
        key = (hash1(a, lines, group), hash2(a, lines, group))
        if key in seen:
            return False
        seen[key] = a
    return True


# Cache with parity groups --------------------------------------------------------------


class Variant(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"


class ScrubVerdict(enum.Enum):
    OK = "OK"
    DUE = "DUE"
    SDC = "SDC"


@dataclass
class ScrubReport:
    verdict: ScrubVerdict
    corrected: int = 0
    raid: int = 0
    sdr: int = 0
    hash2: int = 0
    unrepaired: tuple[int, ...] = ()


class SudokuCache:
    """A cache whose lines are ECC-1 + CRC-21 codewords, grouped for RAID-4.

    ``truth`` keeps the last written data so scrubs can tell corrected data
    from silent corruption.
    """

    def __init__(self, lines: int = 64, group_size: int = 8, variant: Variant | str = Variant.Z,
                 data_bits: int = DATA_BITS, seed: int | None = 0):
        self.variant = Variant(variant)
        if lines % group_size:
            raise ConfigError("lines must be a multiple of group_size")
        if self.variant is Variant.Z:
            check_hash_pair(lines, group_size)
        self.lines = lines
        self.group = group_size
        self.codec = line_codec(data_bits)
        if seed is None:
            self.truth = [0] * lines
        else:
            rng = np.random.default_rng(seed)
            self.truth = [int.from_bytes(rng.bytes((data_bits + 7) // 8), "little") & ((1 << data_bits) - 1)
                          for _ in range(lines)]
        zero = self.codec.encode(0)
        self.store = [self.codec.encode(d) if d else zero for d in self.truth]
        self.plt1 = [0] * (lines // group_size)
        self.plt2 = [0] * (lines // group_size) if self.variant is Variant.Z else []
        for a, d in enumerate(self.truth):
            self.plt1[self.h1(a)] ^= d
            if self.plt2:
                self.plt2[self.h2(a)] ^= d

    def h1(self, a: int) -> int:
        return hash1(a, self.lines, self.group)

    def h2(self, a: int) -> int:
        return hash2(a, self.lines, self.group)

    def members(self, which: int, g: int) -> range:
        if which == 1:
            return range(g * self.group, (g + 1) * self.group)
        return range(g, self.lines, self.lines // self.group)

    def write(self, a: int, data: int) -> None:
        """Read-modify-write: the PLT entries absorb old XOR new."""
        old = self.truth[a]
        delta = old ^ data
        self.plt1[self.h1(a)] ^= delta
        if self.plt2:
            self.plt2[self.h2(a)] ^= delta
        self.truth[a] = data
        self.store[a] = self.codec.encode(data)

    def inject(self, a: int, positions: Iterable[int]) -> None:
        for p in positions:
            if not 0 <= p < self.codec.n:
                raise ConfigError(f"bit {p} outside the {self.codec.n}-bit line")
            self.store[a] ^= 1 << p

    def read(self, a: int) -> tuple[int, ReadVerdict]:
        data, cw, v = sudoku_read(self.store[a], self.codec)
        if v is ReadVerdict.CORRECTED:
            self.store[a] = cw
        return data, v

    def recompute_plt(self, which: int = 1) -> list[int]:
        out = [0] * (self.lines // self.group)
        for a in range(self.lines):
            g = self.h1(a) if which == 1 else self.h2(a)
            out[g] ^= self.codec.data(self.store[a]) if self.codec.crc_clean(self.store[a]) else self.truth[a]
        return out

    def plt_consistent(self) -> bool:
        ok = self.recompute_plt(1) == self.plt1
        if self.plt2:
            ok = ok and self.recompute_plt(2) == self.plt2
        return ok

    # Repair ladder ---------------------------------------------------------------------

    def _dirty_after_ecc1(self, addrs: Iterable[int], report: ScrubReport) -> list[int]:
        dirty = []
        for a in addrs:
            _, v = self.read(a)
            if v is ReadVerdict.CORRECTED:
                report.corrected += 1
            elif v is ReadVerdict.DIRTY:
                dirty.append(a)
        return dirty

    def _parity(self, which: int, g: int) -> int:
        return self.plt1[g] if which == 1 else self.plt2[g]

    def raid4_reconstruct(self, which: int, g: int, faulty: int) -> bool:
        """Rebuild ``faulty`` from the parity line and the other members."""
        acc = self._parity(which, g)
        for a in self.members(which, g):
            if a == faulty:
                continue
            cw = self.store[a]
            if not self.codec.crc_clean(cw):
                return False
            acc ^= self.codec.data(cw)
        self.store[faulty] = self.codec.encode(acc)
        return True

    def mismatch(self, which: int, g: int) -> int:
        """Parity mismatch over repaired clean lines and raw dirty lines."""
        acc = self._parity(which, g)
        for a in self.members(which, g):
            acc ^= self.codec.data(self.store[a])
        return acc

    def sdr_repair(self, which: int, g: int, dirty: list[int]) -> list[int]:
        """Flip each mismatch bit in turn, retry ECC-1, accept on a clean CRC.

        Returns the lines still dirty.  Aborts when the mismatch has more
        than six bits.
        """
        left = list(dirty)
        progress = True
        while len(left) > 1 and progress:
            progress = False
            m = self.mismatch(which, g)
            if bin(m).count("1") > SDR_MAX_MISMATCH:
                break
            bits = []
            while m:
                low = m & -m
                bits.append(low.bit_length() - 1)
                m ^= low
            for a in list(left):
                cw = self.store[a]
                for i in bits:
                    trial = self.codec.ecc1(cw ^ (1 << self.codec.cw_bit_of_data(i)))
                    if self.codec.crc_clean(trial):
                        self.store[a] = trial
                        left.remove(a)
                        progress = True
                        break
                if progress:
                    break
        return left

    def _repair_group(self, which: int, g: int, dirty: list[int], report: ScrubReport) -> list[int]:
        if len(dirty) == 1:
            if self.raid4_reconstruct(which, g, dirty[0]):
                report.raid += 1
                return []
            return dirty
        if self.variant is Variant.X:
            return dirty
        left = self.sdr_repair(which, g, dirty)
        report.sdr += len(dirty) - len(left)
        if len(left) == 1 and self.raid4_reconstruct(which, g, left[0]):
            report.raid += 1
            return []
        return left

    def scrub(self) -> ScrubReport:
        report = ScrubReport(ScrubVerdict.OK)
        dirty = set(self._dirty_after_ecc1(range(self.lines), report))
        hashes = (1, 2) if self.variant is Variant.Z else (1,)
        progress = True
        while dirty and progress:
            progress = False
            for which in hashes:
                groups: dict[int, list[int]] = {}
                for a in sorted(dirty):
                    groups.setdefault(self.h1(a) if which == 1 else self.h2(a), []).append(a)
                for g, members in groups.items():
                    left = self._repair_group(which, g, members, report)
                    fixed = set(members) - set(left)
                    if fixed:
                        if which == 2:
                            report.hash2 += len(fixed)
                        dirty -= fixed
                        progress = True
        if dirty:
            report.verdict = ScrubVerdict.DUE
            report.unrepaired = tuple(sorted(dirty))
            return report
        for a in range(self.lines):
            if self.codec.data(self.store[a]) != self.truth[a]:
                report.verdict = ScrubVerdict.SDC
                break
        return report


def sudoku_z_repair(cache: SudokuCache) -> bool:
    """Full ladder on a dual-hash cache; True when every line is repaired."""
    if cache.variant is not Variant.Z:
        raise ConfigError("hash-2 repair needs a SuDoku-Z cache")
    return cache.scrub().verdict is ScrubVerdict.OK


def sudoku_evaluate(
    fault_stream: Sequence[Mapping[int, Iterable[int]]],
    variant: Variant | str,
    lines: int = 64,
    group_size: int = 8,
    scrub_interval_s: float = 0.020,
    seed: int = 0,
) -> TrialOutcome:
    """Replay per-epoch bit flips {line: positions}; scrub after each epoch."""
    cache = SudokuCache(lines, group_size, variant, seed=seed)
    for e, faults in enumerate(fault_stream):
        for a, pos in faults.items():
            cache.inject(a, pos)
        rep = cache.scrub()
        if rep.verdict is not ScrubVerdict.OK:
            when = (e + 1) * scrub_interval_s / HOURS
            cause = f"{Variant(variant).value}-{rep.verdict.value.lower()}"
            return TrialOutcome(Verdict[rep.verdict.value], when, cause)
    return SURVIVED


def random_epoch(rng: np.random.Generator, lines: int, ber: float, line_bits: int = LINE_BITS) -> dict[int, list[int]]:
    """Independent bit flips at ``ber`` over the whole cache for one epoch."""
    count = int(rng.binomial(lines * line_bits, ber))
    out: dict[int, list[int]] = {}
    for flat in rng.choice(lines * line_bits, size=count, replace=False) if count else ():
        a, b = divmod(int(flat), line_bits)
        out.setdefault(a, []).append(b)
    return out


@dataclass(frozen=True)
class InjectResult:
    variant: str
    lines: int
    group_size: int
    ber: float
    epochs: int
    failures: int
    due: int
    sdc: int
    failure_rate: float
    seed: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def sudoku_inject(variant: Variant | str, lines: int = 4096, group_size: int = 64, epochs: int = 100,
                  ber: float = 1e-4, seed: int = 0) -> InjectResult:
    """Direct Monte-Carlo: every epoch starts clean, receives flips, is scrubbed.

    Uses zero data: all codes are linear, so only the error pattern matters.
    """
    v = Variant(variant)
    rng = np.random.default_rng(seed)
    due = sdc = 0
    for _ in range(epochs):
        cache = SudokuCache(lines, group_size, v, seed=None)
        for a, pos in random_epoch(rng, lines, ber, cache.codec.n).items():
            cache.inject(a, pos)
        r = cache.scrub().verdict
        due += r is ScrubVerdict.DUE
        sdc += r is ScrubVerdict.SDC
    return InjectResult(v.value, lines, group_size, ber, epochs, due + sdc, due, sdc, (due + sdc) / epochs, seed)


# Analytics -----------------------------------------------------------------------------


def line_fail_prob(ber: float, k: int, n_bits: int | None = None) -> float:
    """P(more than k flips among n bits)."""
    n = ecc_line_bits(k) if n_bits is None else n_bits
    return float(binom.sf(k, n, ber))


def union_prob(p: float, n: float) -> float:
    """1 - (1 - p)^n without cancellation."""
    if p >= 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-p))


def fit_from_scrub(p_per_scrub: float, scrub_interval_s: float) -> float:
    return p_per_scrub * HOURS / scrub_interval_s * 1e9


def sdr_case_counts(line_bits: int = DATA_BITS) -> dict[str, int]:
    """Ordered pairs of 2-fault lines by positional overlap."""
    c = math.comb(line_bits, 2)
    return {
        "total": c * c,
        "no_overlap": c * math.comb(line_bits - 2, 2),
        "one_overlap": c * 2 * (line_bits - 2),
        "both_overlap": c,
    }


def sdr_case_probabilities(line_bits: int = DATA_BITS) -> dict[str, Fraction]:
    k = sdr_case_counts(line_bits)
    t = k["total"]
    return {
        "p_no_overlap": Fraction(k["no_overlap"], t),
        "p_one_overlap": Fraction(k["one_overlap"], t),
        "p_both_overlap": Fraction(k["both_overlap"], t),
    }


def enumerate_sdr_cases(line_bits: int) -> dict[str, int]:
    """Brute-force oracle over all pairs of 2-subsets."""
    from itertools import combinations

    subsets = [frozenset(s) for s in combinations(range(line_bits), 2)]
    out = {"total": 0, "no_overlap": 0, "one_overlap": 0, "both_overlap": 0}
    names = {0: "no_overlap", 1: "one_overlap", 2: "both_overlap"}
    for a in subsets:
        for b in subsets:
            out["total"] += 1
            out[names[len(a & b)]] += 1
    return out


def sdr_pair_failure(data_bits: int = DATA_BITS, crc_bits: int = CRC_BITS, ecc_bits: int | None = None) -> Fraction:
    """Exact P(SDR fails) for two lines with two uniform flips each.

    Both lines stay dirty iff their data-bit flips coincide: the mismatch
    then holds nothing of either line.  A line with both flips outside the
    data dirties its CRC unless both land on ECC-1 check bits.
    """
    ecc = HammingCode(data_bits + crc_bits).m if ecc_bits is None else ecc_bits
    chk = crc_bits + ecc
    n = data_bits + chk
    pairs = math.comb(n, 2)
    dirty_no_data = math.comb(chk, 2) - math.comb(ecc, 2)
    fail = math.comb(data_bits, 2) + data_bits * chk * chk + dirty_no_data**2
    return Fraction(fail, pairs * pairs)


class FitScheme(enum.Enum):
    ECC1 = "ecc1"
    ECC2 = "ecc2"
    ECC3 = "ecc3"
    ECC4 = "ecc4"
    ECC5 = "ecc5"
    SUDOKU_X = "x"
    SUDOKU_Y = "y"
    SUDOKU_Z = "z"


@dataclass(frozen=True)
class FitReport:
    scheme: str
    ber: float
    scrub_interval_s: float
    p_line_fail: float
    p_group_fail: float
    p_cache_fail_per_scrub: float
    due_fit: float
    sdc_fit: float
    fit: float
    mttf_hours: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def multibit_weights(ber: float, n: int = LINE_BITS, kmax: int = 6) -> dict[int, float]:
    """Fault count of a line given it has at least two flips (last key is kmax+)."""
    q = float(binom.sf(1, n, ber))
    w = {c: float(binom.pmf(c, n, ber)) / q for c in range(2, kmax)}
    w[kmax] = float(binom.sf(kmax - 1, n, ber)) / q
    return w


def sdc_fit(cache: CacheModel = DEFAULT_CACHE) -> float:
    """A 5-flip line can be miscorrected to 6 flips that CRC-21 misses; 6+ likewise."""
    p = cache.ber
    events = float(binom.pmf(5, LINE_BITS, p)) + float(binom.sf(5, LINE_BITS, p))
    return fit_from_scrub(events * CRC_MISS * cache.lines, cache.scrub_interval_s)


@dataclass(frozen=True)
class GroupCases:
    q: float  # P(line has >= 2 flips)
    p2: float  # P(exactly two multi-bit lines in a group)
    p3: float
    p4: float  # four or more
    w2: float  # P(exactly 2 flips | >= 2)


def group_cases(cache: CacheModel) -> GroupCases:
    q = float(binom.sf(1, LINE_BITS, cache.ber))
    G = cache.group_size
    return GroupCases(
        q,
        float(binom.pmf(2, G, q)),
        float(binom.pmf(3, G, q)),
        float(binom.sf(3, G, q)),
        multibit_weights(cache.ber)[2],
    )


def y_conditional_failures(cache: CacheModel, f23: float = 0.0, f3: float | None = None) -> tuple[float, float]:
    """(P(fail | two multi-bit lines), P(fail | three)) for sequential resurrection.

    Two lines: both at 2 flips fail only on coinciding data flips; both at
    3+ flips cannot be fixed by one flip.  Three lines: any line at 3+
    flips pushes the mismatch past six bits.
    """
    w2 = group_cases(cache).w2
    w3 = 1.0 - w2
    f2 = w2 * w2 * float(sdr_pair_failure()) + 2 * w2 * w3 * f23 + w3 * w3
    if f3 is None:
        f3 = 1.0 - w2**3
    return f2, f3


def _group_fail(scheme: FitScheme, cache: CacheModel, f23: float = 0.0, f3: float | None = None) -> float:
    gc = group_cases(cache)
    if scheme is FitScheme.SUDOKU_X:
        return float(binom.sf(1, cache.group_size, gc.q))
    f2, f3v = y_conditional_failures(cache, f23, f3)
    py = gc.p2 * f2 + gc.p3 * f3v + gc.p4
    if scheme is FitScheme.SUDOKU_Y:
        return py
    # A line left over under hash 1 survives unless its hash-2 group also
    # fails; two such lines are needed.
    r = min(1.0, 2.0 * py / (cache.group_size * gc.q))
    return py * r * r


def analytic_fit(scheme: FitScheme | str, cache: CacheModel = DEFAULT_CACHE, f23: float = 0.0,
                 f3: float | None = None) -> FitReport:
    s = FitScheme(scheme)
    p = cache.ber
    if s.name.startswith("ECC"):
        k = int(s.value[3:])
        pl = line_fail_prob(p, k)
        pc = union_prob(pl, cache.lines)
        due = fit_from_scrub(pc, cache.scrub_interval_s)
        sdc = 0.0
        pg = pc
    else:
        pl = float(binom.sf(1, LINE_BITS, p))
        pg = _group_fail(s, cache, f23, f3)
        pc = union_prob(pg, cache.groups)
        due = fit_from_scrub(pc, cache.scrub_interval_s)
        sdc = sdc_fit(cache)
    total = due + sdc
    mttf = 1e9 / total if total > 0 else math.inf
    return FitReport(s.value, p, cache.scrub_interval_s, pl, pg, pc, due, sdc, total, mttf)


def fit_table(schemes: Sequence[FitScheme | str], scrub_ms: Sequence[float], delta: float = 30.0) -> list[FitReport]:
    out = []
    for ms in scrub_ms:
        cache = CacheModel(scrub_interval_s=ms / 1000.0, delta=delta)
        out.extend(analytic_fit(s, cache) for s in schemes)
    return out


# Hybrid analytic / Monte-Carlo ladder --------------------------------------------------


def _draw_counts(rng: np.random.Generator, w: Mapping[int, float], k: int) -> list[int]:
    keys = list(w)
    probs = np.array([w[c] for c in keys])
    return [int(c) for c in rng.choice(keys, size=k, p=probs / probs.sum())]


def conditional_failure(variant: Variant | str, counts: Sequence[int], samples: int, seed: int = 0) -> float:
    """MC over one group holding lines with the given flip counts."""
    v = Variant(variant)
    rng = np.random.default_rng(seed)
    k = len(counts)
    fails = 0
    for _ in range(samples):
        cache = SudokuCache(lines=max(k, 2), group_size=max(k, 2), variant=v if v is not Variant.Z else Variant.Y,
                            seed=None)
        for a, c in enumerate(counts):
            cache.inject(a, rng.choice(cache.codec.n, size=c, replace=False).tolist())
        fails += cache.scrub().verdict is not ScrubVerdict.OK
    return fails / samples


@dataclass
class Ladder:
    mttf_hours: dict[str, float] = field(default_factory=dict)
    fit: dict[str, float] = field(default_factory=dict)
    f23: float = 0.0
    f3: float = 0.0
    samples: int = 0

    @property
    def mttf_x_seconds(self) -> float:
        return self.mttf_hours["x"] * HOURS


def mttf_ladder(cache: CacheModel = DEFAULT_CACHE, samples: int = 2000, seed: int = 0) -> Ladder:
    """Analytic group-case weights times engine-measured conditional failures.

    The two-line, two-flip case uses the exact count; the rarer mixed and
    three-line cases are measured on the bit-exact engine.
    """
    w = multibit_weights(cache.ber)
    rng = np.random.default_rng(seed)
    f23 = conditional_failure(Variant.Y, [2, 3], samples, seed) if samples else 0.0
    if samples:
        fails = 0
        for i in range(samples):
            fails += conditional_failure(Variant.Y, _draw_counts(rng, w, 3), 1, seed + 1 + i) > 0
        f3 = fails / samples
    else:
        f3 = None
    out = Ladder(f23=f23, f3=f3 if f3 is not None else 1.0 - w[2] ** 3, samples=samples)
    for s in (FitScheme.SUDOKU_X, FitScheme.SUDOKU_Y, FitScheme.SUDOKU_Z, FitScheme.ECC5):
        r = analytic_fit(s, cache, f23, f3)
        out.mttf_hours[s.value] = r.mttf_hours
        out.fit[s.value] = r.fit
    return out
