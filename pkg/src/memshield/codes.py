"""Bit-exact codecs and parity primitives.

Words are handled as Python integers with an explicit width; bit 0 is the
least-significant bit.  ``BitBlock`` wraps that pair for the public API.

Hamming layout
--------------
A Hamming code over ``k`` data bits uses positions ``1..n`` (``n = k + m``)
where position ``p`` has syndrome ``p``.  Check bits sit at the powers of two
and data bits fill the remaining positions in ascending order.  Codeword bit
``i`` holds position ``i + 1``.  The extended (SECDED) variant appends one
overall-parity bit at codeword bit ``n`` (position ``n + 1``, Hamming syndrome
zero).  For the (72,64) code this places the overall parity at the end of the
word, which is what makes even-aligned 4-bit bursts cancel (``a ^ a+1 ^ a+2 ^
a+3 == 0`` for even ``a``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np


class CodecError(ValueError):
    """Raised on width mismatches and unknown codec identifiers."""


@dataclass(frozen=True)
class BitBlock:
    value: int
    width: int

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise CodecError(f"width must be positive, got {self.width}")
        if self.value < 0 or self.value >> self.width:
            raise CodecError(f"value does not fit in {self.width} bits")

    @classmethod
    def zeros(cls, width: int) -> "BitBlock":
        return cls(0, width)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "BitBlock":
        value = 0
        for i, b in enumerate(bits):
            if b not in (0, 1):
                raise CodecError(f"bit {i} is {b!r}, expected 0 or 1")
            value |= b << i
        return cls(value, len(bits))

    @property
    def bits(self) -> list[int]:
        return [(self.value >> i) & 1 for i in range(self.width)]

    def flip(self, *positions: int) -> "BitBlock":
        v = self.value
        for p in positions:
            if not 0 <= p < self.width:
                raise CodecError(f"bit {p} outside width {self.width}")
            v ^= 1 << p
        return BitBlock(v, self.width)

    def __xor__(self, other: "BitBlock") -> "BitBlock":
        if other.width != self.width:
            raise CodecError(f"width mismatch {self.width} vs {other.width}")
        return BitBlock(self.value ^ other.value, self.width)

    def popcount(self) -> int:
        return bin(self.value).count("1")


class Status(enum.Enum):
    CLEAN = "CLEAN"
    CORRECTED = "CORRECTED"
    DETECTED_UNCORRECTABLE = "DETECTED_UNCORRECTABLE"
    # Decoders never emit this themselves; probes use it when ground truth
    # shows a CORRECTED verdict produced the wrong payload.
    MISCORRECTED_UNKNOWN = "MISCORRECTED_UNKNOWN"


@dataclass(frozen=True)
class CodecVerdict:
    status: Status
    corrected_positions: tuple[int, ...] = ()
    syndrome: int = 0

    def __post_init__(self) -> None:
        if (self.status is Status.CLEAN) != (self.syndrome == 0):
            raise CodecError("CLEAN verdict must coincide with a zero syndrome")
        if self.corrected_positions and self.status is not Status.CORRECTED:
            raise CodecError("corrected_positions only allowed on CORRECTED")


def _mask(width: int) -> int:
    return (1 << width) - 1


def _check(block: BitBlock, width: int, what: str) -> None:
    if block.width != width:
        raise CodecError(f"{what} expects {width} bits, got {block.width}")


# Hamming --------------------------------------------------------------------


class HammingCode:
    """Positional Hamming SEC code, optionally extended with overall parity.

    >>> code = HammingCode(64, extended=True)
    >>> (code.n, code.check_bits)
    (72, 8)
    """

    def __init__(self, data_bits: int, extended: bool = False):
        if data_bits < 1:
            raise CodecError("data_bits must be >= 1")
        m = 1
        while (1 << m) < m + data_bits + 1:
            m += 1
        self.k = data_bits
        self.m = m
        self.positions = data_bits + m
        self.extended = extended
        self.n = self.positions + (1 if extended else 0)
        self.check_bits = self.n - data_bits
        self.parity_positions = [1 << i for i in range(m)]
        pset = set(self.parity_positions)
        self.data_positions = [p for p in range(1, self.positions + 1) if p not in pset]
        assert len(self.data_positions) == data_bits
        # Per-codeword-bit syndrome contribution; bit m of the syndrome is the
        # overall parity for the extended code.
        ov = (1 << m) if extended else 0
        self.bit_syndromes = [(i + 1) | ov for i in range(self.positions)]
        if extended:
            self.bit_syndromes.append(ov)
        self._scatter = [1 << (p - 1) for p in self.data_positions]

    def encode(self, data: int) -> int:
        if data >> self.k:
            raise CodecError(f"payload exceeds {self.k} bits")
        cw = 0
        syn = 0
        i = 0
        d = data
        while d:
            if d & 1:
                cw |= self._scatter[i]
                syn ^= self.data_positions[i]
            d >>= 1
            i += 1
        for j in range(self.m):
            if (syn >> j) & 1:
                cw |= 1 << ((1 << j) - 1)
        if self.extended and bin(cw).count("1") & 1:
            cw |= 1 << self.positions
        return cw

    def syndrome(self, cw: int) -> int:
        syn = 0
        c = cw & _mask(self.positions)
        p = 1
        while c:
            if c & 1:
                syn ^= p
            c >>= 1
            p += 1
        if self.extended:
            syn |= (bin(cw).count("1") & 1) << self.m
        return syn

    def extract(self, cw: int) -> int:
        data = 0
        for i, p in enumerate(self.data_positions):
            data |= ((cw >> (p - 1)) & 1) << i
        return data

    def decode(self, cw: int) -> tuple[int, CodecVerdict]:
        if cw >> self.n:
            raise CodecError(f"codeword exceeds {self.n} bits")
        syn = self.syndrome(cw)
        if syn == 0:
            return self.extract(cw), CodecVerdict(Status.CLEAN, (), 0)
        pos = syn & _mask(self.m)
        if self.extended:
            odd = syn >> self.m
            if not odd:
                return self.extract(cw), CodecVerdict(Status.DETECTED_UNCORRECTABLE, (), syn)
        if self.extended and pos == 0:
            bit = self.positions
        elif pos <= self.positions:
            bit = pos - 1
        else:
            bit = -1
        if bit < 0:
            return self.extract(cw), CodecVerdict(Status.DETECTED_UNCORRECTABLE, (), syn)
        fixed = cw ^ (1 << bit)
        return self.extract(fixed), CodecVerdict(Status.CORRECTED, (bit,), syn)


HAMMING7264 = HammingCode(64, extended=True)


def hamming7264_encode(data: BitBlock) -> BitBlock:
    _check(data, 64, "hamming7264_encode")
    return BitBlock(HAMMING7264.encode(data.value), 72)


def hamming7264_decode(cw: BitBlock) -> tuple[BitBlock, CodecVerdict]:
    _check(cw, 72, "hamming7264_decode")
    data, verdict = HAMMING7264.decode(cw.value)
    return BitBlock(data, 64), verdict


# CRC -------------------------------------------------------------------------


@dataclass(frozen=True)
class CrcSpec:
    """Non-reflected MSB-first CRC; ``generator`` omits the implied top term."""

    name: str
    width: int
    generator: int
    init: int
    data_width: int

    def __post_init__(self) -> None:
        if self.width not in (8, 21, 32):
            raise CodecError(f"unsupported CRC width {self.width}")
        if self.generator >> self.width == 1:
            # Accept the full-polynomial form with an explicit top term.
            object.__setattr__(self, "generator", self.generator & _mask(self.width))
        if self.generator >> self.width or self.init >> self.width:
            raise CodecError("generator/init wider than the CRC")


CRC8_ATM = CrcSpec("crc8atm", 8, 0x07, 0x00, 64)
CRC21 = CrcSpec("crc21", 21, 0x302899, 0x000000, 512)
CRC32 = CrcSpec("crc32", 32, 0x04C11DB7, 0xFFFFFFFF, 512)


def crc_bitwise(spec: CrcSpec, data: int, nbits: int) -> int:
    """Reference long division, one bit at a time from the MSB."""
    top = 1 << (spec.width - 1)
    mask = _mask(spec.width)
    reg = spec.init
    for i in range(nbits - 1, -1, -1):
        fb = ((reg & top) != 0) ^ ((data >> i) & 1)
        reg = (reg << 1) & mask
        if fb:
            reg ^= spec.generator
    return reg


@lru_cache(maxsize=None)
def _crc_tables(spec: CrcSpec, nbits: int) -> tuple[int, tuple[int, ...]]:
    # Affine decomposition: crc(d) = base ^ XOR of unit-vector contributions.
    zero = CrcSpec(spec.name, spec.width, spec.generator, 0, spec.data_width)
    base = crc_bitwise(spec, 0, nbits)
    unit = tuple(crc_bitwise(zero, 1 << i, nbits) for i in range(nbits))
    return base, unit


def crc_fast(spec: CrcSpec, data: int, nbits: int | None = None) -> int:
    nbits = spec.data_width if nbits is None else nbits
    base, unit = _crc_tables(spec, nbits)
    reg = base
    i = 0
    while data:
        low = data & -data
        i = low.bit_length() - 1
        reg ^= unit[i]
        data ^= low
    return reg


def crc_compute(spec: CrcSpec, data: BitBlock) -> int:
    _check(data, spec.data_width, f"crc_compute[{spec.name}]")
    return crc_fast(spec, data.value)


class CrcCode:
    """Systematic CRC codeword ``data << width | crc`` with syndrome-table SEC.

    Single-bit correction is offered only when every codeword bit has a
    distinct nonzero syndrome (true for CRC8-ATM over 64 bits).
    """

    def __init__(self, spec: CrcSpec):
        self.spec = spec
        self.k = spec.data_width
        self.n = spec.data_width + spec.width
        zero = CrcSpec(spec.name, spec.width, spec.generator, 0, spec.data_width)
        syn = [1 << i for i in range(spec.width)]
        syn += [crc_bitwise(zero, 1 << i, self.k) for i in range(self.k)]
        self.bit_syndromes = syn
        table = {s: i for i, s in enumerate(syn)}
        self.correctable = len(table) == self.n and 0 not in table
        self._table = table if self.correctable else {}

    def encode(self, data: int) -> int:
        if data >> self.k:
            raise CodecError(f"payload exceeds {self.k} bits")
        return (data << self.spec.width) | crc_fast(self.spec, data)

    def syndrome(self, cw: int) -> int:
        data = cw >> self.spec.width
        return crc_fast(self.spec, data) ^ (cw & _mask(self.spec.width))

    def decode(self, cw: int) -> tuple[int, CodecVerdict]:
        if cw >> self.n:
            raise CodecError(f"codeword exceeds {self.n} bits")
        syn = self.syndrome(cw)
        if syn == 0:
            return cw >> self.spec.width, CodecVerdict(Status.CLEAN, (), 0)
        bit = self._table.get(syn)
        if bit is None:
            return cw >> self.spec.width, CodecVerdict(Status.DETECTED_UNCORRECTABLE, (), syn)
        fixed = cw ^ (1 << bit)
        return fixed >> self.spec.width, CodecVerdict(Status.CORRECTED, (bit,), syn)


CODECS: dict[str, HammingCode | CrcCode] = {
    "hamming7264": HAMMING7264,
    "crc8atm": CrcCode(CRC8_ATM),
    "crc21": CrcCode(CRC21),
    "crc32": CrcCode(CRC32),
}


def get_codec(codec_id: str) -> HammingCode | CrcCode:
    try:
        return CODECS[codec_id]
    except KeyError:
        raise CodecError(f"unknown codec {codec_id!r}; choose from {sorted(CODECS)}") from None


# Detection probe ------------------------------------------------------------


class ProbeMode(enum.Enum):
    RANDOM = "random"
    BURST = "burst"


def _pattern_syndromes(codec, patterns: np.ndarray) -> np.ndarray:
    table = np.array(codec.bit_syndromes, dtype=np.uint64)
    return np.bitwise_xor.reduce(table[patterns], axis=1)


def _miscorrected(codec, pattern: Iterable[int]) -> bool:
    """Ground-truth check on the zero codeword (the codes are linear)."""
    err = 0
    for b in pattern:
        err ^= 1 << int(b)
    data, verdict = codec.decode(err)
    return verdict.status is Status.CORRECTED and data != 0


def detection_rate_probe(
    codec: str,
    nerrors: int,
    mode: ProbeMode | str,
    trials: int = 100_000,
    seed: int = 0,
    count_miscorrection: bool = False,
) -> float:
    """Fraction of ``nerrors``-bit patterns that leave an invalid codeword.

    RANDOM draws ``trials`` uniformly random sets of distinct bit positions.
    BURST enumerates every window of ``nerrors`` consecutive bits, all flipped.
    With ``count_miscorrection`` a pattern that decodes to a wrong payload
    under a CORRECTED verdict is scored as a miss.
    """
    code = get_codec(codec)
    mode = ProbeMode(mode) if not isinstance(mode, ProbeMode) else mode
    if not 1 <= nerrors <= 8:
        raise CodecError("nerrors must lie in [1, 8]")
    n = code.n
    if mode is ProbeMode.BURST:
        starts = np.arange(n - nerrors + 1)
        patterns = starts[:, None] + np.arange(nerrors)[None, :]
    else:
        if trials < 1:
            raise CodecError("trials must be >= 1")
        rng = np.random.default_rng(seed)
        patterns = np.empty((trials, nerrors), dtype=np.int64)
        chunk = 200_000
        for lo in range(0, trials, chunk):
            hi = min(trials, lo + chunk)
            keys = rng.random((hi - lo, n))
            patterns[lo:hi] = np.argpartition(keys, nerrors - 1, axis=1)[:, :nerrors]
    detected = _pattern_syndromes(code, patterns) != 0
    if count_miscorrection:
        for idx in np.flatnonzero(detected):
            if _miscorrected(code, patterns[idx]):
                detected[idx] = False
    return float(detected.mean())


def exact_random_detection(codec: str, nerrors: int) -> float:
    """Enumerate every ``nerrors``-subset; feasible up to about 4 errors at 72 bits."""
    from itertools import combinations

    code = get_codec(codec)
    syn = code.bit_syndromes
    total = 0
    missed = 0
    for combo in combinations(range(code.n), nerrors):
        s = 0
        for b in combo:
            s ^= syn[b]
        total += 1
        missed += s == 0
    return 1.0 - missed / total


# Parity ----------------------------------------------------------------------


def parity_xor(lines: Sequence[BitBlock], width: int) -> BitBlock:
    if not lines:
        raise CodecError("parity_xor needs at least one line")
    acc = 0
    for i, line in enumerate(lines):
        if line.width != width:
            raise CodecError(f"line {i} has width {line.width}, expected {width}")
        acc ^= line.value
    return BitBlock(acc, width)


def xor_fold(values: Iterable[int]) -> int:
    acc = 0
    for v in values:
        acc ^= v
    return acc


# Erasure pair over GF(2^8) -----------------------------------------------------
# Two check symbols P = sum d_i and Q = sum g^i d_i recover any two erasures.

_GF_POLY = 0x11D


def _gf_tables() -> tuple[list[int], list[int]]:
    exp = [0] * 512
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _GF_POLY
    for i in range(255, 512):
        exp[i] = exp[i - 255]
    return exp, log


GF_EXP, GF_LOG = _gf_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("zero has no inverse in GF(2^8)")
    return GF_EXP[255 - GF_LOG[a]]


def _bytes_of(v: int, width: int) -> list[int]:
    return [(v >> (8 * j)) & 0xFF for j in range((width + 7) // 8)]


def _from_bytes(bs: Sequence[int]) -> int:
    v = 0
    for j, b in enumerate(bs):
        v |= b << (8 * j)
    return v


def pq_encode(symbols: Sequence[int], width: int) -> tuple[int, int]:
    """Return (P, Q) check symbols for data symbols of ``width`` bits each."""
    nbytes = (width + 7) // 8
    p = [0] * nbytes
    q = [0] * nbytes
    for i, s in enumerate(symbols):
        g = GF_EXP[i]
        for j, b in enumerate(_bytes_of(s, width)):
            p[j] ^= b
            q[j] ^= gf_mul(g, b)
    return _from_bytes(p), _from_bytes(q)


def pq_recover(
    symbols: Sequence[int | None], p: int | None, q: int | None, width: int
) -> list[int]:
    """Fill in up to two erased entries (``None``) among data, P and Q."""
    data = list(symbols)
    lost = [i for i, s in enumerate(data) if s is None]
    lost_checks = int(p is None) + int(q is None)
    if len(lost) + lost_checks > 2:
        raise CodecError("more than two erasures")
    if not lost:
        return [int(s) for s in data]  # type: ignore[arg-type]
    nbytes = (width + 7) // 8
    known = [(i, _bytes_of(s, width)) for i, s in enumerate(data) if s is not None]
    out_bytes = {i: [0] * nbytes for i in lost}
    for j in range(nbytes):
        ps = 0 if p is None else (p >> (8 * j)) & 0xFF
        qs = 0 if q is None else (q >> (8 * j)) & 0xFF
        for i, bs in known:
            ps ^= bs[j]
            qs ^= gf_mul(GF_EXP[i], bs[j])
        if len(lost) == 1:
            (x,) = lost
            if p is not None:
                out_bytes[x][j] = ps
            else:
                out_bytes[x][j] = gf_mul(qs, gf_inv(GF_EXP[x]))
        else:
            x, y = lost
            gx, gy = GF_EXP[x], GF_EXP[y]
            # dx + dy = ps ; gx dx + gy dy = qs
            dx = gf_mul(qs ^ gf_mul(gy, ps), gf_inv(gx ^ gy))
            out_bytes[x][j] = dx
            out_bytes[y][j] = ps ^ dx
    for i in lost:
        data[i] = _from_bytes(out_bytes[i])
    return [int(s) for s in data]  # type: ignore[arg-type]


def expected_collision_time_s(width_bits: int, write_interval_s: float = 4e-9) -> float:
    """Mean time between catch-word collisions for uniform written data."""
    return math.ldexp(1.0, width_bits) * write_interval_s
