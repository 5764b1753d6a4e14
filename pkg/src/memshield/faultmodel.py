"""Fault taxonomy, FIT tables, arrival sampling and closed-form fault math."""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

HOURS_PER_YEAR = 8760.0
SEVEN_YEARS_H = 7 * HOURS_PER_YEAR


class ConfigError(ValueError):
    """Malformed configuration (bad preset file, out-of-range parameter)."""


class Granularity(enum.Enum):
    BIT = "bit"
    WORD = "word"
    COLUMN = "column"
    ROW = "row"
    BANK = "bank"
    MULTIBANK = "multibank"
    MULTIRANK = "multirank"
    DATA_TSV = "data_tsv"
    ADDR_TSV = "addr_tsv"


class Permanence(enum.Enum):
    TRANSIENT = "transient"
    PERMANENT = "permanent"


# Index sets -------------------------------------------------------------------


def _min_match(a: int, mask: int, value: int, nbits: int) -> int | None:
    """Smallest r >= a (r < 2**nbits) with ``r & mask == value``."""
    if a >> nbits:
        return None
    if a & mask == value:
        return a
    # r equals a above some bit i, has 1 where a has 0 at bit i, and is
    # minimal below.  The lowest feasible i gives the smallest r.
    for i in range(nbits):
        if (a >> i) & 1:
            continue
        if (mask >> i) & 1 and not (value >> i) & 1:
            continue
        hi_mask = ~((1 << (i + 1)) - 1)
        high = a & hi_mask
        if (high & mask) != (value & mask & hi_mask):
            continue
        return high | (1 << i) | (value & ((1 << i) - 1))
    return None


def _count_below(x: int, mask: int, value: int, nbits: int) -> int:
    """Number of r in [0, x) with ``r & mask == value``."""
    x = min(x, 1 << nbits)
    if x >= 1 << nbits:
        free = nbits - bin(mask & ((1 << nbits) - 1)).count("1")
        return 1 << free
    total = 0
    for i in range(nbits - 1, -1, -1):
        if not (x >> i) & 1:
            continue
        hi_mask = ~((1 << (i + 1)) - 1) & ((1 << nbits) - 1)
        if (x & hi_mask & mask) != (value & hi_mask & mask):
            continue
        if (mask >> i) & 1 and (value >> i) & 1:
            continue
        free = i - bin(mask & ((1 << i) - 1)).count("1")
        total += 1 << free
    return total


@dataclass(frozen=True)
class IndexSet:
    """Indices r in [start, stop) with ``r & mask == value``."""

    start: int
    stop: int
    mask: int = 0
    value: int = 0

    def __post_init__(self) -> None:
        if self.start < 0 or self.stop < self.start:
            raise ValueError(f"bad range [{self.start}, {self.stop})")
        if self.value & ~self.mask:
            raise ValueError("value has bits outside mask")

    @classmethod
    def single(cls, i: int) -> "IndexSet":
        return cls(i, i + 1)

    @classmethod
    def span(cls, n: int) -> "IndexSet":
        return cls(0, n)

    def _nbits(self) -> int:
        return max(self.stop.bit_length(), self.mask.bit_length(), 1)

    def __len__(self) -> int:
        n = self._nbits()
        return _count_below(self.stop, self.mask, self.value, n) - _count_below(
            self.start, self.mask, self.value, n
        )

    def __contains__(self, r: int) -> bool:
        return self.start <= r < self.stop and r & self.mask == self.value

    def first(self) -> int | None:
        r = _min_match(self.start, self.mask, self.value, self._nbits())
        return r if r is not None and r < self.stop else None

    def intersect(self, other: "IndexSet") -> "IndexSet | None":
        common = self.mask & other.mask
        if (self.value ^ other.value) & common:
            return None
        out = IndexSet(
            max(self.start, other.start),
            max(min(self.stop, other.stop), max(self.start, other.start)),
            self.mask | other.mask,
            self.value | other.value,
        )
        return out if out.first() is not None else None

    def __iter__(self):
        r = self.first()
        n = self._nbits()
        while r is not None and r < self.stop:
            yield r
            r = _min_match(r + 1, self.mask, self.value, n)

    def within(self, n: int) -> bool:
        return self.stop <= n


# Geometry and footprints ------------------------------------------------------


@dataclass(frozen=True)
class Geometry:
    """Device topology.  Devices are chips (DRAM) or dies (stacks)."""

    channels: int = 4
    ranks_per_channel: int = 2
    chips_per_rank: int = 9
    banks_per_chip: int = 8
    rows_per_bank: int = 32768
    cols_per_row: int = 128
    bits_per_chip_per_access: int = 64
    words_per_line: int = 8
    data_tsvs_per_channel: int = 0
    addr_tsvs_per_channel: int = 0
    burst_length: int = 8

    def __post_init__(self) -> None:
        for name in (
            "channels",
            "ranks_per_channel",
            "chips_per_rank",
            "banks_per_chip",
            "rows_per_bank",
            "cols_per_row",
            "bits_per_chip_per_access",
            "words_per_line",
            "burst_length",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def devices(self) -> int:
        return self.channels * self.ranks_per_channel * self.chips_per_rank

    def device_id(self, channel: int, rank: int, chip: int) -> int:
        return (channel * self.ranks_per_channel + rank) * self.chips_per_rank + chip

    def locate(self, device: int) -> tuple[int, int, int]:
        chip = device % self.chips_per_rank
        rank = (device // self.chips_per_rank) % self.ranks_per_channel
        channel = device // (self.chips_per_rank * self.ranks_per_channel)
        return channel, rank, chip

    def rank_of(self, device: int) -> int:
        return device // self.chips_per_rank

    @property
    def all_bits(self) -> int:
        return (1 << self.bits_per_chip_per_access) - 1


# x8 2Gb chips, dual-ranked 4GB DIMMs, four channels.
DDR3_X8 = Geometry()
# x4 chips, 18 per rank (16 data + 2 check symbols).
DDR3_X4_CHIPKILL = Geometry(chips_per_rank=18, bits_per_chip_per_access=32)


@dataclass(frozen=True)
class Footprint:
    devices: tuple[int, ...]
    banks: IndexSet
    rows: IndexSet
    cols: IndexSet
    bits: int

    def intersect(self, other: "Footprint") -> "Footprint | None":
        devs = tuple(sorted(set(self.devices) & set(other.devices)))
        if not devs:
            return None
        return self.intersect_address(other, devs)

    def intersect_address(
        self, other: "Footprint", devices: tuple[int, ...] | None = None
    ) -> "Footprint | None":
        """Intersection ignoring device identity (same address, any device)."""
        banks = self.banks.intersect(other.banks)
        if banks is None:
            return None
        rows = self.rows.intersect(other.rows)
        if rows is None:
            return None
        cols = self.cols.intersect(other.cols)
        if cols is None:
            return None
        bits = self.bits & other.bits
        return Footprint(devices if devices is not None else self.devices, banks, rows, cols, bits)

    def n_rows(self) -> int:
        return len(self.rows)

    def within(self, g: Geometry) -> bool:
        return (
            all(0 <= d < g.devices for d in self.devices)
            and self.banks.within(g.banks_per_chip)
            and self.rows.within(g.rows_per_bank)
            and self.cols.within(g.cols_per_row)
            and 0 < self.bits <= g.all_bits
        )


@dataclass(frozen=True)
class FaultRecord:
    granularity: Granularity
    permanence: Permanence
    timestamp: float
    footprint: Footprint
    index: int = 0
    # Uniform draw fixed at arrival; decides per-fault coin flips such as
    # on-die detection, so adding faults never changes an existing fault's luck.
    draw: float = 0.5

    @property
    def transient(self) -> bool:
        return self.permanence is Permanence.TRANSIENT

    @property
    def multibit(self) -> bool:
        """True when one access to the device can see more than one bad bit."""
        return self.granularity is not Granularity.BIT

    def sort_key(self) -> tuple[float, int]:
        return (self.timestamp, self.index)


def _rand_bit(rng: np.random.Generator, width: int) -> int:
    return 1 << int(rng.integers(width))


def instantiate(
    gran: Granularity, device: int, g: Geometry, rng: np.random.Generator
) -> Footprint:
    """Place a fault of the given granularity uniformly within device ``device``."""
    bank = int(rng.integers(g.banks_per_chip))
    row = int(rng.integers(g.rows_per_bank))
    col = int(rng.integers(g.cols_per_row))
    all_rows = IndexSet.span(g.rows_per_bank)
    all_cols = IndexSet.span(g.cols_per_row)
    one_bank = IndexSet.single(bank)
    if gran is Granularity.BIT:
        return Footprint((device,), one_bank, IndexSet.single(row), IndexSet.single(col),
                         _rand_bit(rng, g.bits_per_chip_per_access))
    if gran is Granularity.WORD:
        return Footprint((device,), one_bank, IndexSet.single(row), IndexSet.single(col), g.all_bits)
    if gran is Granularity.COLUMN:
        return Footprint((device,), one_bank, all_rows, IndexSet.single(col), g.all_bits)
    if gran is Granularity.ROW:
        return Footprint((device,), one_bank, IndexSet.single(row), all_cols, g.all_bits)
    if gran is Granularity.BANK:
        return Footprint((device,), one_bank, all_rows, all_cols, g.all_bits)
    if gran is Granularity.MULTIBANK:
        nb = g.banks_per_chip
        if nb < 2:
            return Footprint((device,), one_bank, all_rows, all_cols, g.all_bits)
        size = int(rng.integers(2, nb + 1))
        lo = int(rng.integers(0, nb - size + 1))
        return Footprint((device,), IndexSet(lo, lo + size), all_rows, all_cols, g.all_bits)
    if gran is Granularity.MULTIRANK:
        channel, _, chip = g.locate(device)
        # The whole chip position fails in every rank sharing the channel.
        devs = tuple(g.device_id(channel, r, chip) for r in range(g.ranks_per_channel))
        return Footprint(devs, IndexSet.span(g.banks_per_chip), all_rows, all_cols, g.all_bits)
    if gran is Granularity.DATA_TSV:
        return data_tsv_footprint(device, int(rng.integers(max(g.data_tsvs_per_channel, 1))), g)
    if gran is Granularity.ADDR_TSV:
        return addr_tsv_footprint(device, int(rng.integers(max(g.addr_tsvs_per_channel, 1))), g)
    raise ConfigError(f"unknown granularity {gran}")


def data_tsv_footprint(device: int, tsv: int, g: Geometry) -> Footprint:
    """A data TSV carries bit ``tsv`` of every beat of every line."""
    width = g.data_tsvs_per_channel
    if not 0 <= tsv < width:
        raise ConfigError(f"data TSV {tsv} outside 0..{width - 1}")
    bits = 0
    for beat in range(g.burst_length):
        pos = tsv + beat * width
        if pos < g.bits_per_chip_per_access:
            bits |= 1 << pos
    return Footprint((device,), IndexSet.span(g.banks_per_chip), IndexSet.span(g.rows_per_bank),
                     IndexSet.span(g.cols_per_row), bits)


def addr_tsv_footprint(device: int, tsv: int, g: Geometry) -> Footprint:
    """An address TSV stuck at zero hides the half of the space with its bit set.

    TSVs map row bits first, then bank bits, then column bits.
    """
    if not 0 <= tsv < max(g.addr_tsvs_per_channel, 1):
        raise ConfigError(f"address TSV {tsv} outside range")
    row_bits = max((g.rows_per_bank - 1).bit_length(), 1)
    bank_bits = max((g.banks_per_chip - 1).bit_length(), 0)
    banks = IndexSet.span(g.banks_per_chip)
    rows = IndexSet.span(g.rows_per_bank)
    cols = IndexSet.span(g.cols_per_row)
    if tsv < row_bits:
        rows = IndexSet(0, g.rows_per_bank, 1 << tsv, 1 << tsv)
    elif tsv < row_bits + bank_bits:
        b = tsv - row_bits
        banks = IndexSet(0, g.banks_per_chip, 1 << b, 1 << b)
    else:
        c = (tsv - row_bits - bank_bits) % max((g.cols_per_row - 1).bit_length(), 1)
        cols = IndexSet(0, g.cols_per_row, 1 << c, 1 << c)
    return Footprint((device,), banks, rows, cols, g.all_bits)


# FIT tables ----------------------------------------------------------------


@dataclass
class FitTable:
    """FIT rates keyed by (granularity, permanence); per device unless noted."""

    rates: dict[tuple[Granularity, Permanence], float] = field(default_factory=dict)
    name: str = "custom"

    def __post_init__(self) -> None:
        for key, r in self.rates.items():
            if r < 0 or not math.isfinite(r):
                raise ConfigError(f"rate for {key} must be finite and >= 0, got {r}")

    def rate(self, gran: Granularity, perm: Permanence) -> float:
        return self.rates.get((gran, perm), 0.0)

    def with_rate(self, gran: Granularity, perm: Permanence, value: float) -> "FitTable":
        rates = dict(self.rates)
        rates[(gran, perm)] = value
        return FitTable(rates, self.name)

    def scaled(self, factor: float) -> "FitTable":
        return FitTable({k: v * factor for k, v in self.rates.items()}, self.name)

    def total(self) -> float:
        return sum(self.rates.values())

    def items(self):
        for gran in Granularity:
            for perm in Permanence:
                r = self.rates.get((gran, perm), 0.0)
                if r > 0:
                    yield gran, perm, r

    def dumps(self) -> str:
        cp = configparser.ConfigParser()
        cp["meta"] = {"name": self.name}
        for perm in Permanence:
            cp[perm.value] = {
                g.value: repr(self.rates[(g, perm)]) for g in Granularity if (g, perm) in self.rates
            }
        import io

        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "FitTable":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"FIT preset parse error: {exc}") from exc
        lines = text.splitlines()

        def where(key: str) -> int:
            for n, line in enumerate(lines, 1):
                if line.split("=")[0].strip().lower() == key:
                    return n
            return 0

        rates: dict[tuple[Granularity, Permanence], float] = {}
        for section in cp.sections():
            if section == "meta":
                continue
            try:
                perm = Permanence(section)
            except ValueError:
                raise ConfigError(f"unknown section [{section}]") from None
            for key, raw in cp[section].items():
                try:
                    gran = Granularity(key)
                except ValueError:
                    raise ConfigError(f"line {where(key)}: unknown granularity {key!r}") from None
                try:
                    val = float(raw)
                except ValueError:
                    raise ConfigError(f"line {where(key)}: {key} = {raw!r} is not a number") from None
                if val < 0 or not math.isfinite(val):
                    raise ConfigError(f"line {where(key)}: {key} must be finite and >= 0")
                rates[(gran, perm)] = val
        name = cp.get("meta", "name", fallback="custom")
        return cls(rates, name)


def _table(name: str, rows: Mapping[Granularity, tuple[float, float]]) -> FitTable:
    rates = {}
    for g, (t, p) in rows.items():
        rates[(g, Permanence.TRANSIENT)] = t
        rates[(g, Permanence.PERMANENT)] = p
    return FitTable(rates, name)


# Per-chip rates for DDR DRAM (field study of a large HPC fleet).
SRIDHARAN12 = _table(
    "sridharan12",
    {
        Granularity.BIT: (14.2, 18.6),
        Granularity.WORD: (1.4, 0.3),
        Granularity.COLUMN: (1.4, 5.6),
        Granularity.ROW: (0.2, 8.2),
        Granularity.BANK: (0.8, 10.0),
        Granularity.MULTIBANK: (0.3, 1.4),
        Granularity.MULTIRANK: (0.9, 2.8),
    },
)

# Per-die rates for 8Gb stacked dies.
STACKED_8GB = _table(
    "stacked8gb",
    {
        Granularity.BIT: (113.6, 148.8),
        Granularity.WORD: (11.2, 2.4),
        Granularity.COLUMN: (2.6, 10.5),
        Granularity.ROW: (0.8, 32.8),
        Granularity.BANK: (6.4, 80.0),
    },
)

PRESETS: dict[str, FitTable] = {t.name: t for t in (SRIDHARAN12, STACKED_8GB)}


def load_preset(name: str) -> FitTable:
    try:
        t = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown FIT preset {name!r}; known: {sorted(PRESETS)}") from None
    return FitTable(dict(t.rates), t.name)


# Arrival sampling ---------------------------------------------------------------


def expected_count(fit: float, lifetime_hours: float, devices: int = 1) -> float:
    return fit * 1e-9 * lifetime_hours * devices


class ArrivalSampler:
    """Poisson arrivals for every device, granularity and permanence.

    ``tsv_fit`` holds per-channel rates for DATA_TSV / ADDR_TSV faults; the
    fault is attributed to the channel's first device of rank 0.  The class
    table is built once so campaigns pay only for the draws.
    """

    def __init__(
        self,
        fit: FitTable,
        geometry: Geometry,
        lifetime_hours: float,
        tsv_fit: FitTable | None = None,
    ):
        if lifetime_hours <= 0:
            raise ConfigError("lifetime_hours must be positive")
        self.geometry = geometry
        self.lifetime_hours = lifetime_hours
        classes: list[tuple[Granularity, Permanence, float, int]] = []
        for gran, perm, r in fit.items():
            if gran in (Granularity.DATA_TSV, Granularity.ADDR_TSV):
                continue
            classes.append((gran, perm, r, geometry.devices))
        if tsv_fit is not None:
            for gran, perm, r in tsv_fit.items():
                classes.append((gran, perm, r, geometry.channels))
        self.classes = classes
        means = np.array([expected_count(r, lifetime_hours, n) for _, _, r, n in classes])
        self.total = float(means.sum())
        self.probs = means / self.total if self.total > 0 else means

    def sample(self, rng: np.random.Generator) -> list[FaultRecord]:
        if self.total <= 0:
            return []
        count = int(rng.poisson(self.total))
        if count == 0:
            return []
        which = rng.choice(len(self.classes), size=count, p=self.probs)
        times = rng.uniform(0.0, self.lifetime_hours, size=count)
        draws = rng.random(count)
        g = self.geometry
        out = []
        for k in range(count):
            gran, perm, _, ndev = self.classes[int(which[k])]
            unit = int(rng.integers(ndev))
            if gran in (Granularity.DATA_TSV, Granularity.ADDR_TSV):
                device = g.device_id(unit, 0, 0)
            else:
                device = unit
            fp = instantiate(gran, device, g, rng)
            out.append(FaultRecord(gran, perm, float(times[k]), fp, draw=float(draws[k])))
        out.sort(key=lambda f: f.timestamp)
        return [replace(f, index=i) for i, f in enumerate(out)]


def sample_arrivals(
    fit: FitTable,
    geometry: Geometry,
    lifetime_hours: float,
    rng_seed: int | np.random.Generator,
    tsv_fit: FitTable | None = None,
) -> list[FaultRecord]:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return ArrivalSampler(fit, geometry, lifetime_hours, tsv_fit).sample(rng)


# Closed forms ------------------------------------------------------------------


def word_fault_prob(p: float, b: int, k: int) -> float:
    """Probability that a ``b``-bit word holds exactly ``k`` faults (small p·b)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return 1.0 - sum(word_fault_prob(p, b, j) for j in range(1, 8))
    return (p * b) ** k / math.factorial(k)


def expected_faulty_words(p: float, b: int, words: int, kmax: int = 4) -> dict[int, float]:
    if words < 1:
        raise ValueError("words must be >= 1")
    out = {0: words * word_fault_prob(p, b, 0)}
    for k in range(1, kmax + 1):
        out[k] = words * word_fault_prob(p, b, k)
    return out


def birthday_capacity(buckets: int) -> float:
    if buckets < 1:
        raise ValueError("buckets must be >= 1")
    return 1.2 * math.sqrt(buckets)


def birthday_simulate(buckets: int, trials: int, seed: int) -> np.ndarray:
    """Throws until the first bucket holds two balls, one value per trial."""
    rng = np.random.default_rng(seed)
    out = np.empty(trials, dtype=np.int64)
    batch = max(64, int(4 * math.sqrt(buckets)))
    for t in range(trials):
        seen: set[int] = set()
        n = 0
        done = False
        while not done:
            for x in rng.integers(0, buckets, size=batch).tolist():
                n += 1
                if x in seen:
                    done = True
                    break
                seen.add(x)
        out[t] = n
    return out


F0_HZ = 1e9


def sttram_cell_ber(delta: float, t_s: float) -> float:
    if delta <= 0 or t_s < 0:
        raise ValueError("delta must be > 0 and t_s >= 0")
    lam = F0_HZ / math.exp(delta)
    return -math.expm1(-lam * t_s)


class Constraint(enum.Enum):
    NONE = "none"
    MAX_ONE_PER_WORD = "max_one_per_word"


@dataclass
class ScalingLayout:
    """Sparse scaling-fault layout: faulty word indices and their bit positions."""

    n_words: int
    word_bits: int
    words: np.ndarray
    bits: list[tuple[int, ...]]

    def counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.bits], dtype=np.int64)

    def as_dict(self) -> dict[int, tuple[int, ...]]:
        return dict(zip(self.words.tolist(), self.bits))


def scaling_fault_layout(
    n_words: int,
    word_bits: int,
    ber: float,
    constraint: Constraint | str = Constraint.NONE,
    seed: int = 0,
) -> ScalingLayout:
    """Bernoulli(ber) faults per bit over ``n_words`` words of ``word_bits`` bits."""
    if not 0.0 <= ber <= 1.0:
        raise ConfigError("ber must lie in [0, 1]")
    constraint = Constraint(constraint)
    rng = np.random.default_rng(seed)
    total = n_words * word_bits
    k = int(rng.binomial(total, ber)) if ber > 0 else 0
    if k == 0:
        return ScalingLayout(n_words, word_bits, np.empty(0, dtype=np.int64), [])
    if k > total // 4:
        flat = np.flatnonzero(rng.random(total) < ber)
    else:
        flat = np.unique(rng.integers(0, total, size=k))
        while flat.size < k:
            extra = rng.integers(0, total, size=k - flat.size)
            flat = np.unique(np.concatenate([flat, extra]))
    words = flat // word_bits
    bitpos = flat % word_bits
    uw, start = np.unique(words, return_index=True)
    ends = np.append(start[1:], flat.size)
    groups = [tuple(bitpos[s:e].tolist()) for s, e in zip(start, ends)]
    if constraint is Constraint.MAX_ONE_PER_WORD:
        groups = [g if len(g) == 1 else (g[int(rng.integers(len(g)))],) for g in groups]
    return ScalingLayout(n_words, word_bits, uw.astype(np.int64), groups)
