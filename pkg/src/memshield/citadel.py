"""Stacked-memory protection: TSV faults and TSV-SWAP, tri-dimensional parity,
dual-granularity sparing, and the lifetime rules that combine them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .faultmodel import (
    STACKED_8GB,
    ConfigError,
    FaultRecord,
    SEVEN_YEARS_H,
    ArrivalSampler,
    FitTable,
    Footprint,
    Geometry,
    Granularity,
    IndexSet,
    Permanence,
    addr_tsv_footprint,
    data_tsv_footprint,
)
from .simkernel import EpochResult, EpochVerdict, TrialConfig, TrialOutcome, evaluate, register, trial_rng

TSV_SET_SIZE = 70
DATA_TSVS_PER_SET = 64
ADDR_TSVS_PER_SET = 6
ROWS_PER_BANK_SPARE = 4
SPARE_BANKS = 2


class Organization(enum.Enum):
    HBM_LIKE = "hbm"
    HMC_LIKE = "hmc"
    TEZZARON_LIKE = "tezzaron"


@dataclass(frozen=True)
class StackGeometry:
    """An 8+1 die stack.  HBM-like stacks give each die its own channel and TSVs;
    HMC-like vaults run one TSV bundle per bank index through every die;
    Tezzaron-like stacks double the TSV density per die."""

    organization: Organization = Organization.HBM_LIKE
    data_dies: int = 8
    metadata_dies: int = 1
    banks_per_channel: int = 8
    rows_per_bank: int = 65536
    row_buffer_bytes: int = 2048
    line_bytes: int = 64
    data_tsvs: int = 256
    addr_tsvs: int = 24
    burst: int = 2

    def __post_init__(self) -> None:
        if (self.data_tsvs % DATA_TSVS_PER_SET) or (self.addr_tsvs % ADDR_TSVS_PER_SET):
            raise ConfigError("TSV counts must fill whole 70-TSV sets")
        if self.data_tsvs // DATA_TSVS_PER_SET != self.addr_tsvs // ADDR_TSVS_PER_SET:
            raise ConfigError("data and address TSVs must form the same number of sets")
        if self.data_tsvs * self.burst != self.line_bytes * 8:
            raise ConfigError("data TSVs x burst must equal the line width")

    @property
    def dies(self) -> int:
        return self.data_dies + self.metadata_dies

    @property
    def lines_per_row(self) -> int:
        return self.row_buffer_bytes // self.line_bytes

    @property
    def tsv_sets(self) -> int:
        return self.data_tsvs // DATA_TSVS_PER_SET

    @property
    def tsv_channels(self) -> int:
        """Independent TSV bundles in the stack."""
        if self.organization is Organization.HMC_LIKE:
            return self.banks_per_channel
        return self.dies

    def geometry(self) -> Geometry:
        return Geometry(
            channels=self.dies,
            ranks_per_channel=1,
            chips_per_rank=1,
            banks_per_chip=self.banks_per_channel,
            rows_per_bank=self.rows_per_bank,
            cols_per_row=self.lines_per_row,
            bits_per_chip_per_access=self.line_bytes * 8,
            words_per_line=1,
            data_tsvs_per_channel=self.data_tsvs,
            addr_tsvs_per_channel=self.addr_tsvs,
            burst_length=self.burst,
        )


HBM_STACK = StackGeometry()
HMC_STACK = StackGeometry(Organization.HMC_LIKE)
# Twice the TSVs per die; the line moves in one beat over 512 data TSVs.
TEZZARON_STACK = StackGeometry(Organization.TEZZARON_LIKE, data_tsvs=512, addr_tsvs=48, burst=1)
STACKS = {s.organization.value: s for s in (HBM_STACK, HMC_STACK, TEZZARON_STACK)}


def tsv_fit_table(total_fit: float, stack: StackGeometry = HBM_STACK) -> FitTable:
    """Split a per-channel TSV FIT between data and address TSVs by count."""
    n = stack.data_tsvs + stack.addr_tsvs
    return FitTable(
        {
            (Granularity.DATA_TSV, Permanence.PERMANENT): total_fit * stack.data_tsvs / n,
            (Granularity.ADDR_TSV, Permanence.PERMANENT): total_fit * stack.addr_tsvs / n,
        },
        name=f"tsv{total_fit:g}",
    )


# TSV footprints and TSV-SWAP -----------------------------------------------------


class TsvKind(enum.Enum):
    DATA = "data"
    ADDR = "addr"


def tsv_fault_footprint(kind: TsvKind, index: int, stack: StackGeometry, channel: int = 0) -> Footprint:
    """Cells made unreadable by one broken TSV in TSV bundle ``channel``."""
    g = stack.geometry()
    if stack.organization is Organization.HMC_LIKE:
        base = data_tsv_footprint(0, index, g) if kind is TsvKind.DATA else addr_tsv_footprint(0, index, g)
        # A vault's TSVs serve one bank index on every die.
        return Footprint(tuple(range(stack.dies)), IndexSet.single(channel), base.rows, base.cols, base.bits)
    if kind is TsvKind.DATA:
        return data_tsv_footprint(channel, index, g)
    return addr_tsv_footprint(channel, index, g)


def tsv_set_of(kind: TsvKind, index: int) -> int:
    per = DATA_TSVS_PER_SET if kind is TsvKind.DATA else ADDR_TSVS_PER_SET
    return index // per


def is_standby(kind: TsvKind, index: int) -> bool:
    return kind is TsvKind.DATA and index % DATA_TSVS_PER_SET == 0


class SwapMode(enum.Enum):
    NONE = "none"
    SET_BASED = "set"
    FULLY_ASSOC = "assoc"


@dataclass
class TsvSwapState:
    stack: StackGeometry = HBM_STACK
    # (channel, set) -> faulty TSV now routed over the set's standby TSV.
    swapped: dict[tuple[int, int], tuple[TsvKind, int]] = field(default_factory=dict)
    # channel -> number of repairs in fully-associative mode.
    assoc_used: dict[int, int] = field(default_factory=dict)

    def assoc_capacity(self) -> int:
        return self.stack.tsv_sets * self.stack.burst


TsvFault = tuple[int, TsvKind, int]


def tsv_swap(
    state: TsvSwapState, faulty_tsvs: Iterable[TsvFault], mode: SwapMode
) -> tuple[list[TsvFault], list[TsvFault]]:
    """Route faulty TSVs over standby TSVs; returns (repaired, unrepaired).

    A broken standby TSV still takes the set's slot: its own bits come from
    the metadata replica, so nothing else in that set can be repaired.
    """
    repaired: list[TsvFault] = []
    unrepaired: list[TsvFault] = []
    for ch, kind, idx in faulty_tsvs:
        if mode is SwapMode.NONE:
            unrepaired.append((ch, kind, idx))
            continue
        if mode is SwapMode.SET_BASED:
            key = (ch, tsv_set_of(kind, idx))
            if key in state.swapped:
                if state.swapped[key] == (kind, idx):
                    repaired.append((ch, kind, idx))
                else:
                    unrepaired.append((ch, kind, idx))
                continue
            state.swapped[key] = (kind, idx)
            repaired.append((ch, kind, idx))
            continue
        used = state.assoc_used.get(ch, 0)
        if used < state.assoc_capacity():
            state.assoc_used[ch] = used + 1
            repaired.append((ch, kind, idx))
        else:
            unrepaired.append((ch, kind, idx))
    return repaired, unrepaired


def transfer_line(
    line: int,
    width: int,
    burst: int,
    faulty: set[int],
    swaps: dict[int, int] | None = None,
) -> int:
    """Send a ``width*burst``-bit line; broken TSVs read as 0.

    ``swaps`` maps a broken TSV to the standby TSV that now carries its bits.
    The standby's own bits arrive through the metadata replica.
    """
    swaps = swaps or {}
    carriers = {t: t for t in range(width)}
    for bad, standby in swaps.items():
        carriers[bad] = standby
    replica = set(swaps.values())
    out = 0
    for beat in range(burst):
        for t in range(width):
            pos = beat * width + t
            bit = (line >> pos) & 1
            wire = carriers[t]
            if t in replica and t not in swaps:
                ok = True  # served from the metadata copy
            else:
                ok = wire not in faulty
            out |= (bit if ok else 0) << pos
    return out


def standby_map(faulty: Iterable[int], width: int) -> dict[int, int]:
    """Set-based assignment: first fault in each 64-TSV set takes its standby."""
    out: dict[int, int] = {}
    taken: set[int] = set()
    for t in sorted(faulty):
        s = t // DATA_TSVS_PER_SET
        if s in taken or t >= width:
            continue
        taken.add(s)
        standby = s * DATA_TSVS_PER_SET
        if t != standby:
            out[t] = standby
        else:
            out[t] = t
    return out


def tsv_survival_curve(
    fault_counts: Sequence[int],
    mode: SwapMode,
    stack: StackGeometry = HBM_STACK,
    trials: int = 100_000,
    seed: int = 0,
) -> np.ndarray:
    """P(some TSV fault stays unrepaired) after ``n`` uniform TSV faults.

    Buckets-and-balls over the stack's (channel, set) slots.
    """
    rng = np.random.default_rng(seed)
    per_channel = stack.data_tsvs + stack.addr_tsvs
    channels = stack.tsv_channels
    out = []
    for n in fault_counts:
        if n <= 0:
            out.append(0.0)
            continue
        if mode is SwapMode.NONE:
            out.append(1.0)
            continue
        tsv = rng.integers(0, channels * per_channel, size=(trials, n))
        ch = tsv // per_channel
        local = tsv % per_channel
        if mode is SwapMode.SET_BASED:
            sets = np.where(
                local < stack.data_tsvs,
                local // DATA_TSVS_PER_SET,
                (local - stack.data_tsvs) // ADDR_TSVS_PER_SET,
            )
            bucket = ch * stack.tsv_sets + sets
            nb = channels * stack.tsv_sets
            cap = 1
        else:
            bucket = ch
            nb = channels
            cap = stack.tsv_sets * stack.burst
        counts = np.zeros((trials, nb), dtype=np.int32)
        np.add.at(counts, (np.repeat(np.arange(trials), n), bucket.ravel()), 1)
        out.append(float((counts.max(axis=1) > cap).mean()))
    return np.array(out)


def faults_at_half_failure(mode: SwapMode, stack: StackGeometry = HBM_STACK, trials: int = 20_000,
                           seed: int = 0, limit: int = 400) -> int:
    """Smallest fault count whose unrepaired probability reaches 50%."""
    lo, hi = 1, limit
    while lo < hi:
        mid = (lo + hi) // 2
        if tsv_survival_curve([mid], mode, stack, trials, seed)[0] >= 0.5:
            hi = mid
        else:
            lo = mid + 1
    return lo


# Tri-dimensional parity --------------------------------------------------------------

LineAddr = tuple[int, int, int, int]  # die, bank, row, col


@dataclass
class ParityState3DP:
    dies: int
    banks: int
    rows: int
    cols: int
    dim1: np.ndarray  # [row, col]
    dim2: np.ndarray  # [die, col]
    dim3: np.ndarray  # [bank, col]

    @classmethod
    def empty(cls, dies: int, banks: int, rows: int, cols: int) -> "ParityState3DP":
        z = lambda *s: np.zeros(s, dtype=np.uint64)  # noqa: E731
        return cls(dies, banks, rows, cols, z(rows, cols), z(dies, cols), z(banks, cols))


def parity3dp_recompute(data: np.ndarray) -> ParityState3DP:
    """Oracle: parities straight from a [die, bank, row, col] array of 64-bit lines."""
    dies, banks, rows, cols = data.shape
    st = ParityState3DP.empty(dies, banks, rows, cols)
    st.dim1[:] = np.bitwise_xor.reduce(data.reshape(dies * banks, rows, cols), axis=0)
    st.dim2[:] = np.bitwise_xor.reduce(data.reshape(dies, banks * rows, cols), axis=1)
    st.dim3[:] = np.bitwise_xor.reduce(data.transpose(1, 0, 2, 3).reshape(banks, dies * rows, cols), axis=1)
    return st


def parity3dp_update(st: ParityState3DP, die: int, bank: int, row: int, col: int,
                     old_line: int, new_line: int) -> ParityState3DP:
    """Read-before-write update: fold old XOR new into all three dimensions."""
    delta = np.uint64(old_line ^ new_line)
    st.dim1[row, col] ^= delta
    st.dim2[die, col] ^= delta
    st.dim3[bank, col] ^= delta
    return st


class ToyStack:
    """Small line-accurate stack used to validate the footprint-level decoder."""

    def __init__(self, dies: int = 3, banks: int = 2, rows: int = 4, cols: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.data = rng.integers(0, 2**63, size=(dies, banks, rows, cols), dtype=np.uint64)
        self.parity = parity3dp_recompute(self.data)

    def write(self, addr: LineAddr, value: int) -> None:
        old = int(self.data[addr])
        self.data[addr] = np.uint64(value)
        parity3dp_update(self.parity, *addr, old, value)

    def lines_of(self, fp: Footprint) -> set[LineAddr]:
        d, b, r, c = self.data.shape
        return {
            (die, bank, row, col)
            for die in fp.devices if die < d
            for bank in fp.banks if bank < b
            for row in fp.rows if row < r
            for col in fp.cols if col < c
        }


def _group_keys(addr: LineAddr) -> tuple[tuple, tuple, tuple]:
    die, bank, row, col = addr
    return (1, row, col), (2, die, col), (3, bank, col)


def parity3dp_correct(stack: ToyStack, crc_flags: Iterable[LineAddr],
                      corrupted: np.ndarray | None = None) -> tuple[bool, list[LineAddr]]:
    """Peel flagged lines: any line alone in one of its parity groups is rebuilt.

    ``corrupted`` is the faulty image (defaults to the clean data); rebuilt
    lines are written into it.
    """
    img = stack.data.copy() if corrupted is None else corrupted
    bad = set(crc_flags)
    members: dict[tuple, set[LineAddr]] = {}
    for a in bad:
        for k in _group_keys(a):
            members.setdefault(k, set()).add(a)
    repaired: list[LineAddr] = []
    progress = True
    while bad and progress:
        progress = False
        for a in sorted(bad):
            for k in _group_keys(a):
                if members[k] != {a}:
                    continue
                img[a] = _rebuild(img, stack.parity, a, k[0])
                bad.discard(a)
                for kk in _group_keys(a):
                    members[kk].discard(a)
                repaired.append(a)
                progress = True
                break
    return not bad, repaired


def _rebuild(img: np.ndarray, p: ParityState3DP, a: LineAddr, dim: int) -> np.uint64:
    die, bank, row, col = a
    if dim == 1:
        acc = p.dim1[row, col] ^ np.bitwise_xor.reduce(img[:, :, row, col].ravel())
    elif dim == 2:
        acc = p.dim2[die, col] ^ np.bitwise_xor.reduce(img[die, :, :, col].ravel())
    else:
        acc = p.dim3[bank, col] ^ np.bitwise_xor.reduce(img[:, bank, :, col].ravel())
    return np.uint64(acc ^ img[a])


# Footprint-level decoder used by the lifetime model.


def _single(s: IndexSet) -> int | None:
    return s.first() if len(s) == 1 else None


def _one_die(fp: Footprint) -> int | None:
    return fp.devices[0] if len(fp.devices) == 1 else None


def _self_ok(fp: Footprint, dim: int) -> bool:
    """Each of the fault's lines sits in its own group of dimension ``dim``."""
    if dim == 1:
        return _one_die(fp) is not None and len(fp.banks) == 1
    if dim == 2:
        return len(fp.banks) == 1 and len(fp.rows) == 1
    return _one_die(fp) is not None and len(fp.rows) == 1


def _conflict(f: Footprint, g: Footprint, dim: int) -> bool:
    """Some group of dimension ``dim`` holds a line of each, and they differ."""
    if f.cols.intersect(g.cols) is None:
        return False
    if dim == 1:
        if f.rows.intersect(g.rows) is None:
            return False
        same = (_one_die(f) is not None and _one_die(f) == _one_die(g)
                and _single(f.banks) is not None and _single(f.banks) == _single(g.banks))
        return not same
    if dim == 2:
        if not set(f.devices) & set(g.devices):
            return False
        same = (_single(f.banks) is not None and _single(f.banks) == _single(g.banks)
                and _single(f.rows) is not None and _single(f.rows) == _single(g.rows))
        return not same
    if f.banks.intersect(g.banks) is None:
        return False
    same = (_one_die(f) is not None and _one_die(f) == _one_die(g)
            and _single(f.rows) is not None and _single(f.rows) == _single(g.rows))
    return not same


def peel_3dp(footprints: Sequence[Footprint], dims: Sequence[int] = (1, 2, 3)) -> list[int]:
    """Indices of footprints left uncorrectable after iterative peeling."""
    left = list(range(len(footprints)))
    progress = True
    while left and progress:
        progress = False
        for i in list(left):
            f = footprints[i]
            for d in dims:
                if not _self_ok(f, d):
                    continue
                if any(_conflict(f, footprints[j], d) for j in left if j != i):
                    continue
                left.remove(i)
                progress = True
                break
    return left


# Dynamic dual-granularity sparing ---------------------------------------------------------


@dataclass
class SparingState:
    rrt: dict[tuple[int, int], set[int]] = field(default_factory=dict)  # (die, bank) -> spared rows
    brt: list[tuple[int, int]] = field(default_factory=list)  # spared banks
    spare_banks: int = SPARE_BANKS
    rows_per_bank: int = ROWS_PER_BANK_SPARE


@dataclass(frozen=True)
class DdsResult:
    row_spared: tuple[tuple[int, int, int], ...] = ()
    bank_spared: tuple[tuple[int, int], ...] = ()
    exhausted: bool = False


def dds_apply(sp: SparingState, census: dict[tuple[int, int], set[int] | int]) -> DdsResult:
    """Spare rows for banks with at most four faulty rows, whole banks beyond.

    ``census`` maps (die, bank) to its faulty rows (or a count for banks
    whose rows need not be listed).
    """
    rows_out: list[tuple[int, int, int]] = []
    banks_out: list[tuple[int, int]] = []
    exhausted = False
    for key in sorted(census):
        if key in sp.brt:
            continue
        entry = census[key]
        have = sp.rrt.get(key, set())
        if isinstance(entry, int):
            total = entry + len(have)
            new_rows: set[int] = set()
        else:
            new_rows = set(entry) - have
            total = len(have | set(entry))
        if total <= sp.rows_per_bank:
            if new_rows:
                sp.rrt[key] = have | new_rows
                rows_out.extend((key[0], key[1], r) for r in sorted(new_rows))
            continue
        if len(sp.brt) < sp.spare_banks:
            sp.brt.append(key)
            sp.rrt.pop(key, None)
            banks_out.append(key)
        else:
            exhausted = True
    return DdsResult(tuple(rows_out), tuple(banks_out), exhausted)


def _permanent_sampler(stack: StackGeometry, fit: FitTable, lifetime_hours: float | None):
    perm = FitTable({k: v for k, v in fit.rates.items() if k[1] is Permanence.PERMANENT}, fit.name)
    return ArrivalSampler(perm, stack.geometry(), lifetime_hours or SEVEN_YEARS_H)


def bank_row_counts(faults: Iterable[FaultRecord]) -> dict[tuple[int, int], int]:
    """Faulty rows per (die, bank); large faults count their full row span."""
    big: dict[tuple[int, int], int] = {}
    small: dict[tuple[int, int], set[int]] = {}
    for f in faults:
        fp = f.footprint
        n = len(fp.rows)
        for d in fp.devices:
            for b in fp.banks:
                if n > ROWS_PER_BANK_SPARE:
                    big[(d, b)] = max(big.get((d, b), 0), n)
                else:
                    small.setdefault((d, b), set()).update(fp.rows)
    out = {k: len(v) for k, v in small.items()}
    for k, n in big.items():
        out[k] = max(n, out.get(k, 0))
    return out


def faulty_bank_census(
    trials: int,
    seed: int = 0,
    stack: StackGeometry = HBM_STACK,
    fit: FitTable = STACKED_8GB,
    lifetime_hours: float | None = None,
) -> dict[str, float]:
    """Distribution of failed banks (more than four faulty rows) per stack.

    Only permanent faults count; fractions are over stacks with at least one.
    """
    sampler = _permanent_sampler(stack, fit, lifetime_hours)
    hist = {1: 0, 2: 0, 3: 0}
    with_fail = 0
    for t in range(trials):
        counts = bank_row_counts(sampler.sample(trial_rng(seed, t)))
        failed = sum(1 for v in counts.values() if v > ROWS_PER_BANK_SPARE)
        if failed:
            with_fail += 1
            hist[min(failed, 3)] += 1
    n = max(with_fail, 1)
    return {
        "stacks": trials,
        "with_failed_bank": with_fail,
        "one": hist[1] / n,
        "two": hist[2] / n,
        "three_plus": hist[3] / n,
    }


def faulty_rows_per_bank(banks: int, seed: int = 0, stack: StackGeometry = HBM_STACK,
                         fit: FitTable = STACKED_8GB, max_trials: int = 10_000_000) -> np.ndarray:
    """Faulty-row counts of the first ``banks`` faulty banks met across lifetimes."""
    sampler = _permanent_sampler(stack, fit, None)
    out: list[int] = []
    t = 0
    while len(out) < banks and t < max_trials:
        out.extend(bank_row_counts(sampler.sample(trial_rng(seed, t))).values())
        t += 1
    return np.array(out[:banks])


# Lifetime rules --------------------------------------------------------------------------


class CitadelScheme(enum.Enum):
    SAME_BANK_NONE = "same-bank"
    STRIPE_SYMBOL = "stripe"
    RAID5 = "raid5"
    SIX_EC_SEVEN_ED = "6ec7ed"
    TDP = "3dp"
    TDP_DDS = "3dp-dds"


_TSV = (Granularity.DATA_TSV, Granularity.ADDR_TSV)


@dataclass
class _StackState:
    swap: TsvSwapState
    sparing: SparingState = field(default_factory=SparingState)
    repaired: set[int] = field(default_factory=set)
    footprints: dict[int, Footprint] = field(default_factory=dict)


@dataclass
class CitadelRules:
    name: str
    kind: CitadelScheme
    stack: StackGeometry = HBM_STACK
    swap_mode: SwapMode = SwapMode.FULLY_ASSOC
    exhaustion_is_due: bool = False

    def new_state(self) -> _StackState:
        return _StackState(TsvSwapState(self.stack))

    def _tsv_index(self, f: FaultRecord) -> tuple[TsvKind, int]:
        kind = TsvKind.DATA if f.granularity is Granularity.DATA_TSV else TsvKind.ADDR
        g = self.stack.geometry()
        fp = f.footprint
        if kind is TsvKind.DATA:
            low = (fp.bits & -fp.bits).bit_length() - 1
            return kind, low % g.data_tsvs_per_channel
        # Recover the address bit from the shape the footprint was built with.
        row_bits = max((g.rows_per_bank - 1).bit_length(), 1)
        bank_bits = max((g.banks_per_chip - 1).bit_length(), 0)
        if fp.rows.mask:
            return kind, fp.rows.mask.bit_length() - 1
        if fp.banks.mask:
            return kind, row_bits + fp.banks.mask.bit_length() - 1
        return kind, row_bits + bank_bits + fp.cols.mask.bit_length() - 1

    def _footprint(self, st: _StackState, f: FaultRecord) -> Footprint:
        fp = st.footprints.get(f.index)
        if fp is None:
            fp = f.footprint
            if f.granularity in _TSV and self.stack.organization is Organization.HMC_LIKE:
                kind, idx = self._tsv_index(f)
                fp = tsv_fault_footprint(kind, idx, self.stack, f.footprint.devices[0] % self.stack.tsv_channels)
            st.footprints[f.index] = fp
        return fp

    def epoch(self, st: _StackState, active: list[FaultRecord], new: list[FaultRecord], epoch: int) -> EpochResult:
        for f in new:
            if f.granularity in _TSV:
                kind, idx = self._tsv_index(f)
                ch = f.footprint.devices[0] % self.stack.tsv_channels
                fixed, _ = tsv_swap(st.swap, [(ch, kind, idx)], self.swap_mode)
                if fixed:
                    st.repaired.add(f.index)
        live = [f for f in active if f.index not in st.repaired]
        retired = frozenset(f.index for f in active if f.index in st.repaired)
        if not live:
            return EpochResult(retired=retired)
        fps = [self._footprint(st, f) for f in live]
        cause = self._uncorrectable(live, fps)
        if cause is not None:
            when = max(f.timestamp for f in new)
            return EpochResult(EpochVerdict.DUE, when, cause, retired)
        if self.kind is CitadelScheme.TDP_DDS:
            spared, exhausted = self._spare(st, live, fps)
            retired = retired | spared
            if exhausted and self.exhaustion_is_due:
                return EpochResult(EpochVerdict.DUE, None, "spares-exhausted", retired)
        return EpochResult(retired=retired)

    def _uncorrectable(self, faults: list[FaultRecord], fps: list[Footprint]) -> str | None:
        k = self.kind
        if k in (CitadelScheme.TDP, CitadelScheme.TDP_DDS):
            left = peel_3dp(fps)
            return f"3dp-{faults[left[0]].granularity.value}" if left else None
        if k is CitadelScheme.RAID5:
            # One parity line per (die, row, col) across the die's banks.
            left = _raid5_left(fps)
            return f"raid5-{faults[left[0]].granularity.value}" if left else None
        if k is CitadelScheme.SAME_BANK_NONE:
            for f, fp in zip(faults, fps):
                if bin(fp.bits).count("1") > 1:
                    return f"same-bank-{f.granularity.value}"
            return _overlap_same_line(faults, fps, limit=1, prefix="same-bank")
        if k is CitadelScheme.SIX_EC_SEVEN_ED:
            for f, fp in zip(faults, fps):
                if bin(fp.bits).count("1") > 6 and f.granularity not in _TSV:
                    return f"6ec7ed-{f.granularity.value}"
            return _overlap_same_line(faults, fps, limit=6, prefix="6ec7ed")
        # Striped symbol code: one symbol per die, corrects any single die.
        for i in range(len(fps)):
            for j in range(i + 1, len(fps)):
                a, b = fps[i], fps[j]
                if set(a.devices) == set(b.devices) and len(a.devices) == 1:
                    continue
                if a.intersect_address(b) is not None:
                    latest = max(faults[i], faults[j], key=lambda f: f.sort_key())
                    return f"stripe-{latest.granularity.value}"
        return None

    def _spare(self, st: _StackState, faults: list[FaultRecord], fps: list[Footprint]) -> tuple[frozenset[int], bool]:
        census: dict[tuple[int, int], set[int] | int] = {}
        touches: dict[int, list[tuple[int, int]]] = {}
        for f, fp in zip(faults, fps):
            if f.transient:
                continue
            keys = [(d, b) for d in fp.devices for b in fp.banks]
            touches[f.index] = keys
            nrows = len(fp.rows)
            for key in keys:
                cur = census.get(key, set())
                if nrows > ROWS_PER_BANK_SPARE or isinstance(cur, int):
                    census[key] = ROWS_PER_BANK_SPARE + 1
                else:
                    census[key] = cur | set(fp.rows)
        res = dds_apply(st.sparing, census)
        spared_banks = set(st.sparing.brt)
        spared_rows = st.sparing.rrt
        out = set()
        for f, fp in zip(faults, fps):
            keys = touches.get(f.index)
            if not keys:
                continue
            ok = True
            for key in keys:
                if key in spared_banks:
                    continue
                rows = spared_rows.get(key, set())
                if len(fp.rows) <= ROWS_PER_BANK_SPARE and set(fp.rows) <= rows:
                    continue
                ok = False
                break
            if ok:
                out.add(f.index)
        return frozenset(out), res.exhausted


def _raid5_left(fps: Sequence[Footprint]) -> list[int]:
    """Single parity per (die, row, col) stripe across the die's banks."""
    left = []
    for i, f in enumerate(fps):
        if len(f.banks) > 1:
            left.append(i)
            continue
        for j, g in enumerate(fps):
            if i == j or not set(f.devices) & set(g.devices):
                continue
            if f.banks.intersect(g.banks) is not None and len(g.banks) == 1:
                continue  # same bank: same stripe member
            if f.rows.intersect(g.rows) is not None and f.cols.intersect(g.cols) is not None:
                left.append(i)
                break
    return left


def _overlap_same_line(faults, fps, limit: int, prefix: str) -> str | None:
    for i, f in enumerate(fps):
        bits = f.bits
        for j, g in enumerate(fps):
            if i != j and f.intersect(g) is not None:
                bits |= g.bits
        if bin(bits).count("1") > limit:
            return f"{prefix}-{faults[i].granularity.value}"
    return None


def citadel_config(scheme: str | CitadelScheme, stack: StackGeometry = HBM_STACK,
                   tsv_fit: float = 0.0, swap: SwapMode = SwapMode.FULLY_ASSOC, **kw) -> TrialConfig:
    s = CitadelScheme(scheme)
    kw.setdefault("fit_table", STACKED_8GB)
    params = dict(kw.pop("params", ()))
    params.update({"org": stack.organization.value, "swap": swap.value})
    return TrialConfig(
        scheme=s.value,
        geometry=stack.geometry(),
        tsv_fit=tsv_fit_table(tsv_fit, stack) if tsv_fit > 0 else None,
        params=tuple(sorted(params.items())),
        **kw,
    )


def citadel_evaluate(
    fault_set: Sequence[FaultRecord],
    scheme: str | CitadelScheme,
    stack: StackGeometry = HBM_STACK,
    swap: SwapMode = SwapMode.FULLY_ASSOC,
    scrub_interval_hours: float = 12.0,
) -> TrialOutcome:
    s = CitadelScheme(scheme)
    return evaluate(list(fault_set), CitadelRules(s.value, s, stack, swap), scrub_interval_hours)


def _factory(s: CitadelScheme):
    def make(cfg: TrialConfig) -> CitadelRules:
        stack = STACKS[cfg.param("org", "hbm")]
        return CitadelRules(s.value, s, stack, SwapMode(cfg.param("swap", "assoc")),
                            bool(cfg.param("exhaustion_is_due", False)))

    return make


for _s in CitadelScheme:
    register(_s.value, _factory(_s))
