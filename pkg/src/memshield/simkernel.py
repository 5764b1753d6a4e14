"""Monte-Carlo lifetime engine: trial streams, epoch loop and aggregation."""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .faultmodel import (
    SEVEN_YEARS_H,
    ConfigError,
    DDR3_X8,
    FaultRecord,
    ArrivalSampler,
    FitTable,
    Geometry,
)

_MASK64 = (1 << 64) - 1
CHUNK = 4096


class Verdict(enum.Enum):
    SURVIVED = "SURVIVED"
    DUE = "DUE"
    SDC = "SDC"


class EpochVerdict(enum.Enum):
    OK = "OK"
    DUE = "DUE"
    SDC = "SDC"


@dataclass(frozen=True)
class TrialOutcome:
    verdict: Verdict
    first_event_hours: float | None = None
    event_cause: str | None = None

    def __post_init__(self) -> None:
        if (self.verdict is Verdict.SURVIVED) != (self.first_event_hours is None):
            raise ValueError("SURVIVED iff no failure timestamp")


SURVIVED = TrialOutcome(Verdict.SURVIVED)


@dataclass(frozen=True)
class EpochResult:
    verdict: EpochVerdict = EpochVerdict.OK
    when: float | None = None
    cause: str | None = None
    # Faults the scheme has permanently neutralised (spared, remapped).
    retired: frozenset[int] = frozenset()


class Scheme(Protocol):
    name: str

    def new_state(self) -> Any: ...

    def epoch(
        self, state: Any, active: list[FaultRecord], new: list[FaultRecord], epoch: int
    ) -> EpochResult: ...


@dataclass(frozen=True)
class TrialConfig:
    scheme: str
    geometry: Geometry = DDR3_X8
    fit_table: FitTable = field(default_factory=FitTable)
    lifetime_hours: float = SEVEN_YEARS_H
    scrub_interval_hours: float = 12.0
    scaling_ber: float = 0.0
    tsv_fit: FitTable | None = None
    seed: int = 0
    params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.lifetime_hours <= 0:
            raise ConfigError("lifetime must be positive")
        if not 0 < self.scrub_interval_hours <= self.lifetime_hours:
            raise ConfigError("scrub interval must lie in (0, lifetime]")

    def param(self, key: str, default: Any = None) -> Any:
        return dict(self.params).get(key, default)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Counter-based stream keyed by (campaign seed, trial index)."""
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, trial_index & _MASK64]))


# Scheme registry ---------------------------------------------------------------

_FACTORIES: dict[str, Callable[[TrialConfig], Scheme]] = {}


def register(name: str, factory: Callable[[TrialConfig], Scheme]) -> None:
    _FACTORIES[name] = factory


def _load_builtin() -> None:
    # Importing registers the schemes; repeat imports are free.
    from . import citadel, xed  # noqa: F401


def scheme_names() -> list[str]:
    _load_builtin()
    return sorted(_FACTORIES)


def build_scheme(cfg: TrialConfig) -> Scheme:
    _load_builtin()
    try:
        factory = _FACTORIES[cfg.scheme]
    except KeyError:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}; known: {sorted(_FACTORIES)}") from None
    return factory(cfg)


# Epoch loop ----------------------------------------------------------------------


def classify_epoch(
    scheme: Scheme, state: Any, accumulated: list[FaultRecord], new: list[FaultRecord], epoch: int
) -> EpochResult:
    if not accumulated:
        return EpochResult()
    return scheme.epoch(state, accumulated, new, epoch)


def evaluate(
    faults: Sequence[FaultRecord], scheme: Scheme, scrub_interval_hours: float
) -> TrialOutcome:
    """Walk the epochs that receive arrivals; state only changes there.

    Permanent faults persist until a scheme retires them.  Transient faults
    are visible only in their arrival epoch: surviving the epoch means they
    were corrected, and the scrub at epoch end clears them.
    """
    if not faults:
        return SURVIVED
    ordered = sorted(faults, key=lambda f: f.sort_key())
    state = scheme.new_state()
    persistent: list[FaultRecord] = []
    i = 0
    while i < len(ordered):
        epoch = int(ordered[i].timestamp // scrub_interval_hours)
        new = []
        while i < len(ordered) and int(ordered[i].timestamp // scrub_interval_hours) == epoch:
            new.append(ordered[i])
            i += 1
        active = persistent + new
        res = classify_epoch(scheme, state, active, new, epoch)
        if res.verdict is not EpochVerdict.OK:
            when = res.when if res.when is not None else (epoch + 1) * scrub_interval_hours
            return TrialOutcome(Verdict[res.verdict.value], when, res.cause)
        persistent = [f for f in active if not f.transient and f.index not in res.retired]
    return SURVIVED


def make_sampler(cfg: TrialConfig) -> ArrivalSampler:
    return ArrivalSampler(cfg.fit_table, cfg.geometry, cfg.lifetime_hours, cfg.tsv_fit)


def sample_trial_faults(
    cfg: TrialConfig, trial_index: int, sampler: ArrivalSampler | None = None
) -> list[FaultRecord]:
    sampler = sampler or make_sampler(cfg)
    return sampler.sample(trial_rng(cfg.seed, trial_index))


def run_trial(
    cfg: TrialConfig,
    trial_index: int = 0,
    faults: Sequence[FaultRecord] | None = None,
    scheme: Scheme | None = None,
    sampler: ArrivalSampler | None = None,
) -> TrialOutcome:
    """One lifetime.  ``faults`` bypasses sampling (scripted scenarios)."""
    scheme = scheme or build_scheme(cfg)
    if faults is None:
        faults = sample_trial_faults(cfg, trial_index, sampler)
    return evaluate(list(faults), scheme, cfg.scrub_interval_hours)


# Aggregation ------------------------------------------------------------------------


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    phat = k / n
    denom = 1 + z * z / n
    centre = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    # Pin the endpoints at k = 0 and k = n, where rounding would shave them.
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class CampaignResult:
    scheme: str
    trials: int
    p_fail: float
    ci95: float
    due_rate: float
    sdc_rate: float
    mttf_hours: float | None
    seed: int
    failures: int = 0
    due: int = 0
    sdc: int = 0
    ci_low: float = 0.0
    ci_high: float = 0.0
    causes: tuple[tuple[str, int], ...] = ()

    def as_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme,
            "trials": self.trials,
            "p_fail": self.p_fail,
            "ci95": self.ci95,
            "due_rate": self.due_rate,
            "sdc_rate": self.sdc_rate,
            "mttf_hours": self.mttf_hours,
            "seed": self.seed,
        }


@dataclass
class _Tally:
    due: int = 0
    sdc: int = 0
    fail_time: float = 0.0
    causes: dict[str, int] = field(default_factory=dict)

    def add(self, o: TrialOutcome) -> None:
        if o.verdict is Verdict.SURVIVED:
            return
        if o.verdict is Verdict.DUE:
            self.due += 1
        else:
            self.sdc += 1
        self.fail_time += float(o.first_event_hours or 0.0)
        key = o.event_cause or "unknown"
        self.causes[key] = self.causes.get(key, 0) + 1

    def merge(self, other: "_Tally") -> None:
        self.due += other.due
        self.sdc += other.sdc
        self.fail_time += other.fail_time
        for k, v in other.causes.items():
            self.causes[k] = self.causes.get(k, 0) + v


def _run_chunk(args: tuple[TrialConfig, int, int]) -> _Tally:
    cfg, lo, hi = args
    scheme = build_scheme(cfg)
    sampler = make_sampler(cfg)
    tally = _Tally()
    for t in range(lo, hi):
        tally.add(run_trial(cfg, t, scheme=scheme, sampler=sampler))
    return tally


def default_parallelism() -> int:
    env = os.environ.get("MEMSHIELD_THREADS")
    cpus = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            raise ConfigError(f"MEMSHIELD_THREADS={env!r} is not an integer") from None
    return cpus


def run_campaign(cfg: TrialConfig, trials: int, parallelism: int | None = None) -> CampaignResult:
    """Aggregate ``trials`` lifetimes.  Chunks are fixed-size and merged in
    index order, so the result does not depend on ``parallelism``."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    workers = default_parallelism() if parallelism is None else max(1, parallelism)
    chunks = [(cfg, lo, min(trials, lo + CHUNK)) for lo in range(0, trials, CHUNK)]
    if workers == 1 or len(chunks) == 1:
        parts = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            parts = list(pool.map(_run_chunk, chunks))
    total = _Tally()
    for p in parts:
        total.merge(p)
    return summarize(cfg.scheme, trials, total, cfg.seed, cfg.lifetime_hours)


def summarize(scheme: str, trials: int, tally: _Tally, seed: int, lifetime_hours: float) -> CampaignResult:
    fails = tally.due + tally.sdc
    lo, hi = wilson_interval(fails, trials)
    if fails:
        # Exponential MLE: total exposure over failures.
        exposure = tally.fail_time + (trials - fails) * lifetime_hours
        mttf = exposure / fails
    else:
        mttf = None
    return CampaignResult(
        scheme=scheme,
        trials=trials,
        p_fail=fails / trials,
        ci95=(hi - lo) / 2,
        due_rate=tally.due / trials,
        sdc_rate=tally.sdc / trials,
        mttf_hours=mttf,
        seed=seed,
        failures=fails,
        due=tally.due,
        sdc=tally.sdc,
        ci_low=lo,
        ci_high=hi,
        causes=tuple(sorted(tally.causes.items())),
    )
