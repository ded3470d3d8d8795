"""Synthetic observation traces for signatures with a known lifecycle.

True positives decay along a power law from roughly ``y0`` per day, jumping
up by a factor ``rho`` at each signature update.  False positives are a
fixed fraction ``theta`` of the true-positive count, refreshed only when the
signature is introduced or updated.

Random streams are numpy PCG64 generators seeded from ``SeedSequence``
entropy lists, so a signature's stream depends only on (seed, signature id).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_Y0 = 500.0
DEFAULT_FLOOR = 1.0
DEFAULT_RHO = 1.5
DEFAULT_JITTER = 0.1
DEFAULT_LEAD = 3
DEFAULT_LAG = 3
MIN_LIFESPAN_DAYS = 7


class TraceError(ValueError):
    pass


def stable_id(text: str) -> int:
    """32-bit identifier for a signature id that is stable across processes."""
    return zlib.crc32(text.encode("utf-8"))


def substream(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(e) for e in entropy])))


@dataclass(frozen=True)
class SignatureLifecycle:
    signature_id: str
    intro_day: int
    removal_day: int
    severity: int = 1
    update_days: tuple[int, ...] = ()
    lead: int = DEFAULT_LEAD
    lag: int = DEFAULT_LAG

    def __post_init__(self):
        object.__setattr__(self, "update_days", tuple(sorted(self.update_days)))
        if not self.intro_day < self.removal_day:
            raise TraceError(f"{self.signature_id}: intro_day must precede removal_day")
        if len(set(self.update_days)) != len(self.update_days):
            raise TraceError(f"{self.signature_id}: duplicate update days")
        for u in self.update_days:
            if not self.intro_day < u < self.removal_day:
                raise TraceError(
                    f"{self.signature_id}: update day {u} outside ({self.intro_day}, {self.removal_day})"
                )
        if self.severity < 0:
            raise TraceError(f"{self.signature_id}: severity must be >= 0")

    @property
    def lifespan(self) -> int:
        return self.removal_day - self.intro_day

    @property
    def malware_appear_day(self) -> int:
        return self.intro_day - self.lead

    @property
    def malware_disappear_day(self) -> int:
        return self.removal_day - self.lag

    def active_on(self, day: int) -> bool:
        return self.intro_day <= day < self.removal_day


@dataclass(frozen=True)
class DecayCurve:
    y0: float
    gamma: float
    floor: float

    def __call__(self, t):
        return self.y0 * (np.asarray(t, dtype=float) + 1.0) ** (-self.gamma)

    def age_for(self, level: float) -> float:
        """Inverse of the curve: the age at which it equals ``level``."""
        return (self.y0 / level) ** (1.0 / self.gamma) - 1.0


def calibrate_decay(y0: float, lifespan_days: int, floor: float = DEFAULT_FLOOR) -> DecayCurve:
    """Exponent so that the curve reaches ``floor`` on the last day of the lifespan."""
    if not (y0 > floor > 0):
        raise TraceError(f"need y0 > floor > 0, got y0={y0}, floor={floor}")
    if lifespan_days < 2:
        raise TraceError(f"lifespan must be at least 2 days, got {lifespan_days}")
    gamma = math.log(y0 / floor) / math.log(lifespan_days)
    return DecayCurve(float(y0), gamma, float(floor))


@dataclass(frozen=True)
class DailyTrace:
    """Counts for the absolute days ``first_day .. first_day + len(counts) - 1``."""

    first_day: int
    counts: np.ndarray

    def at(self, day: int) -> int:
        i = day - self.first_day
        if 0 <= i < len(self.counts):
            return int(self.counts[i])
        return 0

    @property
    def last_day(self) -> int:
        return self.first_day + len(self.counts) - 1

    def days(self) -> range:
        return range(self.first_day, self.first_day + len(self.counts))


def generate_tp_trace(
    lifecycle: SignatureLifecycle,
    curve: DecayCurve,
    rho: float = DEFAULT_RHO,
    rng: np.random.Generator | None = None,
    jitter: float = DEFAULT_JITTER,
) -> DailyTrace:
    """Daily true-positive counts from malware appearance to signature removal.

    On an update day the level becomes ``min(y0, rho * previous level)`` and
    the curve continues from the age where it takes that value.  Counts are
    ``round(level * U(1 - jitter, 1 + jitter))``; zero once the malware has
    disappeared.
    """
    first = lifecycle.malware_appear_day
    last = lifecycle.removal_day  # inclusive, always zero past disappearance
    n_days = last - first + 1
    end = lifecycle.malware_disappear_day
    updates = set(lifecycle.update_days)
    if jitter > 0 and rng is None:
        raise TraceError("jittered traces need a random generator")

    levels = np.zeros(n_days)
    age = 0.0
    previous = None
    for i, day in enumerate(range(first, last + 1)):
        if day >= end:
            break
        if previous is not None:
            age += 1.0
        level = float(curve(age))
        if day in updates and previous is not None and rho != 1.0:
            level = min(curve.y0, rho * previous)
            age = max(0.0, curve.age_for(level))
        levels[i] = level
        previous = level
    if jitter > 0:
        levels = levels * rng.uniform(1.0 - jitter, 1.0 + jitter, size=n_days)
    return DailyTrace(first, np.rint(levels).astype(np.int64))


def generate_fp_trace(tp_trace: DailyTrace, lifecycle: SignatureLifecycle, theta: float) -> DailyTrace:
    """Constant ``round(theta * TP)`` set at introduction and at every update."""
    if not 0.0 <= theta <= 1.0:
        raise TraceError("theta must lie in [0, 1]")
    first, last = lifecycle.intro_day, lifecycle.removal_day - 1
    counts = np.zeros(last - first + 1, dtype=np.int64)
    refresh = {lifecycle.intro_day, *lifecycle.update_days}
    level = 0
    for i, day in enumerate(range(first, last + 1)):
        if day in refresh:
            level = int(round(theta * tp_trace.at(day)))
        counts[i] = level
    return DailyTrace(first, counts)


@dataclass(frozen=True)
class OverlapDistribution:
    """Probability that an observation is also flagged by k other signatures."""

    table: Mapping[int, float] = field(
        default_factory=lambda: {0: 0.85, 1: 0.10, 2: 0.04, 3: 0.01}
    )

    def __post_init__(self):
        table = {int(k): float(p) for k, p in dict(self.table).items()}
        object.__setattr__(self, "table", table)
        if 0 not in table:
            raise TraceError("overlap distribution must include k = 0")
        if any(k < 0 for k in table) or any(p < 0 for p in table.values()):
            raise TraceError("overlap counts and probabilities must be >= 0")
        if abs(sum(table.values()) - 1.0) > 1e-9:
            raise TraceError("overlap probabilities must sum to 1")

    @classmethod
    def none(cls) -> OverlapDistribution:
        return cls({0: 1.0})

    @property
    def max_k(self) -> int:
        return max(k for k, p in self.table.items() if p > 0)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        ks = np.array(sorted(self.table), dtype=np.int64)
        ps = np.array([self.table[k] for k in ks])
        if len(ks) == 1:
            return np.full(size, ks[0], dtype=np.int64)
        return rng.choice(ks, size=size, p=ps / ps.sum())


def assign_overlap(
    origins: np.ndarray,
    n_active: int,
    distribution: OverlapDistribution,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Extra flagging signatures for each observation.

    ``origins`` holds each observation's own signature as a position in the
    active list ``0 .. n_active - 1``.  Returns ``(flags, width)``: ``flags``
    is an (n, 1 + max_k) position matrix whose first column is the origin and
    whose row ``r`` is valid up to ``width[r]``; the extras are distinct,
    drawn without replacement from the other active signatures, and their
    number is truncated to ``n_active - 1``.
    """
    origins = np.asarray(origins, dtype=np.int64)
    if n_active < 1:
        raise TraceError("overlap needs at least one active signature")
    n = len(origins)
    k = np.minimum(distribution.sample(n, rng), n_active - 1)
    kmax = int(k.max()) if n else 0
    flags = np.full((n, 1 + kmax), -1, dtype=np.int64)
    flags[:, 0] = origins
    rows = np.nonzero(k > 0)[0]
    if len(rows):
        keys = rng.random((len(rows), n_active))
        keys[np.arange(len(rows)), origins[rows]] = np.inf
        picks = np.argsort(keys, axis=1, kind="stable")[:, :kmax]
        take = np.arange(kmax)[None, :] < k[rows, None]
        flags[rows, 1:] = np.where(take, picks, -1)
    return flags, 1 + k


def overlap_sets(flags: np.ndarray, width: np.ndarray) -> list[frozenset[int]]:
    return [frozenset(row[:w].tolist()) for row, w in zip(flags, width)]


@dataclass(frozen=True)
class FilterReport:
    kept: tuple[SignatureLifecycle, ...]
    dropped_short: int = 0
    dropped_window: int = 0


def filter_schedule(
    schedule: Iterable[SignatureLifecycle],
    window: tuple[int, int] | None = None,
    min_lifespan: int = MIN_LIFESPAN_DAYS,
) -> FilterReport:
    """Drop signatures outside ``window`` (inclusive days) or living < ``min_lifespan`` days."""
    kept = []
    short = outside = 0
    for lc in schedule:
        if window is not None and (lc.intro_day < window[0] or lc.removal_day > window[1]):
            outside += 1
        elif lc.lifespan < min_lifespan:
            short += 1
        else:
            kept.append(lc)
    return FilterReport(tuple(kept), short, outside)


@dataclass(frozen=True)
class TraceParams:
    y0: float = DEFAULT_Y0
    floor: float = DEFAULT_FLOOR
    rho: float = DEFAULT_RHO
    jitter: float = DEFAULT_JITTER


@dataclass(frozen=True)
class SignatureTraces:
    lifecycle: SignatureLifecycle
    curve: DecayCurve
    tp: DailyTrace
    fp: DailyTrace


def generate_signature_traces(
    lifecycle: SignatureLifecycle, theta: float, seed: int, params: TraceParams = TraceParams()
) -> SignatureTraces:
    curve = calibrate_decay(params.y0, max(2, lifecycle.lifespan), params.floor)
    rng = substream(seed, stable_id(lifecycle.signature_id))
    tp = generate_tp_trace(lifecycle, curve, params.rho, rng, params.jitter)
    fp = generate_fp_trace(tp, lifecycle, theta)
    return SignatureTraces(lifecycle, curve, tp, fp)
