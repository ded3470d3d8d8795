"""Day-by-day replay of a signature schedule under tuned sampling rates.

Each simulated day generates the active signatures' observations, thins them
with the installed rates (an observation is caught iff at least one of its
flagging signatures samples it), and feeds the caught ones back into a
weighted history.  Every ``update_period`` days the history is turned into
batches, the batches are selected under FP + beta * FN, and rates are
inferred from the selection.
"""

from __future__ import annotations

import math
import os
import time
import zlib
from collections import defaultdict, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .inference import (
    InferenceConfig,
    InferenceError,
    apply_min_rate,
    build_factor_graph,
    infer_rates,
)
from .metrics import CONVENTIONAL, NORMALIZATIONS
from .model import ClassifierSet, Classifier, MinRatePolicy, SamplingVector, WeightPolicy
from .selection import (
    Batch,
    Budget,
    SelectionProblem,
    batch_order,
    decisions_to_rates_no_overlap,
    select_batches,
)
from .traces import (
    OverlapDistribution,
    SignatureLifecycle,
    TraceParams,
    assign_overlap,
    generate_signature_traces,
    substream,
)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    theta: float = 0.1
    beta: float = 1.0
    overlap: bool = True
    update_period: int = 3
    weight_policy: WeightPolicy = field(
        default_factory=lambda: WeightPolicy("exponential", w0=1.0, delta=0.9)
    )
    min_rate_policy: MinRatePolicy = field(default_factory=MinRatePolicy)
    normalization: str = CONVENTIONAL
    seed: int = 0
    days: int | None = None
    overlap_distribution: OverlapDistribution = field(default_factory=OverlapDistribution)
    trace_params: TraceParams = field(default_factory=TraceParams)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    replicate: str = "mass"
    timing: bool = True
    keep_updates: bool = False

    def __post_init__(self):
        if self.replicate not in ("none", "mass"):
            raise SimulationError(f"unknown replication mode {self.replicate!r}")
        if self.update_period < 1:
            raise SimulationError("update_period must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise SimulationError("theta must lie in [0, 1]")
        if not self.beta >= 0:
            raise SimulationError("beta must be >= 0")
        if self.normalization not in NORMALIZATIONS:
            raise SimulationError(f"unknown normalization {self.normalization!r}")
        if self.days is not None and self.days < 0:
            raise SimulationError("days must be >= 0")

    @property
    def cell(self) -> tuple[float, float, bool]:
        return (self.theta, self.beta, self.overlap)

    @property
    def cell_entropy(self) -> int:
        return zlib.crc32(f"{self.theta!r}|{self.beta!r}|{int(self.overlap)}".encode())


@dataclass(frozen=True)
class DayRow:
    day: int
    active_signatures: int
    tp_generated: int
    fp_generated: int
    tp_caught: int
    fp_raised: int
    update_performed: bool = False
    select_ms: float | None = None
    infer_ms: float | None = None
    fallback_used: bool = False


@dataclass(frozen=True)
class UpdateRecord:
    day: int
    signatures: tuple[int, ...]
    batches: tuple[Batch, ...]
    pre_min_rates: tuple[float, ...]
    installed_rates: tuple[float, ...]
    method: str
    inferred: bool
    fallback: bool
    select_ms: float
    infer_ms: float


@dataclass
class SimReport:
    config: SimConfig
    rows: list[DayRow] = field(default_factory=list)
    updates: list[UpdateRecord] = field(default_factory=list)
    select_ms: list[float] = field(default_factory=list)
    infer_ms: list[float] = field(default_factory=list)
    fallback_count: int = 0

    @property
    def tp_total(self) -> int:
        return sum(r.tp_generated for r in self.rows)

    @property
    def fp_total(self) -> int:
        return sum(r.fp_generated for r in self.rows)

    @property
    def tp_caught(self) -> int:
        return sum(r.tp_caught for r in self.rows)

    @property
    def fp_raised(self) -> int:
        return sum(r.fp_raised for r in self.rows)

    @property
    def solve_ms(self) -> list[float]:
        return [a + b for a, b in zip(self.select_ms, self.infer_ms)]


# ---------------------------------------------------------------------------
# weighted history of caught observations


class History:
    """Caught observations aggregated by flag set (global signature indices).

    Holds exactly the per-key weighted masses that :func:`apply_weight_policy`
    followed by :func:`partition_batches` would produce on the equivalent
    per-sample dataset, without storing samples.
    """

    def __init__(self, policy: WeightPolicy):
        self.policy = policy
        self.mass: dict[frozenset, list[float]] = defaultdict(lambda: [0.0, 0.0])
        self.by_day: deque = deque()  # (day, {key: [tp, fp]}) for drop_old

    def add(self, day: int, key: frozenset, tp: float, fp: float) -> None:
        w = self.policy.initial_weight
        if self.policy.kind == "drop_old":
            if not self.by_day or self.by_day[-1][0] != day:
                self.by_day.append((day, defaultdict(lambda: [0.0, 0.0])))
            bucket = self.by_day[-1][1][key]
        else:
            bucket = self.mass[key]
        bucket[0] += w * tp
        bucket[1] += w * fp

    def apply_policy(self, day: int) -> None:
        kind = self.policy.kind
        if kind == "exponential":
            d = self.policy.delta
            for m in self.mass.values():
                m[0] *= d
                m[1] *= d
        elif kind == "drop_old":
            while self.by_day and day - self.by_day[0][0] > self.policy.max_age_days:
                self.by_day.popleft()

    def forget(self, alive: set[int]) -> None:
        """Discard keys none of whose signatures can ever be active again."""
        for key in [k for k in self.mass if not (k & alive)]:
            del self.mass[key]

    def raw(self) -> dict[frozenset, list[float]]:
        if self.policy.kind != "drop_old":
            return self.mass
        out: dict[frozenset, list[float]] = defaultdict(lambda: [0.0, 0.0])
        for _, bucket in self.by_day:
            for key, (tp, fp) in bucket.items():
                m = out[key]
                m[0] += tp
                m[1] += fp
        return out

    def batches(
        self, active: Sequence[int], rates: dict[int, float]
    ) -> tuple[list[Batch], float, float]:
        """Batches over positions in ``active``; masses of keys that lost every
        signature are returned as unflagged (tp, fp)."""
        pos = {g: i for i, g in enumerate(active)}
        raw = self.raw()
        weights = self._inverse_rate_weights(raw, rates) if self.policy.kind == "inverse_rate" else None
        merged: dict[tuple[int, ...], list[float]] = defaultdict(lambda: [0.0, 0.0])
        un_tp = un_fp = 0.0
        for key, (tp, fp) in raw.items():
            w = 1.0 if weights is None else weights[key]
            local = tuple(sorted(pos[g] for g in key if g in pos))
            if not local:
                un_tp += w * tp
                un_fp += w * fp
                continue
            m = merged[local]
            m[0] += w * tp
            m[1] += w * fp
        batches = [
            Batch(frozenset(k), m[0], m[1])
            for k, m in sorted(merged.items(), key=lambda kv: batch_order(kv[0]))
            if m[0] + m[1] > 0
        ]
        return batches, un_tp, un_fp

    @staticmethod
    def _inverse_rate_weights(raw, rates: dict[int, float]) -> dict[frozenset, float]:
        means = {}
        for key in raw:
            r = [rates.get(g, 1.0) for g in key]
            means[key] = 0.0 if min(r) == 0.0 else sum(r) / len(r)
        positive = [m for m in means.values() if m > 0]
        m_min = min(positive) if positive else 1.0
        return {k: 1.0 if m == 0.0 else min(1.0, m_min / m) for k, m in means.items()}


# ---------------------------------------------------------------------------
# one re-optimisation


@dataclass(frozen=True)
class RateUpdate:
    result_batches: tuple[Batch, ...]
    pre_min_rates: SamplingVector
    rates: SamplingVector
    method: str
    inferred: bool
    select_s: float
    infer_s: float


def compute_rates(
    batches: Sequence[Batch],
    classifiers: ClassifierSet,
    beta: float,
    min_rate_policy: MinRatePolicy = MinRatePolicy(),
    inference: InferenceConfig = InferenceConfig(),
    normalization: str = CONVENTIONAL,
    unflagged: tuple[float, float] = (0.0, 0.0),
    replicate: str = "none",
) -> RateUpdate:
    """Select batches under FP + beta * FN, then turn decisions into rates.

    Without classifier overlap the decisions are the rates.  Otherwise the
    rates are marginals of the OR-factor graph; classifiers that appear in no
    batch keep full sampling.  Raises :class:`InferenceError` on failure.
    """
    n = len(classifiers)
    problem = SelectionProblem(
        tuple(batches),
        Budget(beta),
        normalization=normalization,
        unflagged_tp=unflagged[0],
        unflagged_fp=unflagged[1],
    )
    t0 = time.perf_counter()
    selection = select_batches(problem)
    select_s = time.perf_counter() - t0

    infer_s = 0.0
    if all(len(b.key) == 1 for b in selection.batches):
        pre = decisions_to_rates_no_overlap(selection.batches, n)
        inferred = False
    else:
        graph = build_factor_graph(selection.batches, n, replicate)
        t1 = time.perf_counter()
        result = infer_rates(graph, inference)
        infer_s = time.perf_counter() - t1
        marg = result.marginals.copy()
        marg[graph.degree() == 0] = 1.0
        pre = SamplingVector(marg)
        inferred = True
    rates = apply_min_rate(pre, min_rate_policy, classifiers)
    return RateUpdate(selection.batches, pre, rates, selection.method, inferred, select_s, infer_s)


# ---------------------------------------------------------------------------
# driver


def _validate_schedule(schedule: Sequence[SignatureLifecycle]) -> None:
    ids = [lc.signature_id for lc in schedule]
    if len(set(ids)) != len(ids):
        raise SimulationError("duplicate signature ids in schedule")


def run_simulation(schedule: Sequence[SignatureLifecycle], config: SimConfig = SimConfig()) -> SimReport:
    schedule = list(schedule)
    _validate_schedule(schedule)
    report = SimReport(config)
    if not schedule:
        return report
    horizon = config.days if config.days is not None else max(lc.removal_day for lc in schedule)
    traces = [
        generate_signature_traces(lc, config.theta, config.seed, config.trace_params)
        for lc in schedule
    ]
    classifier_meta = [Classifier(lc.signature_id, 1.0, lc.severity) for lc in schedule]
    overlap = config.overlap_distribution if config.overlap else OverlapDistribution.none()
    first_day = max(0, min(lc.intro_day for lc in schedule))

    starts = defaultdict(list)
    for g, lc in enumerate(schedule):
        starts[lc.intro_day].append(g)
    active: list[int] = []
    rates: dict[int, float] = {}
    history = History(config.weight_policy)

    for day in range(first_day, horizon):
        active = [g for g in active if schedule[g].removal_day > day]
        if day in starts:
            active = sorted(active + starts[day])
            for g in starts[day]:
                rates[g] = 1.0
        for g in list(rates):
            if schedule[g].removal_day <= day:
                del rates[g]

        update = (day - first_day) % config.update_period == 0 and day > first_day and bool(active)
        select_ms = infer_ms = None
        fallback = False
        if update:
            history.apply_policy(day)
            alive = {g for g in range(len(schedule)) if schedule[g].removal_day > day}
            history.forget(alive)
            batches, un_tp, un_fp = history.batches(active, rates)
            classifiers = ClassifierSet(tuple(classifier_meta[g] for g in active))
            try:
                upd = compute_rates(
                    batches,
                    classifiers,
                    config.beta,
                    config.min_rate_policy,
                    config.inference,
                    config.normalization,
                    (un_tp, un_fp),
                    config.replicate,
                )
                for g, r in zip(active, upd.rates):
                    rates[g] = r
                sel_s, inf_s = upd.select_s, upd.infer_s
            except InferenceError:
                # keep the previous rates; new signatures already sit at 1.0
                fallback = True
                report.fallback_count += 1
                upd = None
                sel_s = inf_s = math.nan
            if config.timing and upd is not None:
                select_ms, infer_ms = 1e3 * sel_s, 1e3 * inf_s
                report.select_ms.append(select_ms)
                report.infer_ms.append(infer_ms)
            if config.keep_updates:
                report.updates.append(UpdateRecord(
                    day,
                    tuple(active),
                    upd.result_batches if upd else tuple(batches),
                    tuple(upd.pre_min_rates) if upd else (),
                    tuple(rates[g] for g in active),
                    upd.method if upd else "fallback",
                    upd.inferred if upd else False,
                    fallback,
                    1e3 * sel_s,
                    1e3 * inf_s,
                ))

        tp_gen, fp_gen, tp_caught, fp_raised = _simulate_day(
            day, active, traces, rates, overlap, history, config
        )
        report.rows.append(DayRow(
            day, len(active), tp_gen, fp_gen, tp_caught, fp_raised,
            update, select_ms, infer_ms, fallback,
        ))
    return report


def _simulate_day(day, active, traces, rates, overlap, history, config):
    if not active:
        return 0, 0, 0, 0
    n_tp = np.array([traces[g].tp.at(day) for g in active], dtype=np.int64)
    n_fp = np.array([traces[g].fp.at(day) for g in active], dtype=np.int64)
    n_obs = int(n_tp.sum() + n_fp.sum())
    if n_obs == 0:
        return 0, 0, 0, 0
    positions = np.arange(len(active))
    origins = np.concatenate((np.repeat(positions, n_tp), np.repeat(positions, n_fp)))
    malicious = np.concatenate((np.ones(n_tp.sum(), bool), np.zeros(n_fp.sum(), bool)))

    rng = substream(config.seed, config.cell_entropy, day)
    flags, width = assign_overlap(origins, len(active), overlap, rng)
    rate_vec = np.array([rates[g] for g in active])
    valid = np.arange(flags.shape[1])[None, :] < width[:, None]
    draws = rng.random(flags.shape)
    sampled = valid & (draws < rate_vec[np.where(valid, flags, 0)])
    caught = sampled.any(axis=1)

    tp_caught = int(np.count_nonzero(caught & malicious))
    fp_raised = int(np.count_nonzero(caught & ~malicious))

    single = caught & (width == 1)
    tp_single = np.bincount(origins[single & malicious], minlength=len(active))
    fp_single = np.bincount(origins[single & ~malicious], minlength=len(active))
    for p in np.nonzero(tp_single + fp_single)[0]:
        history.add(day, frozenset((active[p],)), float(tp_single[p]), float(fp_single[p]))
    multi = np.nonzero(caught & (width > 1))[0]
    if len(multi):
        grouped: dict[frozenset, list[int]] = defaultdict(lambda: [0, 0])
        for r in multi:
            key = frozenset(active[p] for p in flags[r, : width[r]])
            grouped[key][0 if malicious[r] else 1] += 1
        for key in sorted(grouped, key=batch_order):
            tp, fp = grouped[key]
            history.add(day, key, float(tp), float(fp))
    return int(n_tp.sum()), int(n_fp.sum()), tp_caught, fp_raised


# ---------------------------------------------------------------------------
# sweeps and summaries


@dataclass(frozen=True)
class Grid:
    thetas: tuple[float, ...]
    betas: tuple[float, ...]
    overlaps: tuple[bool, ...] = (True, False)

    def __post_init__(self):
        for name in ("thetas", "betas", "overlaps"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise SimulationError(f"grid {name} must be non-empty")

    def cells(self) -> list[tuple[float, float, bool]]:
        return [(o, t, b) for o in self.overlaps for t in self.thetas for b in self.betas]


def _run_cell(args):
    schedule, config = args
    return run_simulation(schedule, config)


def sweep(
    schedule: Sequence[SignatureLifecycle],
    base: SimConfig,
    grid: Grid,
    workers: int = 1,
) -> dict[tuple[float, float, bool], SimReport]:
    """One independent simulation per (theta, beta, overlap) cell, keyed by cell."""
    configs = [replace(base, theta=t, beta=b, overlap=o) for o, t, b in grid.cells()]
    jobs = [(list(schedule), c) for c in configs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, jobs))
    else:
        reports = [_run_cell(j) for j in jobs]
    return {c.cell: r for c, r in zip(configs, reports)}


@dataclass(frozen=True)
class Summary:
    theta: float
    beta: float
    overlap: bool
    seed: int
    tp_total: int
    fp_total: int
    tp_caught: int
    fp_raised: int
    tp_removed_pct: float | None
    fp_removed_pct: float | None
    tp_remaining_pct: float | None
    fp_remaining_pct: float | None
    precision: float | None
    recall: float | None
    solve_median_ms: float | None
    solve_p80_ms: float | None
    solve_p98_ms: float | None
    solve_max_ms: float | None
    fallback_count: int
    updates: int

    @property
    def tp_removed(self) -> int:
        return self.tp_total - self.tp_caught

    @property
    def fp_removed(self) -> int:
        return self.fp_total - self.fp_raised


def _pct(part, whole):
    return None if whole == 0 else 100.0 * part / whole


def summarize(report: SimReport) -> Summary:
    c = report.config
    tp_t, fp_t = report.tp_total, report.fp_total
    tp_c, fp_r = report.tp_caught, report.fp_raised
    solve = np.array(report.solve_ms, dtype=float)

    def q(p):
        return None if solve.size == 0 else float(np.percentile(solve, p))

    return Summary(
        theta=c.theta,
        beta=c.beta,
        overlap=c.overlap,
        seed=c.seed,
        tp_total=tp_t,
        fp_total=fp_t,
        tp_caught=tp_c,
        fp_raised=fp_r,
        tp_removed_pct=_pct(tp_t - tp_c, tp_t),
        fp_removed_pct=_pct(fp_t - fp_r, fp_t),
        tp_remaining_pct=_pct(tp_c, tp_t),
        fp_remaining_pct=_pct(fp_r, fp_t),
        precision=None if tp_c + fp_r == 0 else tp_c / (tp_c + fp_r),
        recall=None if tp_t == 0 else tp_c / tp_t,
        solve_median_ms=q(50),
        solve_p80_ms=q(80),
        solve_p98_ms=q(98),
        solve_max_ms=None if solve.size == 0 else float(solve.max()),
        fallback_count=report.fallback_count,
        updates=sum(r.update_performed for r in report.rows),
    )
