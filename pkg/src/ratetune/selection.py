"""Batch partitioning and 0/1 enable/disable selection.

Samples sharing one flagging-classifier set form a batch.  Selection picks a
boolean per batch: enabled batches contribute their TP mass to detections and
their FP mass to false alarms; disabled batches turn their TP mass into misses.

Every objective is minimised.  Linear objectives are stored as one
``(on, off)`` cost pair per batch plus a constant, and evaluated with
``math.fsum`` over the chosen terms so that two assignments with the same
exact value always compare equal.
"""

from __future__ import annotations

import math
from functools import cached_property
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .metrics import CONVENTIONAL, NORMALIZATIONS, PAPER_EXACT, DegenerateDenominator, f1_sr
from .model import ClassifierSet, CostModel, Goals, ObservationDataset, SamplingVector


class SelectionError(RuntimeError):
    pass


class InfeasibleConstraints(SelectionError):
    pass


class OverlapPresent(SelectionError):
    pass


@dataclass(frozen=True)
class Batch:
    key: frozenset[int]
    tp_mass: float
    fp_mass: float
    decision: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "key", frozenset(self.key))
        if not self.key:
            raise ValueError("a batch key needs at least one classifier")
        if self.tp_mass < 0 or self.fp_mass < 0:
            raise ValueError("batch masses must be >= 0")
        if not self.tp_mass + self.fp_mass > 0:
            raise ValueError("a batch needs positive total mass")

    @property
    def sorted_key(self) -> tuple[int, ...]:
        return tuple(sorted(self.key))


@dataclass(frozen=True)
class Partition:
    batches: tuple[Batch, ...]
    unflagged_tp: float = 0.0
    unflagged_fp: float = 0.0
    unflagged_count: int = 0


def batch_order(key) -> tuple:
    k = tuple(sorted(key))
    return (len(k), k)


def partition_dataset(dataset: ObservationDataset) -> Partition:
    tp = defaultdict(float)
    fp = defaultdict(float)
    keys = set()
    un_tp = un_fp = 0.0
    un_count = 0
    for s in dataset.samples:
        if not s.flags:
            un_count += 1
            if s.malicious:
                un_tp += s.weight
            else:
                un_fp += s.weight
            continue
        keys.add(s.flags)
        if s.malicious:
            tp[s.flags] += s.weight
        else:
            fp[s.flags] += s.weight
    batches = tuple(
        Batch(k, tp[k], fp[k])
        for k in sorted(keys, key=batch_order)
        if tp[k] + fp[k] > 0
    )
    return Partition(batches, un_tp, un_fp, un_count)


def partition_batches(dataset: ObservationDataset) -> list[Batch]:
    """One batch per distinct non-empty flag set; unflagged samples are left out.

    Batches whose members all carry zero weight are dropped.  Use
    :func:`partition_dataset` to also get the unflagged masses.
    """
    return list(partition_dataset(dataset).batches)


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class Budget:
    """Minimise FP + beta * FN in raw (weighted-count) mass."""

    beta: float

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class Expenses:
    """Minimise cost_fn * FN + cost_fp * FP over normalised rates."""

    cost_model: CostModel


@dataclass(frozen=True)
class F1SR:
    """Maximise 2 * TP * FP / (TP + FP) over normalised rates."""


@dataclass(frozen=True)
class Prioritized:
    """Lexicographic objectives, highest priority first.

    Each term is ``(metric, sense)`` with metric in tp/fp/tn/fn and sense
    ``"max"`` or ``"min"``.  Requirements such as "keep 90% of true
    positives" belong in the problem's :class:`Goals`.
    """

    terms: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        if not self.terms:
            raise ValueError("prioritized objective needs at least one term")
        for metric, sense in self.terms:
            if metric not in ("tp", "fp", "tn", "fn") or sense not in ("max", "min"):
                raise ValueError(f"bad prioritized term {(metric, sense)!r}")


@dataclass(frozen=True)
class SelectionProblem:
    batches: tuple[Batch, ...]
    objective: object = field(default_factory=lambda: Budget(1.0))
    constraints: Goals | None = None
    normalization: str = CONVENTIONAL
    unflagged_tp: float = 0.0
    unflagged_fp: float = 0.0
    classifiers: ClassifierSet | None = None
    batch_limit: int = 40

    def __post_init__(self):
        object.__setattr__(self, "batches", tuple(self.batches))
        keys = [b.key for b in self.batches]
        if len(set(keys)) != len(keys):
            raise ValueError("batch keys must be unique")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.constraints is not None and self.constraints.cost_max is not None:
            if self.classifiers is None:
                raise ValueError("a cost constraint needs the classifier set")

    @classmethod
    def from_partition(cls, partition: Partition, **kwargs) -> SelectionProblem:
        return cls(
            batches=partition.batches,
            unflagged_tp=partition.unflagged_tp,
            unflagged_fp=partition.unflagged_fp,
            **kwargs,
        )

    @cached_property
    def total_tp(self) -> float:
        return math.fsum([b.tp_mass for b in self.batches] + [self.unflagged_tp])

    @cached_property
    def total_fp(self) -> float:
        return math.fsum([b.fp_mass for b in self.batches] + [self.unflagged_fp])

    @property
    def has_constraints(self) -> bool:
        return self.constraints is not None and not self.constraints.empty


@dataclass(frozen=True)
class SelectionResult:
    decisions: tuple[bool, ...]
    value: float
    method: str
    batches: tuple[Batch, ...]

    @property
    def heuristic(self) -> bool:
        return self.method == "heuristic"

    @property
    def enabled(self) -> list[Batch]:
        return [b for b in self.batches if b.decision]


# ---------------------------------------------------------------------------
# rate evaluation shared by goals, expenses and f1


def _denominators(problem: SelectionProblem) -> tuple[float, float, float, float]:
    """(TP den, FP den, TN den, FN den) for the problem's normalization."""
    pos, neg = problem.total_tp, problem.total_fp
    if problem.normalization == PAPER_EXACT:
        return pos, pos, neg, neg
    return pos, neg, neg, pos


def _rates_from_mass(problem, tp_on: float, fp_on: float) -> dict[str, float | None]:
    tp_den, fp_den, tn_den, fn_den = _denominators(problem)
    pos, neg = problem.total_tp, problem.total_fp

    def r(num, den):
        return None if den == 0 else num / den

    return {
        "tp": r(tp_on, tp_den),
        "fp": r(fp_on, fp_den),
        "tn": r(neg - fp_on, tn_den),
        "fn": r(pos - tp_on, fn_den),
    }


def _linear_terms(problem: SelectionProblem, objective) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-batch (on, off) costs and constant for a linear objective."""
    tp = np.array([b.tp_mass for b in problem.batches], dtype=float)
    fp = np.array([b.fp_mass for b in problem.batches], dtype=float)
    zeros = np.zeros_like(tp)
    if isinstance(objective, Budget):
        return fp, objective.beta * tp, objective.beta * problem.unflagged_tp
    tp_den, fp_den, tn_den, fn_den = _denominators(problem)
    if isinstance(objective, Expenses):
        cm = objective.cost_model
        if fp_den == 0 and cm.cost_fp and fp.any():
            raise DegenerateDenominator("FP: normalising mass is zero")
        if fn_den == 0 and cm.cost_fn and problem.total_tp > 0:
            raise DegenerateDenominator("FN: normalising mass is zero")
        on = cm.cost_fp * fp / fp_den if fp_den else zeros
        off = cm.cost_fn * tp / fn_den if fn_den else zeros
        const = cm.cost_fn * problem.unflagged_tp / fn_den if fn_den else 0.0
        return on, off, const
    if isinstance(objective, _Single):
        metric, sense = objective.metric, objective.sense
        sign = -1.0 if sense == "max" else 1.0
        den = {"tp": tp_den, "fp": fp_den, "tn": tn_den, "fn": fn_den}[metric]
        if den == 0:
            raise DegenerateDenominator(f"{metric.upper()}: normalising mass is zero")
        if metric == "tp":
            return sign * tp / den, zeros, 0.0
        if metric == "fp":
            return sign * fp / den, zeros, 0.0
        if metric == "tn":
            return zeros, sign * fp / den, sign * problem.unflagged_fp / den
        return zeros, sign * tp / den, sign * problem.unflagged_tp / den
    raise TypeError(f"objective {objective!r} is not linear")


@dataclass(frozen=True)
class _Single:
    metric: str
    sense: str


@dataclass
class _Context:
    """Precomputed arrays for one search over a problem."""

    problem: SelectionProblem
    objective: object
    tp: np.ndarray
    fp: np.ndarray
    on: np.ndarray | None = None
    off: np.ndarray | None = None
    const: float = 0.0
    extra: list = field(default_factory=list)  # (mass vector name, sense, rhs) from lexicographic levels
    keys: list = field(default_factory=list)
    cost_fixed: np.ndarray | None = None
    costs: np.ndarray | None = None

    @property
    def linear(self) -> bool:
        return self.on is not None

    def evaluate(self, v: Sequence[bool]) -> float:
        if self.linear:
            terms = [self.on[i] if x else self.off[i] for i, x in enumerate(v)]
            return math.fsum(terms + [self.const])
        tp_on = math.fsum(self.tp[i] for i, x in enumerate(v) if x)
        fp_on = math.fsum(self.fp[i] for i, x in enumerate(v) if x)
        return -self._f1(tp_on, fp_on)

    def _f1(self, tp_on, fp_on) -> float:
        rates = _rates_from_mass(self.problem, tp_on, fp_on)
        t, f = rates["tp"] or 0.0, rates["fp"] or 0.0
        return 0.0 if t + f == 0 else f1_sr(t, f)

    def rate_cost(self, v: Sequence[bool]) -> float:
        if self.costs is None:
            return 0.0
        on = self.cost_fixed.copy()
        for i, x in enumerate(v):
            if x:
                on[self.keys[i]] = True
        return float(self.costs @ on)

    def feasible(self, tp_on: float, fp_on: float, v=None, optimistic_cost=None,
                 tp_hi: float | None = None, fp_hi: float | None = None) -> bool:
        """Goal check.  With ``tp_hi``/``fp_hi`` each bound is tested at its
        most favourable completion (lower bounds at the high mass, upper
        bounds at the low mass), which is what pruning needs."""
        tp_hi = tp_on if tp_hi is None else tp_hi
        fp_hi = fp_on if fp_hi is None else fp_hi
        goals = self.problem.constraints
        if goals is not None and not goals.empty:
            rates_lo = _rates_from_mass(self.problem, tp_on, fp_on)
            rates_hi = _rates_from_mass(self.problem, tp_hi, fp_hi)
            for name, rate_key, upper, rates in (
                ("tp_min", "tp", False, rates_hi),
                ("tn_min", "tn", False, rates_lo),
                ("fp_max", "fp", True, rates_lo),
                ("fn_max", "fn", True, rates_hi),
            ):
                limit = getattr(goals, name)
                if limit is None:
                    continue
                value = rates[rate_key]
                if value is None:
                    raise DegenerateDenominator(f"{rate_key.upper()}: normalising mass is zero")
                if (value > limit) if upper else (value < limit):
                    return False
            if goals.cost_max is not None:
                cost = optimistic_cost if optimistic_cost is not None else self.rate_cost(v)
                if cost > goals.cost_max:
                    return False
        for vec, sense, rhs in self.extra:
            if sense == ">=" and (tp_hi if vec == "tp" else fp_hi) < rhs:
                return False
            if sense == "<=" and (tp_on if vec == "tp" else fp_on) > rhs:
                return False
        return True


def _context(problem: SelectionProblem, objective) -> _Context:
    tp = np.array([b.tp_mass for b in problem.batches], dtype=float)
    fp = np.array([b.fp_mass for b in problem.batches], dtype=float)
    ctx = _Context(problem, objective, tp, fp)
    if not isinstance(objective, F1SR):
        ctx.on, ctx.off, ctx.const = _linear_terms(problem, objective)
    goals = problem.constraints
    if goals is not None and goals.cost_max is not None:
        n = len(problem.classifiers)
        ctx.costs = problem.classifiers.scan_costs
        ctx.keys = [np.array(b.sorted_key, dtype=int) for b in problem.batches]
        covered = np.zeros(n, dtype=bool)
        for k in ctx.keys:
            covered[k] = True
        # classifiers without a batch stay at full rate
        ctx.cost_fixed = ~covered
    return ctx


# ---------------------------------------------------------------------------
# solvers


def _separable(ctx: _Context) -> list[bool]:
    # enable iff its cost when enabled is no worse; ties enable
    return [bool(a <= b) for a, b in zip(ctx.on, ctx.off)]


def _lp_bound(ctx, order, depth, base, tp_on, fp_on) -> float:
    """Lower bound on the objective below a node.

    The relaxation lets undecided batches take fractional values.  Without
    constraints the bound is exact; each linear mass constraint is relaxed
    separately (fractional knapsack) and the largest bound is kept.
    """
    rest = order[depth:]
    if not ctx.linear:
        # f1_sr is nondecreasing in both masses: enable every undecided batch
        return -ctx._f1(tp_on + ctx.tp[rest].sum(), fp_on + ctx.fp[rest].sum())
    d = ctx.on[rest] - ctx.off[rest]
    free = base + ctx.off[rest].sum() + np.minimum(d, 0.0).sum()
    best = free
    for vec_name, sense, rhs in _mass_constraints(ctx):
        a = (ctx.tp if vec_name == "tp" else ctx.fp)[rest]
        have = tp_on if vec_name == "tp" else fp_on
        bound = _knapsack_relaxation(d, a, sense, rhs - have)
        if bound is None:
            return math.inf
        best = max(best, base + ctx.off[rest].sum() + bound)
    return best


def _knapsack_relaxation(d, a, sense, need) -> float | None:
    """min sum(d*x) s.t. sum(a*x) >= need (or <= need), 0 <= x <= 1."""
    x = (d <= 0).astype(float)
    load = float(a @ x)
    if sense == ">=":
        if load >= need:
            return float(d @ x)
        # buy the missing mass at the cheapest price per unit
        cand = np.where((x == 0) & (a > 0))[0]
        cand = cand[np.argsort(d[cand] / a[cand], kind="stable")]
        total = float(d @ x)
        for i in cand:
            gap = need - load
            if gap <= 0:
                break
            take = min(1.0, gap / a[i])
            total += take * d[i]
            load += take * a[i]
        return total if load >= need - 1e-12 * max(1.0, abs(need)) else None
    if need < -1e-12 * max(1.0, abs(need)):
        return None
    if load <= need:
        return float(d @ x)
    # shed mass giving up the least gain per unit
    cand = np.where((x == 1) & (a > 0))[0]
    cand = cand[np.argsort(-d[cand] / a[cand], kind="stable")]
    total = float(d @ x)
    for i in cand:
        excess = load - need
        if excess <= 0:
            break
        drop = min(1.0, excess / a[i])
        total -= drop * d[i]
        load -= drop * a[i]
    return total


def _mass_constraints(ctx: _Context):
    """Goals rewritten as linear constraints on enabled TP/FP mass."""
    out = list(ctx.extra)
    goals = ctx.problem.constraints
    if goals is None:
        return out
    tp_den, fp_den, tn_den, fn_den = _denominators(ctx.problem)
    pos, neg = ctx.problem.total_tp, ctx.problem.total_fp
    if goals.tp_min is not None and tp_den:
        out.append(("tp", ">=", goals.tp_min * tp_den))
    if goals.fn_max is not None and fn_den:
        out.append(("tp", ">=", pos - goals.fn_max * fn_den))
    if goals.fp_max is not None and fp_den:
        out.append(("fp", "<=", goals.fp_max * fp_den))
    if goals.tn_min is not None and tn_den:
        out.append(("fp", "<=", neg - goals.tn_min * tn_den))
    # relax by a hair so rounding never prunes a truly feasible node
    return [(v, s, r - 1e-9 * max(1.0, abs(r)) if s == ">=" else r + 1e-9 * max(1.0, abs(r)))
            for v, s, r in out]


def _branch_and_bound(ctx: _Context) -> list[bool] | None:
    n = len(ctx.problem.batches)
    if ctx.linear:
        adv = ctx.off - ctx.on
    else:
        adv = ctx.tp + ctx.fp
    order = np.argsort(-adv, kind="stable")
    tp_rest = np.concatenate((np.cumsum(ctx.tp[order][::-1])[::-1], [0.0]))
    fp_rest = np.concatenate((np.cumsum(ctx.fp[order][::-1])[::-1], [0.0]))
    scale = 1.0
    if ctx.linear and n:
        scale = max(1.0, float(np.abs(ctx.on).sum() + np.abs(ctx.off).sum() + abs(ctx.const)))
    tol = 1e-9 * scale

    best_v: list[bool] | None = None
    best_val = math.inf
    v = [False] * n
    has_cost = ctx.costs is not None
    covered = ctx.cost_fixed.copy() if has_cost else None
    goals = ctx.problem.constraints

    def optimistic_ok(depth, tp_on, fp_on):
        # each goal checked at its own most favourable completion
        if not ctx.feasible(tp_on, fp_on, optimistic_cost=0.0,
                            tp_hi=tp_on + tp_rest[depth], fp_hi=fp_on + fp_rest[depth]):
            return False
        if has_cost and goals.cost_max is not None:
            if float(ctx.costs @ covered) > goals.cost_max:
                return False
        return True

    def visit(depth, base, tp_on, fp_on):
        nonlocal best_v, best_val
        if not optimistic_ok(depth, tp_on, fp_on):
            return
        if depth == n:
            if not ctx.feasible(tp_on, fp_on, v):
                return
            val = ctx.evaluate(v)
            if val < best_val:
                best_val, best_v = val, list(v)
            return
        if _lp_bound(ctx, order, depth, base, tp_on, fp_on) > best_val + tol:
            return
        i = order[depth]
        # enable first
        v[i] = True
        saved = None
        if has_cost:
            saved = covered[ctx.keys[i]].copy()
            covered[ctx.keys[i]] = True
        on = ctx.on[i] if ctx.linear else 0.0
        visit(depth + 1, base + on, tp_on + ctx.tp[i], fp_on + ctx.fp[i])
        if has_cost:
            covered[ctx.keys[i]] = saved
        v[i] = False
        off = ctx.off[i] if ctx.linear else 0.0
        visit(depth + 1, base + off, tp_on, fp_on)

    visit(0, ctx.const if ctx.linear else 0.0, 0.0, 0.0)
    return best_v


def _masses(ctx, v):
    tp_on = math.fsum(ctx.tp[i] for i, x in enumerate(v) if x)
    fp_on = math.fsum(ctx.fp[i] for i, x in enumerate(v) if x)
    return tp_on, fp_on


def _heuristic(ctx: _Context) -> list[bool] | None:
    """Greedy by advantage (off cost minus on cost) plus 1-flip local search."""
    n = len(ctx.problem.batches)
    if ctx.linear:
        adv = ctx.off - ctx.on
        v = _separable(ctx)
    else:
        adv = ctx.tp + ctx.fp
        v = [True] * n
    order = [int(i) for i in np.argsort(-adv, kind="stable")]

    def ok(cand):
        return ctx.feasible(*_masses(ctx, cand), cand)

    def lower_ok(cand):
        tp_on, fp_on = _masses(ctx, cand)
        # lower-bound goals only: upper ones evaluated with nothing enabled
        return ctx.feasible(0.0, 0.0, cand, optimistic_cost=0.0, tp_hi=tp_on, fp_hi=fp_on)

    for i in order:
        if lower_ok(v):
            break
        v[i] = True
    for i in reversed(order):
        if ok(v):
            break
        if v[i]:
            v[i] = False
            if not lower_ok(v):
                v[i] = True
    if not ok(v):
        return None

    current = ctx.evaluate(v)
    while True:
        best_i, best_val = None, current
        for i in order:
            v[i] = not v[i]
            if ok(v):
                val = ctx.evaluate(v)
                if val < best_val:
                    best_i, best_val = i, val
            v[i] = not v[i]
        if best_i is None:
            return v
        v[best_i] = not v[best_i]
        current = best_val


def _solve_single(problem: SelectionProblem, objective, extra=()) -> tuple[list[bool], str, _Context]:
    ctx = _context(problem, objective)
    ctx.extra = list(extra)
    n = len(problem.batches)
    if ctx.linear and not problem.has_constraints and not ctx.extra:
        return _separable(ctx), "separable", ctx
    if n <= problem.batch_limit:
        v = _branch_and_bound(ctx)
        if v is None:
            raise InfeasibleConstraints("no batch assignment satisfies the goals")
        return v, "branch_and_bound", ctx
    v = _heuristic(ctx)
    if v is None:
        raise InfeasibleConstraints(
            "heuristic search found no assignment satisfying the goals "
            f"({n} batches exceeds the exact-search limit {problem.batch_limit})"
        )
    return v, "heuristic", ctx


def select_batches(problem: SelectionProblem) -> SelectionResult:
    """Optimal (or, past ``batch_limit``, heuristic) enable/disable decisions."""
    objective = problem.objective
    if isinstance(objective, Prioritized):
        extra: list = []
        methods = []
        v = None
        ctx = None
        for metric, sense in objective.terms:
            single = _Single(metric, sense)
            v, method, ctx = _solve_single(problem, single, extra)
            methods.append(method)
            tp_on, fp_on = _masses(ctx, v)
            # pin this level: later levels may not worsen it
            vec = "tp" if metric in ("tp", "fn") else "fp"
            achieved = tp_on if vec == "tp" else fp_on
            wants_more = (metric in ("tp", "fp")) == (sense == "max")
            slack = 1e-9 * max(1.0, abs(achieved))
            extra.append((vec, ">=", achieved - slack) if wants_more else (vec, "<=", achieved + slack))
        method = "heuristic" if "heuristic" in methods else methods[-1]
        value = _context(problem, _Single(*objective.terms[0])).evaluate(v)
    else:
        v, method, ctx = _solve_single(problem, objective)
        value = ctx.evaluate(v)
    batches = tuple(replace(b, decision=bool(x)) for b, x in zip(problem.batches, v))
    return SelectionResult(tuple(bool(x) for x in v), value, method, batches)


def evaluate_assignment(problem: SelectionProblem, decisions: Sequence[bool]) -> float:
    """Objective value of ``decisions`` (first-priority value for Prioritized)."""
    objective = problem.objective
    if isinstance(objective, Prioritized):
        objective = _Single(*objective.terms[0])
    return _context(problem, objective).evaluate(list(decisions))


def assignment_feasible(problem: SelectionProblem, decisions: Sequence[bool]) -> bool:
    ctx = _context(problem, problem.objective if not isinstance(problem.objective, Prioritized)
                   else _Single(*problem.objective.terms[0]))
    v = list(decisions)
    return ctx.feasible(*_masses(ctx, v), v)


def decisions_to_rates_no_overlap(batches: Sequence[Batch], n_classifiers: int) -> SamplingVector:
    """Rates 1/0 from enabled/disabled singleton batches; unseen classifiers stay at 1."""
    rates = np.ones(n_classifiers)
    for b in batches:
        if len(b.key) != 1:
            raise OverlapPresent(f"batch {b.sorted_key} has classifier overlap")
        if b.decision is None:
            raise ValueError(f"batch {b.sorted_key} has no decision")
        (j,) = b.key
        rates[j] = 1.0 if b.decision else 0.0
    return SamplingVector(rates)
