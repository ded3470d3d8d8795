"""Classifier sampling rates as posterior marginals of an OR-factor graph.

Each classifier is a boolean query variable C_i.  Each batch becomes one
observation S_j (true iff the batch was enabled) tied to its flagging
classifiers by an OR-equality factor, S_j == OR(C_i for i in batch).
Marginals P(C_i = 1) are used as sampling rates.

Messages are normalised and then floored at ``config.floor``.  The floor
turns every hard factor into a very strong soft one, so contradictory
evidence (a classifier that must be both on and off) settles at an even
split instead of a zero-mass posterior.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import ClassifierSet, MinRatePolicy, SamplingVector


class InferenceError(RuntimeError):
    pass


class InferenceTimeout(InferenceError):
    pass


class NumericalCollapse(InferenceError):
    pass


class InconsistentEvidence(InferenceError):
    pass


class GraphTooLarge(InferenceError):
    pass


@dataclass(frozen=True)
class Factor:
    variables: tuple[int, ...]
    evidence: bool
    count: int = 1


@dataclass(frozen=True)
class FactorGraph:
    n_classifiers: int
    factors: tuple[Factor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        for j, f in enumerate(self.factors):
            if not f.variables:
                raise ValueError(f"factor {j} touches no classifier")
            if len(set(f.variables)) != len(f.variables):
                raise ValueError(f"factor {j} repeats a classifier")
            if min(f.variables) < 0 or max(f.variables) >= self.n_classifiers:
                raise ValueError(f"factor {j} references an unknown classifier")
            if f.count < 1:
                raise ValueError(f"factor {j} has repetition count < 1")

    @property
    def n_variables(self) -> int:
        return self.n_classifiers + len(self.factors)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_classifiers, dtype=int)
        for f in self.factors:
            deg[list(f.variables)] += 1
        return deg

    def is_forest(self) -> bool:
        # bipartite graph: vertices = classifiers + factors, edges = memberships
        parent = list(range(self.n_classifiers + len(self.factors)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for j, f in enumerate(self.factors):
            fj = self.n_classifiers + j
            for i in f.variables:
                a, b = find(i), find(fj)
                if a == b:
                    return False
                parent[a] = b
        return True

    def dump(self) -> str:
        """Plain-text adjacency listing, one factor per line."""
        lines = []
        for j, f in enumerate(self.factors):
            vars_ = " ".join(f"C{i}" for i in f.variables)
            lines.append(f"F{j} S={int(f.evidence)} : {vars_}")
        return "\n".join(lines) + ("\n" if lines else "")


def build_factor_graph(batches: Iterable, n_classifiers: int, replicate: str = "none") -> FactorGraph:
    """One factor per batch; evidence is the batch's enable decision.

    ``replicate="none"`` gives every factor count 1.  ``"mass"`` repeats a
    factor once per (rounded, at least one) unit of the batch's total mass.
    """
    factors = []
    for b in batches:
        if b.decision is None:
            raise ValueError(f"batch {sorted(b.key)} has no decision")
        count = 1
        if replicate == "mass":
            count = max(1, int(round(b.tp_mass + b.fp_mass)))
        elif replicate != "none":
            raise ValueError(f"unknown replication mode {replicate!r}")
        factors.append(Factor(tuple(sorted(b.key)), bool(b.decision), count))
    return FactorGraph(n_classifiers, tuple(factors))


@dataclass(frozen=True)
class InferenceConfig:
    max_iterations: int = 200
    damping: float = 0.5
    floor: float = 1e-9
    tolerance: float = 1e-4
    prior: float = 0.5
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if not 0.0 < self.floor < 0.5:
            raise ValueError("floor must lie in (0, 0.5)")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")


@dataclass(frozen=True)
class InferenceResult:
    marginals: np.ndarray
    converged: bool
    iterations: int
    elapsed: float

    def as_rates(self) -> SamplingVector:
        return SamplingVector(self.marginals)


_TINY = 1e-300


def infer_rates(graph: FactorGraph, config: InferenceConfig = InferenceConfig()) -> InferenceResult:
    """Damped loopy sum-product over the OR-equality factors.

    Synchronous schedule: every factor-to-variable message is recomputed from
    the previous variable-to-factor messages, then every variable-to-factor
    message from the new factor messages.  All messages are two-component
    distributions stored as P(value = 0); P(value = 1) is the complement.
    """
    start = time.perf_counter()
    n = graph.n_classifiers
    log_prior = np.array([np.log1p(-config.prior), np.log(config.prior)])
    if not graph.factors:
        marg = np.full(n, config.prior)
        return InferenceResult(marg, True, 0, time.perf_counter() - start)

    edge_var = np.fromiter(
        itertools.chain.from_iterable(f.variables for f in graph.factors), dtype=np.int64
    )
    sizes = np.array([len(f.variables) for f in graph.factors], dtype=np.int64)
    edge_fac = np.repeat(np.arange(len(graph.factors)), sizes)
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    evid = np.array([f.evidence for f in graph.factors], dtype=bool)[edge_fac]
    count = np.array([f.count for f in graph.factors], dtype=float)[edge_fac]

    eps = config.floor
    # factor -> variable messages, probability of value 0; start uniform
    nu0 = np.full(len(edge_var), 0.5)
    mu0 = np.full(len(edge_var), 0.5)
    marg = np.full(n, config.prior)
    logit = np.zeros(len(edge_var))
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        if time.perf_counter() - start > config.timeout:
            raise InferenceTimeout(f"inference exceeded {config.timeout} s after {it - 1} iterations")

        # factor -> variable
        log_q = np.log(np.maximum(mu0, _TINY))
        fac_sum = np.add.reduceat(log_q, offsets)
        others = fac_sum[edge_fac] - log_q
        prod_others = np.exp(np.minimum(others, 0.0))
        # true evidence: (1 - prod_others, 1); false evidence: (prod_others, 0)
        raw0 = np.where(evid, -np.expm1(np.minimum(others, 0.0)), prod_others)
        raw1 = np.where(evid, 1.0, 0.0)
        norm = raw0 + raw1
        # a false factor whose other members are all certainly on cannot be
        # satisfied by this variable either way: send an uninformative message
        new0 = np.divide(raw0, norm, out=np.full_like(raw0, 0.5), where=norm > 0)
        new0 = np.clip(new0, eps, 1.0 - eps)
        prev_logit = logit
        nu0 = config.damping * nu0 + (1.0 - config.damping) * new0

        # variable beliefs and variable -> factor messages, log domain
        ln0 = np.log(nu0)
        ln1 = np.log1p(-nu0)
        logit = ln1 - ln0
        tot = log_prior[1] - log_prior[0] + np.bincount(edge_var, count * logit, minlength=n)
        new_marg = 1.0 / (1.0 + np.exp(np.clip(-tot, -700, 700)))
        mu0 = 1.0 / (1.0 + np.exp(np.clip(tot[edge_var] - logit, -700, 700)))

        if not np.all(np.isfinite(new_marg)):
            raise NumericalCollapse("non-finite marginal during message passing")
        delta = float(np.max(np.abs(new_marg - marg)))
        msg_delta = float(np.max(np.abs(logit - prev_logit)))
        marg = new_marg
        # marginals alone stall near 0/1 while log-odds still move; require both
        if delta < config.tolerance and msg_delta < config.tolerance:
            converged = True
            break

    marg = np.clip(marg, 0.0, 1.0)
    return InferenceResult(marg, converged, it, time.perf_counter() - start)


def exact_posterior(graph: FactorGraph, prior: float = 0.5, max_classifiers: int = 20) -> np.ndarray:
    """Marginals by enumerating all 2^n classifier assignments (test oracle)."""
    n = graph.n_classifiers
    if n > max_classifiers:
        raise GraphTooLarge(f"{n} classifiers exceeds the enumeration limit {max_classifiers}")
    if n == 0:
        return np.zeros(0)
    states = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    ones = states.sum(axis=1)
    weight = prior**ones * (1.0 - prior) ** (n - ones)
    for f in graph.factors:
        fired = states[:, list(f.variables)].any(axis=1)
        weight = np.where(fired == f.evidence, weight, 0.0)
    total = weight.sum()
    if total == 0.0:
        raise InconsistentEvidence("no classifier assignment satisfies every factor")
    return (weight[:, None] * states).sum(axis=0) / total


def apply_min_rate(
    rates: SamplingVector, policy: MinRatePolicy, classifiers: ClassifierSet
) -> SamplingVector:
    if len(rates) != len(classifiers):
        raise ValueError("rate vector and classifier set differ in length")
    mins = np.array([policy.value_for(c.severity) for c in classifiers], dtype=float)
    s = rates.rates
    if policy.form == "lower_bound":
        out = np.maximum(s, mins)
    elif policy.form == "additive":
        out = np.minimum(1.0, s + mins)
    else:
        out = s + (1.0 - s) * mins
    return SamplingVector(np.clip(out, 0.0, 1.0))


def chain_graph(evidence: Sequence[bool] = (True,) * 5) -> FactorGraph:
    """Three classifiers and five samples wired as a chain of overlaps.

    S1:{C1}, S2:{C1,C2}, S3:{C2}, S4:{C2,C3}, S5:{C3} (zero-based indices).
    """
    wiring = [(0,), (0, 1), (1,), (1, 2), (2,)]
    return FactorGraph(3, tuple(Factor(v, bool(e)) for v, e in zip(wiring, evidence)))
