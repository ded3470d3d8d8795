"""Domain types shared by every stage of the rate-tuning pipeline.

All containers are frozen; operations that "modify" a dataset return a new one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np


class ModelError(ValueError):
    """Raised when a domain value violates its invariants at construction."""


@dataclass(frozen=True)
class Classifier:
    id: str
    scan_cost: float = 1.0
    severity: int = 1


@dataclass(frozen=True)
class ClassifierSet:
    classifiers: tuple[Classifier, ...]

    def __post_init__(self):
        object.__setattr__(self, "classifiers", tuple(self.classifiers))
        if not self.classifiers:
            raise ModelError("a classifier set needs at least one classifier")
        ids = [c.id for c in self.classifiers]
        if len(set(ids)) != len(ids):
            raise ModelError("classifier ids must be unique")
        for c in self.classifiers:
            if not c.scan_cost >= 0:
                raise ModelError(f"classifier {c.id!r}: scan_cost must be >= 0")
            if c.severity < 0:
                raise ModelError(f"classifier {c.id!r}: severity must be >= 0")

    @classmethod
    def from_ids(cls, ids: Iterable[str], scan_cost: float = 1.0, severity: int = 1) -> ClassifierSet:
        return cls(tuple(Classifier(str(i), scan_cost, severity) for i in ids))

    @classmethod
    def uniform(cls, count: int) -> ClassifierSet:
        return cls.from_ids(f"c{j}" for j in range(count))

    def __len__(self) -> int:
        return len(self.classifiers)

    def __iter__(self):
        return iter(self.classifiers)

    def __getitem__(self, j: int) -> Classifier:
        return self.classifiers[j]

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.classifiers]

    @property
    def scan_costs(self) -> np.ndarray:
        return np.array([c.scan_cost for c in self.classifiers], dtype=float)

    @property
    def severities(self) -> list[int]:
        return [c.severity for c in self.classifiers]


@dataclass(frozen=True)
class Sample:
    """One observation: ground truth (True = malicious), flagging classifiers, weight.

    ``ingested`` is the simulation day the sample entered the dataset; it is
    what the age-based weight policies measure against.
    """

    malicious: bool
    flags: frozenset[int]
    weight: float = 1.0
    ingested: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))


@dataclass(frozen=True)
class ObservationDataset:
    samples: tuple[Sample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple], ingested: int = 0) -> ObservationDataset:
        """Build from ``(malicious, flags)`` or ``(malicious, flags, weight)`` tuples."""
        samples = []
        for row in rows:
            weight = row[2] if len(row) > 2 else 1.0
            samples.append(Sample(bool(row[0]), frozenset(row[1]), float(weight), ingested))
        return cls(tuple(samples))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def with_weights(self, weights: Sequence[float]) -> ObservationDataset:
        if len(weights) != len(self.samples):
            raise ModelError("weight vector length does not match dataset")
        return ObservationDataset(
            tuple(replace(s, weight=float(w)) for s, w in zip(self.samples, weights))
        )


class SamplingVector:
    """Per-classifier sampling rates, each in [0, 1]."""

    __slots__ = ("_rates",)

    def __init__(self, rates: Iterable[float]):
        arr = np.array(list(rates) if not isinstance(rates, np.ndarray) else rates, dtype=float)
        if arr.ndim != 1:
            raise ModelError("sampling rates must be a flat vector")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise ModelError(f"sampling rates must lie in [0, 1], got {arr.tolist()}")
        arr.setflags(write=False)
        self._rates = arr

    @classmethod
    def full(cls, count: int, value: float = 1.0) -> SamplingVector:
        return cls(np.full(count, value))

    @property
    def rates(self) -> np.ndarray:
        return self._rates

    def __len__(self) -> int:
        return len(self._rates)

    def __getitem__(self, j):
        return float(self._rates[j])

    def __iter__(self):
        return (float(r) for r in self._rates)

    def __eq__(self, other):
        if not isinstance(other, SamplingVector):
            return NotImplemented
        return np.array_equal(self._rates, other._rates)

    def __hash__(self):
        return hash(self._rates.tobytes())

    def __repr__(self):
        return f"SamplingVector({self._rates.tolist()})"

    def tolist(self) -> list[float]:
        return self._rates.tolist()


@dataclass(frozen=True)
class Goals:
    """Optional thresholds: TP >= tp_min, TN >= tn_min, FP <= fp_max, FN <= fn_max, Cost <= cost_max."""

    tp_min: float | None = None
    tn_min: float | None = None
    fp_max: float | None = None
    fn_max: float | None = None
    cost_max: float | None = None

    def __post_init__(self):
        for name in ("tp_min", "tn_min", "fp_max", "fn_max", "cost_max"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise ModelError(f"goal {name} must be >= 0")

    @property
    def empty(self) -> bool:
        return all(
            getattr(self, n) is None for n in ("tp_min", "tn_min", "fp_max", "fn_max", "cost_max")
        )


@dataclass(frozen=True)
class CostModel:
    cost_fn: float
    cost_fp: float

    def __post_init__(self):
        if not (self.cost_fn >= 0 and self.cost_fp >= 0):
            raise ModelError("misclassification costs must be >= 0")

    @classmethod
    def from_beta(cls, beta: float) -> CostModel:
        return cls(cost_fn=float(beta), cost_fp=1.0)

    @property
    def beta(self) -> float:
        if self.cost_fp == 0:
            return math.inf if self.cost_fn > 0 else 0.0
        return self.cost_fn / self.cost_fp


MIN_RATE_FORMS = ("lower_bound", "additive", "proportional")


@dataclass(frozen=True)
class MinRatePolicy:
    """Severity-keyed minimum sampling rate applied after inference.

    ``form`` picks how the table value combines with an inferred rate S:
    lower_bound -> max(S, L), additive -> min(1, S + X),
    proportional -> S + (1 - S) * Y.
    """

    form: str = "lower_bound"
    table: Mapping[int, float] = field(default_factory=dict)
    default: float | None = 0.0

    def __post_init__(self):
        if self.form not in MIN_RATE_FORMS:
            raise ModelError(f"unknown minimum-rate form {self.form!r}")
        object.__setattr__(self, "table", dict(self.table))
        for sev, value in self.table.items():
            if not 0.0 <= value <= 1.0:
                raise ModelError(f"minimum rate for severity {sev} must lie in [0, 1]")
        if self.default is not None and not 0.0 <= self.default <= 1.0:
            raise ModelError("default minimum rate must lie in [0, 1]")

    def value_for(self, severity: int) -> float:
        if severity in self.table:
            return self.table[severity]
        if self.default is None:
            raise ModelError(f"no minimum rate for severity {severity} and no default")
        return self.default

    def covers(self, classifiers: ClassifierSet) -> bool:
        return self.default is not None or all(s in self.table for s in classifiers.severities)


WEIGHT_POLICY_KINDS = ("none", "drop_old", "exponential", "inverse_rate")


@dataclass(frozen=True)
class WeightPolicy:
    kind: str = "none"
    max_age_days: int = 30
    w0: float = 1.0
    delta: float = 0.9

    def __post_init__(self):
        if self.kind not in WEIGHT_POLICY_KINDS:
            raise ModelError(f"unknown weight policy {self.kind!r}")
        if self.kind == "drop_old" and self.max_age_days < 0:
            raise ModelError("max_age_days must be >= 0")
        if self.kind == "exponential":
            if not 0.0 < self.w0 <= 1.0:
                raise ModelError("w0 must lie in (0, 1]")
            if not 0.0 < self.delta < 1.0:
                raise ModelError("delta must lie in (0, 1)")

    @property
    def initial_weight(self) -> float:
        """Weight given to a freshly ingested sample."""
        return self.w0 if self.kind == "exponential" else 1.0


@dataclass(frozen=True)
class Violation:
    position: int
    message: str

    def __str__(self):
        return f"sample {self.position}: {self.message}"


def validate_dataset(dataset: ObservationDataset, classifiers: ClassifierSet) -> list[Violation]:
    """Return every invariant violation in ``dataset``; an empty list means valid."""
    n = len(classifiers)
    out = []
    for pos, s in enumerate(dataset.samples):
        for j in sorted(s.flags):
            if not (isinstance(j, (int, np.integer)) and 0 <= j < n):
                out.append(Violation(pos, f"flag index out of range: {j}"))
        if not 0.0 <= s.weight <= 1.0:
            out.append(Violation(pos, f"weight out of range: {s.weight}"))
    return out


def require_valid(dataset: ObservationDataset, classifiers: ClassifierSet) -> None:
    violations = validate_dataset(dataset, classifiers)
    if violations:
        shown = "; ".join(str(v) for v in violations[:5])
        raise ModelError(f"{len(violations)} dataset violation(s): {shown}")


def apply_weight_policy(
    dataset: ObservationDataset,
    policy: WeightPolicy,
    current_day: int,
    rates: SamplingVector | None = None,
) -> ObservationDataset:
    """Re-weight samples per ``policy``; returns a new dataset.

    exponential multiplies every existing weight by ``delta`` (new samples are
    created with ``w0``, see :attr:`WeightPolicy.initial_weight`).
    inverse_rate replaces each flagged sample's weight with
    ``m_min / m_i`` where ``m_i`` is the mean rate over its flagging
    classifiers and ``m_min`` the smallest such positive mean in the dataset;
    a sample with any zero-rate flagging classifier gets weight 1.
    """
    if policy.kind == "none":
        return dataset
    if policy.kind == "drop_old":
        weights = [
            0.0 if current_day - s.ingested > policy.max_age_days else s.weight
            for s in dataset.samples
        ]
        return dataset.with_weights(weights)
    if policy.kind == "exponential":
        return dataset.with_weights([s.weight * policy.delta for s in dataset.samples])

    if rates is None:
        raise ModelError("inverse_rate weighting needs the current sampling rates")
    r = rates.rates
    means: list[float | None] = []
    for s in dataset.samples:
        if not s.flags:
            means.append(None)
            continue
        flagged = r[sorted(s.flags)]
        means.append(0.0 if np.any(flagged == 0.0) else float(flagged.mean()))
    positive = [m for m in means if m]
    m_min = min(positive) if positive else 1.0
    weights = []
    for s, m in zip(dataset.samples, means):
        if m is None:
            weights.append(s.weight)
        elif m == 0.0:
            weights.append(1.0)
        else:
            weights.append(min(1.0, m_min / m))
    return dataset.with_weights(weights)
