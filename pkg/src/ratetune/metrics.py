"""Closed-form quality measures for a sampling vector over a labelled dataset."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import ClassifierSet, CostModel, Goals, ObservationDataset, SamplingVector

PAPER_EXACT = "paper_exact"
CONVENTIONAL = "conventional"
NORMALIZATIONS = (PAPER_EXACT, CONVENTIONAL)


class DegenerateDenominator(ZeroDivisionError):
    """A rate was requested whose normalising mass is zero."""


@dataclass(frozen=True)
class ConfusionRates:
    tp: float
    fp: float
    tn: float
    fn: float
    normalization: str = CONVENTIONAL


def exploitation_probability(flags: Iterable[int], rates: SamplingVector) -> float:
    """Probability that at least one flagging classifier samples the entry."""
    idx = sorted(flags)
    if not idx:
        return 0.0
    if len(idx) == 1:
        # 1 - (1 - a) is not always a in floating point
        return float(rates.rates[idx[0]])
    return float(1.0 - np.prod(1.0 - rates.rates[idx]))


def detection_probabilities(dataset: ObservationDataset, rates: SamplingVector) -> np.ndarray:
    return np.array([exploitation_probability(s.flags, rates) for s in dataset.samples])


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        raise DegenerateDenominator(f"{what}: normalising mass is zero")
    return num / den


def confusion_rates(
    dataset: ObservationDataset, rates: SamplingVector, normalization: str = CONVENTIONAL
) -> ConfusionRates:
    """Weighted TP/FP/TN/FN rates.

    ``paper_exact`` keeps the published denominators, where FP is divided by
    the positive mass and FN by the negative mass; ``conventional`` swaps
    those two so each class's rates sum to one.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    g = np.array([s.malicious for s in dataset.samples], dtype=float)
    w = np.array([s.weight for s in dataset.samples], dtype=float)
    pr = detection_probabilities(dataset, rates)

    pos = float(np.sum(w * g))
    neg = float(np.sum(w * (1.0 - g)))
    tp_num = float(np.sum(w * g * pr))
    fp_num = float(np.sum(w * (1.0 - g) * pr))
    tn_num = float(np.sum(w * (1.0 - g) * (1.0 - pr)))
    fn_num = float(np.sum(w * g * (1.0 - pr)))

    if normalization == PAPER_EXACT:
        fp_den, fn_den = pos, neg
    else:
        fp_den, fn_den = neg, pos
    return ConfusionRates(
        tp=_ratio(tp_num, pos, "TP"),
        fp=_ratio(fp_num, fp_den, "FP"),
        tn=_ratio(tn_num, neg, "TN"),
        fn=_ratio(fn_num, fn_den, "FN"),
        normalization=normalization,
    )


def scan_cost(rates: SamplingVector, classifiers: ClassifierSet) -> float:
    if len(rates) != len(classifiers):
        raise ValueError(
            f"length mismatch: {len(rates)} rates for {len(classifiers)} classifiers"
        )
    return float(classifiers.scan_costs @ rates.rates)


def expenses(confusion: ConfusionRates, cost_model: CostModel) -> float:
    return cost_model.cost_fn * confusion.fn + cost_model.cost_fp * confusion.fp


def f1_sr(tp: float, fp: float) -> float:
    """2 * tp * fp / (tp + fp); the TP rate stands in for precision, FP for recall."""
    if tp + fp == 0:
        raise ZeroDivisionError("f1_sr undefined when tp + fp == 0")
    return 2.0 * (tp * fp) / (tp + fp)


@dataclass(frozen=True)
class GoalViolation:
    quantity: str
    threshold: str
    value: float
    limit: float

    @property
    def margin(self) -> float:
        return abs(self.value - self.limit)

    def __str__(self):
        verb = "falls below" if self.threshold in ("X_p", "X_n") else "exceeds"
        return f"{self.quantity} {verb} {self.threshold} by {self.margin:.6g}"


def check_goals(confusion: ConfusionRates, cost: float, goals: Goals) -> list[GoalViolation]:
    """Every violated threshold; an empty list means all goals hold."""
    out = []
    if goals.tp_min is not None and not confusion.tp >= goals.tp_min:
        out.append(GoalViolation("TP", "X_p", confusion.tp, goals.tp_min))
    if goals.tn_min is not None and not confusion.tn >= goals.tn_min:
        out.append(GoalViolation("TN", "X_n", confusion.tn, goals.tn_min))
    if goals.fp_max is not None and not confusion.fp <= goals.fp_max:
        out.append(GoalViolation("FP", "Y_p", confusion.fp, goals.fp_max))
    if goals.fn_max is not None and not confusion.fn <= goals.fn_max:
        out.append(GoalViolation("FN", "Y_n", confusion.fn, goals.fn_max))
    if goals.cost_max is not None and not cost <= goals.cost_max:
        out.append(GoalViolation("Cost", "Z", cost, goals.cost_max))
    return out
