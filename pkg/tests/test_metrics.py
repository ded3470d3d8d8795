import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratetune.metrics import (
    CONVENTIONAL,
    PAPER_EXACT,
    ConfusionRates,
    DegenerateDenominator,
    check_goals,
    confusion_rates,
    expenses,
    exploitation_probability,
    f1_sr,
    scan_cost,
)
from ratetune.model import ClassifierSet, Classifier, CostModel, Goals, ObservationDataset, SamplingVector

from oracles import closed_form_detection, mc_confusion, random_rows

FOUR = ObservationDataset.from_rows([(True, [0]), (True, [0, 1]), (False, [1]), (False, [])])


def test_exploitation_examples():
    assert exploitation_probability({0}, SamplingVector([1.0, 0.3])) == 1.0
    assert exploitation_probability(set(), SamplingVector([0.7])) == 0.0
    assert exploitation_probability({0, 1}, SamplingVector([0.5, 0.5])) == pytest.approx(0.75)


def test_exploitation_half_half_against_monte_carlo():
    rng = np.random.default_rng(11)
    trials = 1_000_000
    est = (rng.random((trials, 2)) < 0.5).any(axis=1).mean()
    se = np.sqrt(est * (1 - est) / trials)
    assert abs(exploitation_probability({0, 1}, SamplingVector([0.5, 0.5])) - est) < 3 * se


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=6), st.data())
def test_exploitation_matches_inclusion_exclusion(alpha, data):
    flags = data.draw(st.sets(st.integers(0, len(alpha) - 1)))
    p = exploitation_probability(flags, SamplingVector(alpha))
    assert 0.0 <= p <= 1.0
    assert p == pytest.approx(closed_form_detection(flags, alpha), abs=1e-12)
    if len(flags) == 1:
        assert p == alpha[next(iter(flags))]


def test_four_sample_example_paper_exact():
    cr = confusion_rates(FOUR, SamplingVector([0.5, 0.5]), PAPER_EXACT)
    assert (cr.tp, cr.fp, cr.tn, cr.fn) == pytest.approx((0.625, 0.25, 0.75, 0.375))


def test_four_sample_example_against_monte_carlo():
    rows = [(True, [0], 1.0), (True, [0, 1], 1.0), (False, [1], 1.0), (False, [], 1.0)]
    rates, _ = mc_confusion(rows, [0.5, 0.5], 200_000, np.random.default_rng(5))
    cr = confusion_rates(FOUR, SamplingVector([0.5, 0.5]), CONVENTIONAL)
    for name in ("tp", "fp", "tn", "fn"):
        mean, se = rates[name]
        assert abs(getattr(cr, name) - mean) < 4 * se


def test_all_ones_and_all_zeros():
    ds = ObservationDataset.from_rows([(True, [0]), (True, [1, 2]), (False, [2])])
    assert confusion_rates(ds, SamplingVector.full(3, 1.0)).tp == 1.0
    cr = confusion_rates(ds, SamplingVector.full(3, 0.0))
    assert (cr.tp, cr.fp, cr.tn, cr.fn) == (0.0, 0.0, 1.0, 1.0)


def test_degenerate_denominator():
    ds = ObservationDataset.from_rows([(True, [0])])
    with pytest.raises(DegenerateDenominator):
        confusion_rates(ds, SamplingVector([0.5]))


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_conventional_identities_with_uniform_weights(seed):
    rng = np.random.default_rng(seed)
    rows = random_rows(rng, 30, 5, weighted=False)
    if not any(r[0] for r in rows) or all(r[0] for r in rows):
        return
    cr = confusion_rates(ObservationDataset.from_rows(rows), SamplingVector(rng.random(5)))
    assert abs(cr.tp + cr.fn - 1.0) < 1e-12
    assert abs(cr.tn + cr.fp - 1.0) < 1e-12


def test_scan_cost():
    cs = ClassifierSet((Classifier("a", 2.0), Classifier("b", 3.0)))
    assert scan_cost(SamplingVector([0.5, 1.0]), cs) == 4.0
    assert scan_cost(SamplingVector([0.0, 0.0]), cs) == 0.0
    assert scan_cost(SamplingVector([1.0, 1.0]), cs) == 5.0
    with pytest.raises(ValueError):
        scan_cost(SamplingVector([1.0]), cs)


def test_expenses():
    cr = ConfusionRates(0.625, 0.25, 0.75, 0.375)
    assert expenses(cr, CostModel(1, 1)) == 0.625
    assert expenses(ConfusionRates(1, 0, 1, 0), CostModel(3, 2)) == 0.0
    assert expenses(cr, CostModel(2, 0)) == 2 * 0.375


def test_f1_sr():
    assert f1_sr(0.4, 0.4) == pytest.approx(0.4)
    assert f1_sr(1.0, 0.0) == 0.0
    assert f1_sr(0.625, 0.25) == pytest.approx(0.357142857142857)
    with pytest.raises(ZeroDivisionError):
        f1_sr(0.0, 0.0)


def test_check_goals():
    cr = ConfusionRates(0.95, 0.3, 0.7, 0.05)
    assert check_goals(cr, 1.0, Goals()) == []
    assert check_goals(cr, 1.0, Goals(tp_min=0.9)) == []
    (v,) = check_goals(cr, 1.0, Goals(fp_max=0.25))
    assert str(v) == "FP exceeds Y_p by 0.05"
    (v,) = check_goals(cr, 2.0, Goals(tn_min=0.8, cost_max=3.0))
    assert v.quantity == "TN" and "falls below" in str(v)
