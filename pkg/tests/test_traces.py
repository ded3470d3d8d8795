import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratetune.traces import (
    OverlapDistribution,
    SignatureLifecycle,
    TraceError,
    TraceParams,
    assign_overlap,
    calibrate_decay,
    filter_schedule,
    generate_fp_trace,
    generate_signature_traces,
    generate_tp_trace,
    overlap_sets,
    substream,
)


def test_calibration_examples():
    assert calibrate_decay(500, 100, 1).gamma == pytest.approx(math.log(500) / math.log(100))
    assert calibrate_decay(500, 100, 1).gamma == pytest.approx(1.3495, abs=1e-4)
    assert calibrate_decay(4, 2, 1).gamma == pytest.approx(2.0)
    with pytest.raises(TraceError):
        calibrate_decay(500, 100, 500)
    with pytest.raises(TraceError):
        calibrate_decay(500, 1, 1)


@given(st.floats(2, 1e4), st.integers(2, 3000))
def test_curve_reaches_floor_at_end_of_life(y0, life):
    c = calibrate_decay(y0, life, 1.0)
    assert float(c(life - 1)) == pytest.approx(1.0, rel=1e-9)
    assert c.age_for(float(c(17))) == pytest.approx(17, rel=1e-9)


def lc(intro=10, removal=110, updates=(), **kw):
    return SignatureLifecycle("s", intro, removal, 1, tuple(updates), **kw)


def test_tp_trace_window_and_start():
    life = lc()
    tp = generate_tp_trace(life, calibrate_decay(500, life.lifespan), jitter=0.0)
    assert tp.first_day == 7 and tp.at(6) == 0
    assert tp.at(7) == 500
    assert tp.at(life.malware_disappear_day) == 0 and tp.at(life.removal_day) == 0
    assert tp.at(life.malware_disappear_day - 1) > 0


def test_update_bumps_and_decay_between_updates():
    life = lc(updates=(40, 70))
    tp = generate_tp_trace(life, calibrate_decay(500, life.lifespan), rho=1.5, jitter=0.0)
    for u in life.update_days:
        assert tp.at(u) >= tp.at(u - 1)
    counts = [tp.at(d) for d in tp.days()]
    segments = [(7, 40), (40, 70), (70, life.removal_day + 1)]
    for a, b in segments:
        seg = counts[a - 7 : b - 7]
        assert all(x >= y for x, y in zip(seg, seg[1:]))


def test_update_level_is_capped():
    life = lc(updates=(11,))
    tp = generate_tp_trace(life, calibrate_decay(500, life.lifespan), rho=10.0, jitter=0.0)
    assert tp.at(11) == 500


def test_fp_trace_rules():
    life = lc(updates=(40,))
    tp = generate_tp_trace(life, calibrate_decay(500, life.lifespan), jitter=0.0)
    assert not generate_fp_trace(tp, life, 0.0).counts.any()
    fp = generate_fp_trace(tp, life, 0.2)
    assert fp.at(10) == round(0.2 * tp.at(10))
    assert len({fp.at(d) for d in range(10, 40)}) == 1
    assert fp.at(40) == round(0.2 * tp.at(40))
    assert fp.at(9) == 0 and fp.at(110) == 0
    with pytest.raises(TraceError):
        generate_fp_trace(tp, life, 1.5)


def test_fp_from_intro_count_of_500():
    life = lc(intro=3, removal=100, lead=0)
    tp = generate_tp_trace(life, calibrate_decay(500, life.lifespan), jitter=0.0)
    assert generate_fp_trace(tp, life, 0.2).at(3) == 100


def test_jitter_needs_rng_and_stays_in_band():
    life = lc()
    curve = calibrate_decay(500, life.lifespan)
    with pytest.raises(TraceError):
        generate_tp_trace(life, curve, jitter=0.1)
    plain = generate_tp_trace(life, curve, jitter=0.0)
    noisy = generate_tp_trace(life, curve, rng=substream(1, 2), jitter=0.1)
    for d in plain.days():
        assert abs(noisy.at(d) - plain.at(d)) <= 0.1 * plain.at(d) + 1


def test_lifecycle_validation():
    with pytest.raises(TraceError):
        lc(intro=5, removal=5)
    with pytest.raises(TraceError):
        lc(updates=(10,))
    with pytest.raises(TraceError):
        lc(updates=(20, 20))


def test_overlap_distribution_validation():
    with pytest.raises(TraceError):
        OverlapDistribution({1: 1.0})
    with pytest.raises(TraceError):
        OverlapDistribution({0: 0.5, 1: 0.4})
    assert OverlapDistribution().max_k == 3


def test_no_overlap_and_truncation():
    rng = substream(0)
    origins = rng.integers(0, 5, 1000)
    flags, width = assign_overlap(origins, 5, OverlapDistribution.none(), rng)
    assert (width == 1).all()
    flags, width = assign_overlap(np.zeros(100, int), 1, OverlapDistribution({0: 0.0, 3: 1.0}), rng)
    assert (width == 1).all()


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_overlap_sets_contain_origin_and_are_distinct(seed, n_active):
    rng = substream(seed)
    origins = rng.integers(0, n_active, 300)
    flags, width = assign_overlap(origins, n_active, OverlapDistribution(), rng)
    for o, s, row, w in zip(origins, overlap_sets(flags, width), flags, width):
        assert o in s and len(s) == w
        assert all(0 <= x < n_active for x in row[:w])


def test_overlap_frequencies_follow_table():
    rng = substream(9)
    n = 200_000
    _, width = assign_overlap(np.zeros(n, int), 50, OverlapDistribution(), rng)
    freq = np.bincount(width - 1, minlength=4) / n
    np.testing.assert_allclose(freq, [0.85, 0.10, 0.04, 0.01], atol=0.005)


def test_overlap_is_deterministic_for_a_seed():
    origins = np.arange(100) % 7
    a = assign_overlap(origins, 7, OverlapDistribution(), substream(5))
    b = assign_overlap(origins, 7, OverlapDistribution(), substream(5))
    assert (a[0] == b[0]).all() and (a[1] == b[1]).all()


def test_filter_schedule_examples():
    six = SignatureLifecycle("six", 0, 6)
    seven = SignatureLifecycle("seven", 0, 7)
    late = SignatureLifecycle("late", 10, 200)
    rep = filter_schedule([six, seven, late], window=(0, 100))
    assert rep.kept == (seven,)
    assert (rep.dropped_short, rep.dropped_window) == (1, 1)


def test_signature_traces_depend_only_on_seed_and_id():
    a = SignatureLifecycle("alpha", 0, 60, update_days=(30,))
    b = SignatureLifecycle("beta", 5, 50)
    t1 = generate_signature_traces(a, 0.1, 7)
    t2 = generate_signature_traces(a, 0.1, 7)
    assert (t1.tp.counts == t2.tp.counts).all()
    assert not (generate_signature_traces(a, 0.1, 8).tp.counts == t1.tp.counts).all()
    # unaffected by other signatures or by theta
    generate_signature_traces(b, 0.1, 7)
    assert (generate_signature_traces(a, 0.25, 7).tp.counts == t1.tp.counts).all()
    assert t1.curve.gamma == pytest.approx(math.log(500) / math.log(60))
    assert generate_signature_traces(a, 0.1, 7, TraceParams(jitter=0.0)).tp.at(-3) == 500
