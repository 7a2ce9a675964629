import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from _oracles import nrmsd_loop
from windowabc.exceptions import DegenerateDenominatorError
from windowabc.metrics import (
    daily_from_cumulative,
    nrmsd_batch,
    nrmsd_breakdown,
    nrmsd_component,
    nrmsd_total,
    ratio_stats,
    relative_error_by_day,
    weighted_quantile,
)


def test_hand_examples():
    assert nrmsd_component([0, 10], [5, 5]) == pytest.approx(0.5, abs=1e-12)
    assert nrmsd_component([0, 10], [0, 20]) == pytest.approx(math.sqrt(50) / 10, abs=1e-12)
    assert nrmsd_total([0.5, 0.7071]) == pytest.approx(1.2071, abs=1e-12)
    assert nrmsd_total([0.0, 0.0]) == 0.0
    assert nrmsd_total([0.3]) == 0.3


def test_perfect_fit():
    y = np.array([1.0, 4.0, 9.0])
    assert nrmsd_component(y, y) == 0.0


def test_constant_channel_falls_back_to_rmsd():
    out = nrmsd_breakdown([[3, 3, 3], [0, 10, 20]], [[4, 4, 4], [0, 10, 20]])
    assert out.degenerate == (True, False)
    assert out.per_component == (1.0, 0.0)
    assert out.total == 1.0 and out.any_degenerate


@pytest.mark.parametrize("y,yh", [([1.0], [1.0]), ([1, 2], [1, 2, 3]), ([1, np.nan], [1, 2])])
def test_bad_inputs(y, yh):
    with pytest.raises(ValueError):
        nrmsd_component(y, yh)


def test_matches_loop_oracle_on_random_pairs(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        y = rng.normal(0, 1, n).cumsum() * rng.uniform(0.1, 1e4)
        yh = y + rng.normal(0, 1, n) * rng.uniform(0.01, 1e3)
        assume_range = y.max() - y.min()
        if assume_range == 0:
            continue
        a, b = nrmsd_component(y, yh), nrmsd_loop(y, yh)
        assert abs(a - b) <= 1e-12 * max(1.0, b)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30),
       st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_affine_invariance(pairs, scale, shift):
    y = np.array([p[0] for p in pairs])
    yh = np.array([p[1] for p in pairs])
    assume(np.ptp(y) > 1e-3)
    a = nrmsd_component(y, yh)
    b = nrmsd_component(scale * y + shift, scale * yh + shift)
    assert b == pytest.approx(a, rel=1e-8, abs=1e-12)


@given(st.lists(finite, min_size=2, max_size=30), st.integers(0, 29), st.floats(1e-3, 10))
def test_zero_iff_equal(ys, k, bump):
    y = np.array(ys)
    assume(np.ptp(y) > 0)
    assert nrmsd_component(y, y) == 0
    yh = y.copy()
    yh[k % len(y)] += bump
    assert nrmsd_component(y, yh) > 0


@given(st.lists(st.floats(0, 10), min_size=1, max_size=8), st.randoms())
def test_total_permutation_invariant(comps, rnd):
    shuffled = list(comps)
    rnd.shuffle(shuffled)
    assert nrmsd_total(shuffled) == pytest.approx(nrmsd_total(comps), rel=1e-12, abs=1e-15)


def test_batch_agrees_with_component(rng):
    y = rng.uniform(0, 100, 20).cumsum()
    rows = y + rng.normal(0, 5, (7, 20))
    rows[3, 4] = np.nan
    out = nrmsd_batch(y, rows)
    assert out[3] == np.inf
    for k in (0, 1, 2, 4, 5, 6):
        assert out[k] == pytest.approx(nrmsd_component(y, rows[k]), rel=1e-14)


def test_relative_error():
    err, undefined = relative_error_by_day([110.0], [100.0])
    assert err == pytest.approx([0.1])
    err, undefined = relative_error_by_day([5.0, 2.0, 3.0], [5.0, 0.0, 4.0])
    assert undefined.tolist() == [False, True, False]
    assert err[0] == 0 and np.isnan(err[1]) and err[2] == pytest.approx(-0.25)


def test_daily_from_cumulative():
    assert daily_from_cumulative([12, 15, 15], 10).tolist() == [2, 3, 0]


def test_ratio_stats_examples():
    same = ratio_stats([0.2, 0.3], [0.2, 0.3])
    assert same.ratios.tolist() == [1, 1] and same.fraction_above_one == 0
    out = ratio_stats([0.2, 0.3], [0.1, 0.3])
    assert out.ratios == pytest.approx([2, 1])
    assert out.fraction_above_one == 0.5
    assert out.quartiles == pytest.approx((1.25, 1.5, 1.75))


def test_ratio_stats_zero_denominator():
    with pytest.raises(DegenerateDenominatorError):
        ratio_stats([0.1], [0.0])


def test_weighted_quantile_equal_weights_is_midpoint_rule():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.ones(4)
    assert weighted_quantile(v, w, 0.5) == pytest.approx([2.5])
    assert weighted_quantile(v, w, [0.0, 1.0]).tolist() == [1.0, 4.0]


@given(st.lists(st.tuples(finite, st.floats(0.01, 10)), min_size=1, max_size=30))
def test_weighted_quantile_monotone_and_bounded(pairs):
    v = np.array([p[0] for p in pairs])
    w = np.array([p[1] for p in pairs])
    q = weighted_quantile(v, w, [0.05, 0.5, 0.95])
    assert np.all(np.diff(q) >= 0)
    assert v.min() <= q[0] and q[-1] <= v.max()
