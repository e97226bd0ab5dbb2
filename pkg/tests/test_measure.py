import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraqdim import measure, symbolic
from fraqdim.errors import DepthCapReached


def cantor_cdf(x, depth=45):
    """Cantor function by ternary digits."""
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    total, scale = 0.0, 0.5
    for _ in range(depth):
        x *= 3
        digit = int(x)
        x -= digit
        if digit == 1:
            return total + scale
        total += scale * (digit // 2)
        scale /= 2
    return total


def cantor_ball(x, r):
    return cantor_cdf(x + r) - cantor_cdf(x - r)


def test_discretize_cantor_coarse(cantor):
    g = symbolic.antichain_by_probability(0.3, cantor)
    d = measure.discretize(g, cantor)
    assert len(d) == 4
    assert np.allclose(d.weights, 0.25)
    assert np.all(d.radii <= cantor.radii.max() / 3 + 1e-12)
    # each representative is inside its level-one interval
    for w, x in zip(d.words, d.points[:, 0]):
        left = w[0] * 2 / 3
        assert left <= x <= left + 1 / 3


def test_discretize_additive_under_refinement(affine2d):
    coarse = measure.discretize(symbolic.antichain_by_probability(0.1, affine2d), affine2d)
    fine = measure.discretize(symbolic.antichain_by_probability(0.01, affine2d), affine2d)
    for w, wt in zip(coarse.words, coarse.weights):
        kids = [fw for fw, _ in zip(fine.words, fine.weights) if fw[:len(w)] == w]
        total = sum(fwt for fw, fwt in zip(fine.words, fine.weights) if fw[:len(w)] == w)
        assert kids
        assert total == pytest.approx(wt, rel=1e-12)


def test_discretize_component_is_conditional(twostate):
    g = symbolic.antichain_by_probability(0.05, twostate)
    for i in range(2):
        d = measure.discretize(g, twostate, component=i)
        assert all(w[0] == i for w in d.words)
        assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_representatives_lie_near_their_cylinder(affine2d):
    g = symbolic.antichain_by_probability(0.02, affine2d)
    d = measure.discretize(g, affine2d)
    att = affine2d.attractor
    for w, x, r in zip(d.words, d.points, d.radii):
        cloud = att.clouds[w[-1]]
        img = cloud
        for a in reversed(w[:-1]):
            img = affine2d.maps[a].apply(img)
        assert np.max(np.linalg.norm(img - x, axis=1)) <= r + 1e-12


def test_ball_measure_cantor_examples(cantor):
    enc = measure.ball_measure([0.0], 0.4, cantor)
    assert enc.lo <= 0.5 <= enc.hi
    assert enc.width <= 1e-3
    enc = measure.ball_measure([0.5], 2.0, cantor)
    assert enc.lo == enc.hi == 1.0
    enc = measure.ball_measure([0.5], 0.1, cantor)
    assert enc.lo == enc.hi == 0.0


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-0.1, 1.1), r=st.floats(1e-3, 0.6))
def test_ball_measure_encloses_cantor_function(x, r):
    ifs = _cantor()
    enc = measure.ball_measure([x], r, ifs, tol_gap=1e-4)
    truth = cantor_ball(x, r)
    assert enc.lo - 1e-12 <= truth <= enc.hi + 1e-12
    assert enc.width <= 1e-4 or enc.depth_cap_reached


_CACHE = {}


def _cantor():
    from fraqdim import config

    if "c" not in _CACHE:
        _CACHE["c"] = config.load("cantor.json").build_system()
    return _CACHE["c"]


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 1.0), r=st.floats(1e-3, 0.5))
def test_ball_measure_uniform_exact(x, r):
    from fraqdim import config

    if "u" not in _CACHE:
        _CACHE["u"] = config.load("uniform.json").build_system()
    enc = measure.ball_measure([x], r, _CACHE["u"], tol_gap=1e-6)
    truth = min(x + r, 1.0) - max(x - r, 0.0)
    assert enc.lo - 1e-12 <= truth <= enc.hi + 1e-12


def test_ball_measure_monotone_in_radius(affine2d):
    x = affine2d.anchors[1]
    prev_lo = 0.0
    for r in np.geomspace(1e-3, 1.5, 12):
        enc = measure.ball_measure(x, r, affine2d, tol_gap=1e-3)
        # enclosures of nested balls must overlap in the right order
        assert enc.hi >= prev_lo - 1e-12
        prev_lo = max(prev_lo, enc.lo)


def test_ball_measure_tightens_with_tolerance(twostate):
    x = twostate.anchors[1]
    wide = measure.ball_measure(x, 0.05, twostate, tol_gap=1e-2)
    tight = measure.ball_measure(x, 0.05, twostate, tol_gap=1e-5)
    assert tight.width <= 1e-5
    assert wide.lo - 1e-12 <= tight.lo and tight.hi <= wide.hi + 1e-12


def test_depth_cap_flag_and_strict(cantor):
    # a ball with boundary on the support cannot be resolved in a few letters
    enc = measure.ball_measure([0.0], 1 / 3, cantor, tol_gap=0.0, depth_cap=4)
    assert enc.depth_cap_reached
    assert enc.lo - 1e-12 <= 0.5 <= enc.hi + 1e-12
    with pytest.raises(DepthCapReached) as exc:
        measure.ball_measure([0.0], 1 / 3, cantor, tol_gap=0.0, depth_cap=4, strict=True)
    assert exc.value.enclosure.hi >= 0.5 - 1e-12


def test_frostman_exponents(cantor, twostate, affine2d):
    assert measure.frostman_exponent(cantor) == pytest.approx(math.log(2) / math.log(3))
    assert measure.frostman_exponent(affine2d) == pytest.approx(math.log(0.5) / math.log(0.3))
    # a one-entry row makes the plain formula vanish; two-step paths give (1/2)/(1/4)^2
    assert measure.frostman_exponent(twostate) == pytest.approx(math.log(0.5) / (2 * math.log(0.25)))


def test_frostman_check_cantor(cantor):
    eps = 3.0 ** -np.arange(2, 9)
    rep = measure.frostman_check(cantor, 24, eps, seed=4)
    assert rep.trend_slope >= -0.05
    # mu(B(x, e)) <= 2 * (3e)^eta on the Cantor set
    assert rep.max_ratio <= 2 * 3 ** rep.eta + 1e-9


def test_frostman_outside_support_is_zero(cantor):
    rep = measure.frostman_check(cantor, 1, [1e-3, 1e-2], seed=0, points=np.array([[0.5]]))
    assert rep.max_ratio == 0.0
