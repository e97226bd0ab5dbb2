import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraqdim import dims, markov
from fraqdim.errors import CurveTooShort, InsufficientResolvedRadii, SSCNotCertified
from fraqdim.ifs import Affine, RecurrentIFS, Similarity

from conftest import similarity_system

mpmath.mp.dps = 40


def alpha_oracle(P, p, s_low, s_high):
    """Both bounds in 40-digit arithmetic from the raw inputs."""
    h = mpmath.fsum(mpmath.mpf(p[i]) * mpmath.mpf(P[i][j]) * mpmath.log(mpmath.mpf(P[i][j]))
                    for i in range(len(p)) for j in range(len(p)) if P[i][j] > 0)
    lo = mpmath.fsum(mpmath.mpf(p[i]) * mpmath.log(mpmath.mpf(s_low[i])) for i in range(len(p)))
    hi = mpmath.fsum(mpmath.mpf(p[i]) * mpmath.log(mpmath.mpf(s_high[i])) for i in range(len(p)))
    return float(h / lo), float(h / hi)


def test_cantor_closed_form(cantor):
    rep = dims.alpha_bounds(cantor)
    assert rep.alpha1 == pytest.approx(math.log(2) / math.log(3), abs=1e-14)
    assert rep.alpha2 == pytest.approx(rep.alpha1, abs=1e-15)
    assert dims.special_case_check(cantor)


def test_twostate_values(twostate):
    rep = dims.alpha_bounds(twostate)
    a1, a2 = alpha_oracle([[0, 1], [0.5, 0.5]], [1 / 3, 2 / 3], [0.25, 1 / 3], [0.25, 1 / 3])
    assert rep.alpha1 == pytest.approx(a1, abs=1e-14)
    assert rep.markov_entropy == pytest.approx(-0.4620981, abs=1e-7)
    assert rep.lyap_low == pytest.approx(-1.1945063, abs=1e-7)
    assert rep.alpha1 == pytest.approx(0.386853, abs=1e-6)
    assert not dims.special_case_check(twostate)


def test_affine_bounds_strictly_ordered(affine2d):
    rep = dims.alpha_bounds(affine2d)
    P = affine2d.P.tolist()
    a1, a2 = alpha_oracle(P, affine2d.p.tolist(), affine2d.s_low.tolist(), affine2d.s_high.tolist())
    assert (rep.alpha1, rep.alpha2) == pytest.approx((a1, a2), abs=1e-13)
    assert rep.alpha1 < rep.alpha2
    assert rep.alpha1 == pytest.approx(0.86230, abs=1e-5)
    assert rep.alpha2 == pytest.approx(1.13304, abs=1e-5)


def test_special_case_with_row_independent_chain():
    p = np.array([0.2, 0.3, 0.5])
    P = np.tile(p, (3, 1))
    ifs = similarity_system([0.2] * 3, [0.0, 0.4, 0.8], P)
    assert dims.special_case_check(ifs)
    # sum_i sum_j p_i p_j log p_j equals sum_j p_j log p_j
    lhs = sum(p[i] * p[j] * math.log(p[j]) for i in range(3) for j in range(3))
    assert lhs == pytest.approx(float(np.dot(p, np.log(p))), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 5))
def test_bounds_ordered_and_equal_for_similarities(seed, n):
    rng = np.random.default_rng(seed)
    P = markov.random_irreducible(n, rng, density=0.8)
    ratios = rng.uniform(0.05, 0.9 / n, size=n)
    lo = np.minimum(ratios, rng.uniform(0.05, 0.9 / n, size=n))
    maps_aff = [Affine(np.diag([r, l]), np.array([k / n, 0.0])) for k, (r, l) in enumerate(zip(ratios, lo))]
    maps_sim = [Similarity.make(r, [k / n, 0.0]) for k, r in enumerate(ratios)]
    box = ([0.0, 0.0], [1.0, 1.0])
    aff = dims.alpha_bounds(RecurrentIFS.build(maps_aff, P, box=box))
    sim = dims.alpha_bounds(RecurrentIFS.build(maps_sim, P, box=box))
    assert aff.alpha1 <= aff.alpha2 + 1e-12
    assert sim.alpha1 == pytest.approx(sim.alpha2, rel=1e-12)


def test_uniform_analytic_curve_slope():
    pairs = [(n, -math.log(2 * n) - 1) for n in (8, 16, 32, 64)]
    est = dims.estimate_quantization_dimension(pairs, window=1.0)
    assert est.d == pytest.approx(1.0, abs=0.05)
    assert all(v == pytest.approx(1.0) for v in est.increments)


@given(shift=st.floats(-50, 50))
def test_increments_ignore_constant_shift(shift):
    base = [(n, -0.7 * math.log(n) + 0.1 * math.sin(n)) for n in (2, 4, 8, 16, 32)]
    moved = [(n, e + shift) for n, e in base]
    a = dims.estimate_quantization_dimension(base)
    b = dims.estimate_quantization_dimension(moved)
    assert a.increments == pytest.approx(b.increments, rel=1e-9)
    assert a.d == pytest.approx(b.d, rel=1e-9)


def test_short_curve():
    with pytest.raises(CurveTooShort):
        dims.estimate_quantization_dimension([(1, 0.0), (2, -1.0), (4, -2.0)])


def test_local_dimension_uniform_interior(uniform):
    est = dims.estimate_local_dimension([0.37], 2.0 ** -np.arange(4, 11), uniform)
    assert est.slope == pytest.approx(1.0, abs=0.05)


def test_local_dimension_cantor_sampled(cantor):
    pts = dims.sample_support(cantor, 5, seed=2)
    r = 3.0 ** -np.arange(3, 10)
    for x in pts:
        assert 0.57 <= dims.estimate_local_dimension(x, r, cantor).slope <= 0.70


def test_local_dimension_off_support(cantor):
    with pytest.raises(InsufficientResolvedRadii):
        dims.estimate_local_dimension([0.5], 3.0 ** -np.arange(3, 10), cantor)


def test_local_fraction_with_infinite_band(cantor):
    table = dims.local_dimension_table(cantor, 10, seed=1, r_grid=3.0 ** -np.arange(3, 10))
    assert dims.validate_theorem1(cantor, 10, 1, band=math.inf, table=table) == 1.0


def test_quant_dim_sandwich_on_analytic_uniform_curve(uniform):
    pairs = [(n, -math.log(2 * n) - 1) for n in (4, 8, 16, 32, 64)]
    # uniform has no certified strong separation, only the open set one
    with pytest.raises(SSCNotCertified):
        dims.validate_theorem2(uniform, pairs, 0.05)
    assert dims.validate_theorem2(uniform, pairs, 0.05, require_ssc=False)


def test_report_json_keys(twostate):
    keys = set(dims.alpha_bounds(twostate).to_json())
    assert keys == {"alpha1", "alpha2", "markovEntropy", "lyapLow", "lyapHigh", "dEstimate", "dStderr",
                    "localDimStats"}
