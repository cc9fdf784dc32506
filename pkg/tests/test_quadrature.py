"""Quadrature rules: frozen examples, exactness, one-sided error behavior.

Expected values for the non-trivial examples are recomputed here from first
principles (moment integrals in extended precision, hand-solved exactness
systems) rather than copied from the implementation.
"""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from renyidi.quadrature import (
    JacobiWeight,
    QuadratureError,
    QuadratureRule,
    RuleKind,
    approach_weight,
    check_exactness,
    gauss_rule,
    jacobi_recurrence,
    radau_rule,
    validate_alpha,
    weight_moment,
)


def mp_moment(beta0: float, beta1: float, degree: int) -> float:
    """Independent moment oracle: adaptive tanh-sinh integration at 40 digits."""
    with mpmath.workdps(40):
        val = mpmath.quad(
            lambda t: t ** (beta0 + degree) * (1 - t) ** beta1, [0, 1]
        )
        return float(val)


def mp_integral(beta0: float, beta1: float, f) -> float:
    with mpmath.workdps(40):
        return float(mpmath.quad(lambda t: f(t) * t**beta0 * (1 - t) ** beta1, [0, 1]))


class TestRecurrence:
    def test_uniform_centroid(self):
        (a0, b0) = jacobi_recurrence(JacobiWeight(0, 0), 1)[0]
        assert a0 == pytest.approx(0.5, abs=1e-15)
        assert b0 == pytest.approx(1.0, abs=1e-15)

    def test_uniform_variance(self):
        # b_1 is the variance of the uniform weight; recompute from moments.
        mu0, mu1, mu2 = (mp_moment(0, 0, d) for d in range(3))
        expected = mu2 / mu0 - (mu1 / mu0) ** 2
        b1 = jacobi_recurrence(JacobiWeight(0, 0), 2)[1][1]
        assert b1 == pytest.approx(expected, abs=1e-14)
        assert b1 == pytest.approx(1.0 / 12.0, abs=1e-14)

    def test_sqrt_singular_centroid(self):
        mu0 = mp_moment(-0.5, 0, 0)
        mu1 = mp_moment(-0.5, 0, 1)
        a0 = jacobi_recurrence(JacobiWeight(-0.5, 0), 1)[0][0]
        assert a0 == pytest.approx(mu1 / mu0, abs=1e-13)
        assert a0 == pytest.approx(1.0 / 3.0, abs=1e-13)

    def test_positive_offdiagonals(self):
        for w in (JacobiWeight(0, 0), JacobiWeight(-0.9, 0.5), JacobiWeight(0.5, -0.5)):
            for j, (_, b) in enumerate(jacobi_recurrence(w, 8)):
                if j >= 1:
                    assert b > 0

    def test_invalid_weight_rejected(self):
        with pytest.raises(QuadratureError):
            JacobiWeight(-1.0, 0)
        with pytest.raises(QuadratureError):
            JacobiWeight(0, -1.5)


class TestGaussRule:
    def test_uniform_one_point(self):
        rule = gauss_rule(JacobiWeight(0, 0), 1)
        assert rule.nodes == (0.5,)
        assert rule.weights[0] == pytest.approx(1.0, abs=1e-14)

    def test_singular_one_point(self):
        # One-point rule from the first two moments: node mu1/mu0, weight mu0.
        mu0 = mp_moment(-0.5, 0, 0)
        mu1 = mp_moment(-0.5, 0, 1)
        rule = gauss_rule(JacobiWeight(-0.5, 0), 1)
        assert rule.nodes[0] == pytest.approx(mu1 / mu0, abs=1e-13)
        assert rule.weights[0] == pytest.approx(mu0, abs=1e-13)

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9, 0.999])
    @pytest.mark.parametrize("m", [1, 4, 12])
    def test_weight_sum_is_inverse_alpha(self, alpha, m):
        rule = gauss_rule(JacobiWeight(alpha - 1, 0), m)
        assert sum(rule.weights) == pytest.approx(1.0 / alpha, rel=1e-12)


class TestRadauRule:
    def test_uniform_two_point_at_zero(self):
        # Exactness system for degrees 0..2 with one node pinned at 0:
        #   w0 + w1 = mu0,  w1 x = mu1,  w1 x^2 = mu2  =>  x = mu2/mu1.
        mu0, mu1, mu2 = (mp_moment(0, 0, d) for d in range(3))
        x = mu2 / mu1
        w1 = mu1 / x
        rule = radau_rule(JacobiWeight(0, 0), 2, 0)
        assert rule.nodes[0] == 0.0
        assert rule.nodes[1] == pytest.approx(x, abs=1e-14)
        assert rule.weights == pytest.approx((mu0 - w1, w1), abs=1e-14)
        assert rule.nodes[1] == pytest.approx(2.0 / 3.0, abs=1e-14)

    def test_half_order_one_point_at_one(self):
        # m=1 pinned at 1 must carry the whole mass of t^{-1/2}(1-t)^{1/2}.
        rule = radau_rule(JacobiWeight(-0.5, 0.5), 1, 1)
        assert rule.nodes == (1.0,)
        assert rule.weights[0] == pytest.approx(mp_moment(-0.5, 0.5, 0), abs=1e-13)
        assert rule.weights[0] == pytest.approx(math.pi / 2, abs=1e-13)

    @pytest.mark.parametrize("endpoint", [0, 1])
    def test_pinned_node_exact(self, endpoint):
        rule = radau_rule(JacobiWeight(-0.3, 0.2), 5, endpoint)
        pinned = rule.nodes[0] if endpoint == 0 else rule.nodes[-1]
        assert pinned == float(endpoint)
        assert all(w > 0 for w in rule.weights)

    @pytest.mark.parametrize(
        "weight,endpoint",
        [
            (JacobiWeight(-0.5, 0), 0),
            (JacobiWeight(-0.5, 0.5), 1),
            (JacobiWeight(0.5, -0.5), 1),
        ],
    )
    def test_fixed_node_weight_nonincreasing(self, weight, endpoint):
        idx = 0 if endpoint == 0 else -1
        fixed = [radau_rule(weight, m, endpoint).weights[idx] for m in range(2, 13)]
        for lo, hi in zip(fixed[1:], fixed[:-1]):
            assert lo <= hi + 1e-12

    def test_bad_endpoint_rejected(self):
        with pytest.raises(QuadratureError):
            radau_rule(JacobiWeight(0, 0), 3, 2)


class TestExactness:
    def test_gauss_exact_to_2m_minus_1(self):
        assert check_exactness(gauss_rule(JacobiWeight(0, 0), 3), 5) < 1e-12

    def test_radau_exact_to_2m_minus_2(self):
        assert check_exactness(radau_rule(JacobiWeight(0, 0), 3, 0), 4) < 1e-12

    def test_gauss_not_exact_beyond(self):
        rule = gauss_rule(JacobiWeight(0, 0), 3)
        err = abs(rule.apply(lambda t: t**6) - mp_moment(0, 0, 6))
        assert err > 1e-6
        assert check_exactness(rule, 6) == pytest.approx(err, rel=1e-9)

    @pytest.mark.parametrize("beta0", [-0.9, -0.5, 0.0, 0.5])
    @pytest.mark.parametrize("m", [1, 2, 5, 9, 12])
    def test_exactness_relative_across_orders(self, beta0, m):
        weight = JacobiWeight(beta0, 0)
        rule = gauss_rule(weight, m)
        nodes = np.asarray(rule.nodes)
        for d in range(2 * m):
            mu = weight_moment(weight, d)
            err = abs(float(np.dot(rule.weights, nodes**d)) - mu)
            assert err <= 1e-10 * max(1.0, mu)


@st.composite
def jacobi_weights(draw):
    beta0 = draw(st.floats(min_value=-0.999, max_value=2.0))
    beta1 = draw(st.floats(min_value=-0.999, max_value=2.0))
    return JacobiWeight(beta0, beta1)


class TestRuleInvariants:
    @settings(max_examples=60, deadline=None)
    @given(
        weight=jacobi_weights(),
        m=st.integers(min_value=1, max_value=12),
        kind=st.sampled_from(list(RuleKind)),
    )
    def test_constructed_rules_satisfy_invariants(self, weight, m, kind):
        if kind is RuleKind.GAUSS:
            rule = gauss_rule(weight, m)
        else:
            rule = radau_rule(weight, m, 0 if kind is RuleKind.RADAU_AT_0 else 1)
        nodes = np.asarray(rule.nodes)
        assert np.all(np.diff(nodes) > 0)
        assert nodes[0] >= 0.0 and nodes[-1] <= 1.0
        assert all(w > 0 for w in rule.weights)
        mass = weight.mass
        assert abs(sum(rule.weights) - mass) <= 1e-10 * max(1.0, mass)

    def test_tampered_rule_rejected(self):
        good = gauss_rule(JacobiWeight(0, 0), 2)
        with pytest.raises(QuadratureError):
            QuadratureRule(good.weight, 2, good.kind, (good.nodes[1], good.nodes[0]), good.weights)
        with pytest.raises(QuadratureError):
            QuadratureRule(good.weight, 2, good.kind, good.nodes, (good.weights[0], -1.0))


class TestOneSidedBehavior:
    @pytest.mark.parametrize("c", [0.01, 0.1, 1.0, 10.0])
    def test_gauss_below_radau0_above(self, c):
        # f(t) = c/(c+t) has nonnegative even and nonpositive odd derivatives,
        # so Gauss underestimates and the 0-pinned Radau rule overestimates.
        weight = JacobiWeight(-0.5, 0)
        f = lambda t: c / (c + t)
        truth = mp_integral(weight.beta0, weight.beta1, f)
        for m in range(1, 13):
            lower = gauss_rule(weight, m).apply(f)
            upper = radau_rule(weight, m, 0).apply(f)
            assert lower <= truth + 1e-12
            assert upper >= truth - 1e-12

    @pytest.mark.parametrize("alpha", [0.5, 1.5])
    @pytest.mark.parametrize("x", [0.1, 0.5, 2.0, 10.0])
    def test_two_endpoint_weight_bracketing(self, alpha, x):
        # For the two-endpoint weight, Radau-at-0 upper-bounds the integral of
        # (x-1)/(t(x-1)+1) and Radau-at-1 lower-bounds it.
        weight = approach_weight(alpha, "2")
        f = lambda t: (x - 1.0) / (t * (x - 1.0) + 1.0)
        truth = mp_integral(weight.beta0, weight.beta1, f)
        for m in (2, 4, 8, 12):
            hi = radau_rule(weight, m, 0).apply(f)
            lo = radau_rule(weight, m, 1).apply(f)
            assert lo - 1e-10 <= truth <= hi + 1e-10


class TestAlphaPlumbing:
    def test_validate_alpha_ranges(self):
        assert validate_alpha(0.5) == 0.5
        assert validate_alpha(1.999) == 1.999
        assert validate_alpha(1.0003) == 1.0003
        for bad in (0.0, 1.0, 2.0, 1.0 + 1e-9, 1.0 - 1e-9, -0.3, 2.5):
            with pytest.raises(QuadratureError):
                validate_alpha(bad)

    def test_approach_weights(self):
        w = approach_weight(0.5, "1a")
        assert (w.beta0, w.beta1) == (-0.5, 0.0)
        w = approach_weight(1.5, "1b")
        assert (w.beta0, w.beta1) == (-0.5, 0.0)
        w = approach_weight(0.25, "2")
        assert (w.beta0, w.beta1) == (-0.75, 0.75)
        with pytest.raises(QuadratureError):
            approach_weight(1.5, "1a")
        with pytest.raises(QuadratureError):
            approach_weight(0.5, "1b")
        with pytest.raises(QuadratureError):
            approach_weight(0.5, "zz")

    def test_exponent_floor_is_per_approach(self):
        # Single-endpoint families hit the -0.999 exponent floor near the
        # range ends; the two-endpoint family's exponents are +-(alpha-1)
        # and stay tiny near alpha = 1, so orders there remain usable.
        for bad, approach in ((0.0005, "1a"), (1.0005, "1b"), (1.9995, "2")):
            with pytest.raises(QuadratureError):
                approach_weight(bad, approach)
        w = approach_weight(1.0005, "2")
        assert (w.beta0, w.beta1) == pytest.approx((0.0005, -0.0005), abs=1e-15)

    def test_near_one_two_endpoint_rule_stays_exact(self):
        alpha = 1.0003
        weight = approach_weight(alpha, "2")
        for m in (2, 6, 12):
            rule = radau_rule(weight, m, endpoint=1)
            assert check_exactness(rule, 2 * m - 2) < 1e-10
        gauss = gauss_rule(weight, 12)
        assert check_exactness(gauss, 2 * 12 - 1) < 1e-10
        # Total mass of t^{alpha-1} over the companion normalization:
        # sum of Gauss weights for t^{alpha-1}(1-t)^{1-alpha} equals B(alpha, 2-alpha).
        assert sum(gauss.weights) == pytest.approx(weight.mass, rel=1e-12)
