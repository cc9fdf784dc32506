"""Tests for the single-round bound programs and finite-size rate assembly.

Independent checks: statistic functionals are evaluated against explicit
tensor-product strategies, solved minima are compared with the objective at
explicit feasible points (a minimum can never exceed them), and the rate
bookkeeping is pinned to values computed from its closed forms.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from renyidi.keyrate import (
    ProtocolConfig,
    Variant,
    build_full_divergence_program,
    build_perp_conditioned_program,
    build_program_kernel,
    build_split_order_program,
    chsh_entropy_floor,
    diqkd_penalty,
    effective_order,
    finite_size_rate,
    h_vonneumann,
    moment_point,
    objective_at_point,
    optimize_alpha,
    solve_single_round,
    validate_full_divergence_structure,
)
from renyidi.conic import solve
from renyidi.ncalgebra import evaluate_strategy, measurement_symbol
from renyidi.scenario import (
    PERP,
    BellScenario,
    extended_chsh_scenario,
)
from renyidi.scenario import test_statistic_distribution as statistic_distribution

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
OMEGA_TSIRELSON = (2.0 + math.sqrt(2.0)) / 4.0


def projector_plus(obs):
    return (np.eye(obs.shape[0]) + obs) / 2


def kron3(a, b, e):
    return np.kron(np.kron(a, b), e)


def ideal_assignment(kernel):
    """Tsirelson strategy on the extended scenario; auxiliaries set to zero."""
    ia, ib, ie = np.eye(2), np.eye(2), np.eye(2)
    h_plus = (PAULI_X + PAULI_Z) / math.sqrt(2.0)
    h_minus = (PAULI_Z - PAULI_X) / math.sqrt(2.0)
    assignment = {
        measurement_symbol("A", 0, 0): kron3(projector_plus(PAULI_Z), ib, ie),
        measurement_symbol("A", 1, 0): kron3(projector_plus(PAULI_X), ib, ie),
        measurement_symbol("B", 0, 0): kron3(ia, projector_plus(h_plus), ie),
        measurement_symbol("B", 1, 0): kron3(ia, projector_plus(h_minus), ie),
        measurement_symbol("B", 2, 0): kron3(ia, projector_plus(PAULI_Z), ie),
    }
    zero = np.zeros((8, 8), dtype=complex)
    for sym in kernel.z_symbols.values():
        assignment[sym] = zero
    return assignment


def ideal_state():
    phi = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2.0)
    rho_ab = np.outer(phi, phi.conj())
    rho_e = np.diag([1.0, 0.0]).astype(complex)
    return np.kron(rho_ab, rho_e)


class TestConfigValidation:
    def test_rejects_bad_fields(self):
        good = dict(n=1e9, gamma=0.01)
        for bad in (
            dict(n=0.5),
            dict(gamma=0.0),
            dict(gamma=1.0),
            dict(epsilon=0.0),
            dict(eps_com=1.5),
            dict(p_omega_floor=0.0),
            dict(omega_hon=1.0),
            dict(m=0),
            dict(npa_level=0),
            dict(alpha=1.0),
            dict(alpha=2.0),
            dict(alpha_interval=(1.5, 1.2)),
            dict(alpha_grid_size=1),
            dict(delta_tol=0.0),
        ):
            with pytest.raises(ValueError):
                ProtocolConfig(**{**good, **bad})

    def test_builders_require_orders(self):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, m=1)
        with pytest.raises(ValueError, match="alpha"):
            build_perp_conditioned_program(cfg)
        with pytest.raises(ValueError, match="order"):
            build_split_order_program(cfg)
        with pytest.raises(ValueError, match="must lie in"):
            build_split_order_program(cfg, entropy_order=2.3, divergence_order=1.2)


class TestStatisticFunctionals:
    def test_honest_strategy_statistics_are_exact(self, m1_kernel):
        y = evaluate_strategy(
            m1_kernel.problem, ideal_state(), ideal_assignment(m1_kernel)
        )
        y_real = y[: m1_kernel.problem.n_complex]
        expected = statistic_distribution(OMEGA_TSIRELSON, 0.01)
        for label, vec in m1_kernel.f_vectors.items():
            assert float(vec @ y_real) == pytest.approx(expected[label], abs=1e-12)

    def test_perp_functional_is_constant(self, m1_kernel):
        vec = m1_kernel.f_vectors[PERP]
        assert vec[0] == pytest.approx(0.99)
        assert np.all(vec[1:] == 0.0)


class TestSolvedPrograms:
    def test_minimum_below_honest_point(self, m1_kernel):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, m=1, alpha=1.05)
        srp = build_perp_conditioned_program(cfg, kernel=m1_kernel)
        h, sol = solve_single_round(srp, cfg)
        y = evaluate_strategy(
            m1_kernel.problem, ideal_state(), ideal_assignment(m1_kernel)
        )
        q_hon = cfg.honest_statistics()
        at_honest = objective_at_point(srp, y[: m1_kernel.problem.n_complex], q_hon)
        assert h <= at_honest + 1e-9

    def test_moment_point_is_normalized(self, m1_kernel):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, m=1, alpha=1.05)
        srp = build_perp_conditioned_program(cfg, kernel=m1_kernel)
        _h, sol = solve_single_round(srp, cfg)
        y = moment_point(srp, sol)
        assert y.shape == (m1_kernel.problem.n_complex,)
        assert y[0] == pytest.approx(1.0, abs=1e-7)

    def test_split_order_matches_perp_structure(self, m1_kernel):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, m=1, alpha=1.1)
        split = build_split_order_program(cfg, kernel=m1_kernel)
        perp = build_perp_conditioned_program(cfg, kernel=m1_kernel)
        assert split.ent_slack is not None and perp.ent_slack is not None
        # same moment program, different objective weights
        assert split.d_coeff == pytest.approx(1.1 / (0.1 * math.log(2.0)), rel=1e-12)
        delta = cfg.resolved_delta_tol()
        expected_weight = 1.0 - 0.01 - delta
        assert perp.ent_coeff * (1.0 - 1.1) * math.log(2.0) == pytest.approx(
            expected_weight, rel=1e-12
        )


class TestRateAssembly:
    def test_effective_order_closed_form(self):
        # equal split orders alpha give 2 alpha / (alpha + 1)
        for alpha in (1.01, 1.2, 1.7):
            assert effective_order(alpha, alpha) == pytest.approx(
                2.0 * alpha / (alpha + 1.0), rel=1e-14
            )
        assert effective_order(1.2, 1.7) < min(1.2, 1.7)
        with pytest.raises(ValueError):
            effective_order(1.0, 1.5)
        with pytest.raises(ValueError):
            effective_order(1.5, 2.0)

    def test_entropy_floor_shape(self):
        assert chsh_entropy_floor(0.5) == 0.0
        assert chsh_entropy_floor(0.75) == 0.0
        assert chsh_entropy_floor(OMEGA_TSIRELSON) == pytest.approx(1.0, abs=1e-9)
        grid = np.linspace(0.74, OMEGA_TSIRELSON, 40)
        values = [chsh_entropy_floor(float(w)) for w in grid]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
        # spot value from the closed form at the honest winning probability
        s = 8.0 * 0.8 - 4.0
        p = 0.5 * (1.0 + math.sqrt(s * s / 4.0 - 1.0))
        h2 = -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)
        assert chsh_entropy_floor(0.8) == pytest.approx(1.0 - h2, rel=1e-12)

    def test_finite_size_penalties_frozen(self):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, alpha=1.01)
        rr = finite_size_rate(0.3, cfg)
        assert rr.pomega_bits == pytest.approx(1677.5736879181176, rel=1e-12)
        assert rr.smoothing_bits == pytest.approx(3421.9280948873624, rel=1e-12)
        assert rr.rate == pytest.approx(
            0.3 - (rr.pomega_bits + rr.smoothing_bits) / 1e9, rel=1e-12
        )
        assert rr.certified

    def test_split_variant_uses_effective_order(self):
        cfg = ProtocolConfig(
            n=1e9, gamma=0.01, alpha=1.2, variant=Variant.SPLIT_ORDER
        )
        rr = finite_size_rate(0.3, cfg)
        assert rr.alpha == pytest.approx(effective_order(1.2, 1.2), rel=1e-14)
        assert rr.dimension_penalty == 0.0

    def test_vn_variant_pays_dimension_penalty(self):
        cfg = ProtocolConfig(
            n=1e9, gamma=0.01, variant=Variant.VON_NEUMANN
        )
        rr = finite_size_rate(0.3, cfg, entropy_order=1.05, divergence_order=1.2)
        assert rr.dimension_penalty == pytest.approx(
            0.05 * math.log2(9.0) ** 2, rel=1e-12
        )
        assert not rr.certified

    def test_announcement_penalty(self):
        cfg = ProtocolConfig(n=1e10, gamma=0.01)
        delta = cfg.resolved_delta_tol()
        assert delta == pytest.approx(
            math.sqrt(3.0 * 0.01 / 1e10 * math.log(6.0 / 1e-3)), rel=1e-12
        )
        assert diqkd_penalty(cfg) == pytest.approx(0.01 + delta, rel=1e-12)
        assert diqkd_penalty(cfg) == pytest.approx(0.0100051, abs=1e-6)
        assert diqkd_penalty(cfg, dim_announced=4) == pytest.approx(
            2.0 * (0.01 + delta), rel=1e-12
        )

    def test_rate_breakdown_must_be_consistent(self):
        from renyidi.keyrate import RateResult

        with pytest.raises(ValueError, match="breakdown"):
            RateResult(
                variant=Variant.PERP_CONDITIONED, n=1e9, alpha=1.1,
                h=0.3, rate=0.2, pomega_bits=10.0, smoothing_bits=10.0,
            )


class TestVonNeumannHeuristic:
    def test_bound_sits_between_zero_and_honest_value(self):
        cfg = ProtocolConfig(n=1e9, gamma=0.01, omega_hon=0.8)
        value = h_vonneumann(cfg, entropy_order=1.05, divergence_order=1.2)
        assert 0.0 <= value <= chsh_entropy_floor(0.8) + 1e-9

    def test_tightens_with_smaller_tolerance(self):
        loose = ProtocolConfig(n=1e6, gamma=0.01, omega_hon=0.8)
        tight = ProtocolConfig(n=1e12, gamma=0.01, omega_hon=0.8)
        v_loose = h_vonneumann(loose, entropy_order=1.05, divergence_order=1.2)
        v_tight = h_vonneumann(tight, entropy_order=1.05, divergence_order=1.2)
        assert v_tight >= v_loose - 1e-12

    def test_order_cap_enforced(self):
        cfg = ProtocolConfig(n=1e9, gamma=0.01)
        with pytest.raises(ValueError, match="entropy order"):
            h_vonneumann(cfg, entropy_order=1.4, divergence_order=1.2)

    def test_optimizer_returns_heuristic_result(self):
        cfg = ProtocolConfig(
            n=1e9, gamma=0.01, variant=Variant.VON_NEUMANN,
            alpha_interval=(1.0001, 1.3),
        )
        rr = optimize_alpha(cfg)
        assert rr.status == "heuristic"
        assert not rr.certified
        assert rr.rate <= chsh_entropy_floor(0.8)
        assert 1.0 < rr.entropy_order < 1.0 + 1.0 / math.log2(9.0)
        assert len(rr.evaluated) >= 144


class TestFullDivergenceProgram:
    def test_extended_scenario_family_counts(self):
        # one node per family keeps the word set at its smallest
        cfg = ProtocolConfig(n=1e9, gamma=0.01, m=1, alpha=1.2)
        fdp = build_full_divergence_program(cfg)
        counts = validate_full_divergence_structure(fdp)
        assert counts["families_perp"] == 2
        assert counts["families_0"] == 8
        assert counts["families_1"] == 8
        assert counts["families"] == 18
        assert len(fdp.z_symbols) == 18

    def test_tiny_scenario_solves_deterministically(self):
        scenario = BellScenario(
            inputs_a=1, inputs_b=1, key_inputs=(0, 0),
            test_inputs_a=(0,), test_inputs_b=(0,), gamma=0.2,
            test_input_dist={(0, 0): 1.0},
            generation_input_dist={(0, 0): 1.0},
        )
        cfg = ProtocolConfig(n=1e9, gamma=0.2, m=1, alpha=1.3)
        fdp = build_full_divergence_program(cfg, scenario)
        assert fdp.problem.n_words == 52
        values = []
        for _ in range(2):
            sol = solve(fdp.program, backend="clarabel")
            assert sol.status in ("optimal", "near_optimal")
            values.append(sol.objective)
        # identical rebuild and backend settings give the identical number
        assert values[0] == values[1]
