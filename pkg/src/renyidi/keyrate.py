"""Finite-size key rates from moment-relaxed single-round entropy programs.

A Bell scenario plus protocol parameters determine, for each Renyi order, a
conic program whose optimum lower-bounds the per-round entropy contribution
``h``; the finite-size rate subtracts the order-dependent accumulation
penalties.  Three interchangeable bounds on ``h`` are provided:

* ``PerpConditioned``: a divergence term at the protocol order plus the
  entropy of the key bit conditioned on generation rounds, weighted by the
  smallest accepted generation frequency.
* ``SplitOrder``: the same entropy block without the conditioning weight,
  paid for with a worse effective order through an order-splitting identity.
* ``VonNeumann``: a closed-form entropy floor in the CHSH winning
  probability, minimized heuristically; cheap but not certified.

All certified variants share one moment kernel: an NPA-style relaxation over
the measurement operators and one family of free auxiliary operators per
quadrature node and key outcome.  The moment matrix is kept real symmetric,
which is exact here because every functional used touches only real parts
(negating the imaginary slots preserves feasibility and objective, so by
convexity they can be pinned to zero).  When the scenario's outcome and
input relabelings leave the program data invariant, the program is further
restricted to the symmetric moment subspace, where the matrix splits into
sign-sector blocks; the restriction is verified at build time and exact by
convexity, and it is what makes production sizes tractable for an
interior-point solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .conic import (
    ConicProgram,
    LinearForm,
    Solution,
    add_log_epigraph,
    add_rel_entropy_quadratic,
    add_rel_entropy_term,
    solve,
)
from .ncalgebra import (
    MomentProblem,
    Monomial,
    NCPolynomial,
    OperatorSymbol,
    aux_symbol,
    build_moment_problem,
    build_word_set,
    functional,
    local_product_words,
    measurement_symbol,
    real_psd_entries,
)
from .quadrature import approach_weight, radau_rule
from .symmetry import MomentReduction, Relabeling, build_reduction
from .scenario import (
    PERP,
    AcceptMode,
    AcceptSet,
    BellScenario,
    delta_tol as accept_delta_tol,
    extended_chsh_scenario,
    q_min_perp,
    test_statistic_distribution,
)

LN2 = math.log(2.0)
# squared log-dimension cost of the order split, for two binary devices
DIM_PENALTY_FACTOR = math.log2(9.0) ** 2
ENTROPY_ORDER_CAP = 1.0 + 1.0 / math.log2(9.0)

STATISTIC_ORDER: tuple[str, str, str] = (PERP, "0", "1")

__all__ = [
    "Variant",
    "ProtocolConfig",
    "ProgramKernel",
    "SingleRoundProgram",
    "FullDivergenceProgram",
    "RateResult",
    "build_program_kernel",
    "entropy_term_vector",
    "build_perp_conditioned_program",
    "build_split_order_program",
    "build_full_divergence_program",
    "solve_single_round",
    "moment_point",
    "objective_at_point",
    "chsh_entropy_floor",
    "h_vonneumann",
    "effective_order",
    "finite_size_rate",
    "optimize_alpha",
    "diqkd_penalty",
    "STATISTIC_ORDER",
]


class Variant(str, Enum):
    PERP_CONDITIONED = "PerpConditioned"
    SPLIT_ORDER = "SplitOrder"
    VON_NEUMANN = "VonNeumann"


@dataclass(frozen=True)
class ProtocolConfig:
    """Protocol parameters plus relaxation and search settings.

    ``alpha`` is the Renyi order used by the single-program builders; the
    order search replaces it point by point.  For the split variants it is
    the common value of both split orders unless a builder is handed the two
    orders explicitly.
    """

    n: float
    gamma: float
    epsilon: float = 1e-5
    eps_com: float = 1e-3
    p_omega_floor: float = 1e-5
    omega_hon: float = 0.8
    m: int = 6
    npa_level: int = 1
    local_extras: bool = True
    symmetry_reduce: bool = True
    alpha: float | None = None
    alpha_interval: tuple[float, float] = (1.0001, 1.5)
    alpha_grid_size: int = 20
    variant: Variant = Variant.PERP_CONDITIONED
    accept_mode: AcceptMode = AcceptMode.BOX
    delta_tol: float | None = None
    program_form: str = "auto"
    backend: str = "clarabel"
    solver_opts: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("round count must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("test probability must lie in (0, 1)")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("smoothing parameter must lie in (0, 1)")
        if not 0.0 < self.eps_com < 1.0:
            raise ValueError("completeness budget must lie in (0, 1)")
        if not 0.0 < self.p_omega_floor <= 1.0:
            raise ValueError("acceptance-probability floor must lie in (0, 1]")
        if not 0.0 < self.omega_hon < 1.0:
            raise ValueError("honest winning probability must lie in (0, 1)")
        if self.m < 1:
            raise ValueError("node count must be at least 1")
        if self.npa_level < 1:
            raise ValueError("relaxation level must be at least 1")
        lo, hi = self.alpha_interval
        if not (1.0 < lo < hi < 2.0):
            raise ValueError("order interval must be an increasing pair inside (1, 2)")
        if self.alpha is not None and not 1.0 < self.alpha < 2.0:
            raise ValueError("order must lie in (1, 2)")
        if self.alpha_grid_size < 2:
            raise ValueError("order grid needs at least 2 points")
        if self.delta_tol is not None and self.delta_tol <= 0.0:
            raise ValueError("statistical tolerance must be positive")
        if self.program_form not in ("auto", "cone", "quadratic"):
            raise ValueError("program form must be 'auto', 'cone' or 'quadratic'")

    def resolved_delta_tol(self) -> float:
        if self.delta_tol is not None:
            return self.delta_tol
        return accept_delta_tol(self.n, self.gamma, self.eps_com, self.accept_mode)

    def honest_statistics(self) -> dict[str, float]:
        return test_statistic_distribution(self.omega_hon, self.gamma)

    def accept_set(self) -> AcceptSet:
        return AcceptSet(
            q_hon=self.honest_statistics(),
            delta_tol=self.resolved_delta_tol(),
            mode=self.accept_mode,
        )


def _alice_generation_marginal(scenario: BellScenario) -> dict[int, float]:
    marginal: dict[int, float] = {}
    for (x, _y), p in sorted(scenario.generation_input_dist.items()):
        if p > 0.0:
            marginal[x] = marginal.get(x, 0.0) + p
    return marginal


def _word_set(
    meas_symbols: Sequence[OperatorSymbol],
    aux_symbols: Sequence[OperatorSymbol],
    npa_level: int,
    local_extras: bool,
) -> list[Monomial]:
    """Plain NPA words at the given level, optionally joined with the local
    degree-one product set over (A side, B side, auxiliaries)."""
    words = build_word_set(list(meas_symbols) + list(aux_symbols), npa_level)
    if not local_extras:
        return words
    a_syms = [s for s in meas_symbols if s.party == "A"]
    b_syms = [s for s in meas_symbols if s.party == "B"]
    merged = set(words) | set(local_product_words([a_syms, b_syms, list(aux_symbols)]))
    rest = sorted(merged - {words[0]}, key=lambda w: w.sort_key)
    return [words[0]] + rest


def _measurement_polys(
    party: str, x: int, outputs: int
) -> list[NCPolynomial]:
    """Outcome operators as polynomials, with the last outcome eliminated."""
    explicit = [
        NCPolynomial.from_word(Monomial(((measurement_symbol(party, x, a), False),)))
        for a in range(outputs - 1)
    ]
    last = NCPolynomial.constant(1.0)
    for poly in explicit:
        last = last - poly
    return explicit + [last]


@dataclass(frozen=True)
class ProgramKernel:
    """Order-independent core shared by every program at one relaxation size.

    Holds the moment problem over measurement and auxiliary operators, the
    statistic functionals (linear in the real moment slots), and the handles
    needed to rebuild the order-dependent entropy functional.
    """

    scenario: BellScenario
    problem: MomentProblem
    z_symbols: Mapping[tuple[int, int, int], OperatorSymbol]
    f_vectors: Mapping[str, np.ndarray]
    key_marginal: Mapping[int, float]
    m: int
    npa_level: int
    local_extras: bool
    reduction: MomentReduction | None = None

    @property
    def n_moment_vars(self) -> int:
        return self.problem.n_complex


def _real_functional(poly: NCPolynomial, problem: MomentProblem) -> np.ndarray:
    vec = functional(poly, problem)
    tail = vec[problem.n_complex :]
    if tail.size and float(np.abs(tail).max()) > 1e-11:
        raise ValueError(
            "functional touches imaginary moment slots; the real-symmetric "
            "reduction does not apply"
        )
    return vec[: problem.n_complex]


def _op(sym: OperatorSymbol) -> NCPolynomial:
    return NCPolynomial.from_word(Monomial(((sym, False),)))


def _relabeling_candidates(
    scenario: BellScenario,
    z_symbols: Mapping[tuple[int, int, int], OperatorSymbol],
) -> list[Relabeling]:
    """Relabelings of a two-outcome scenario that can fix the program data.

    Candidates, not certainties: the reduction builder verifies each against
    the actual statistic functionals and drops the ones the data breaks, so
    proposing too much is harmless.  The joint outcome flip swaps the paired
    auxiliary families along with every outcome; the input swap exchanges
    the two B-side test inputs while flipping A's outcome on its second
    input, which preserves the correlation statistic.
    """
    if scenario.outputs_a != 2 or scenario.outputs_b != 2:
        return []
    one = NCPolynomial.constant(1.0)
    flip: dict[OperatorSymbol, NCPolynomial] = {}
    for x in range(scenario.inputs_a):
        sym = measurement_symbol("A", x, 0)
        flip[sym] = one - _op(sym)
    for y in range(scenario.inputs_b):
        sym = measurement_symbol("B", y, 0)
        flip[sym] = one - _op(sym)
    for (x, a, i), sym in z_symbols.items():
        flip[sym] = _op(z_symbols[(x, 1 - a, i)])
    out = [Relabeling("joint outcome flip", flip)]
    if scenario.inputs_a >= 2 and scenario.inputs_b >= 2:
        b0 = measurement_symbol("B", 0, 0)
        b1 = measurement_symbol("B", 1, 0)
        a1 = measurement_symbol("A", 1, 0)
        out.append(
            Relabeling(
                "test input swap",
                {b0: _op(b1), b1: _op(b0), a1: one - _op(a1)},
            )
        )
    return out


def build_program_kernel(
    config: ProtocolConfig, scenario: BellScenario | None = None
) -> ProgramKernel:
    """Build the moment problem and statistic functionals once per size.

    Auxiliary families: one non-Hermitian symbol per key input of the A side,
    key outcome, and quadrature node.  With local extras enabled the word set
    also contains every measurement times every auxiliary letter, which is
    what makes mixed moments like <M Z* Z> expressible.
    """
    scenario = scenario if scenario is not None else extended_chsh_scenario(config.gamma)
    meas_symbols: list[OperatorSymbol] = []
    for x in range(scenario.inputs_a):
        for a in range(scenario.outputs_a - 1):
            meas_symbols.append(measurement_symbol("A", x, a))
    for y in range(scenario.inputs_b):
        for b in range(scenario.outputs_b - 1):
            meas_symbols.append(measurement_symbol("B", y, b))

    key_marginal = _alice_generation_marginal(scenario)
    z_symbols: dict[tuple[int, int, int], OperatorSymbol] = {}
    for x in sorted(key_marginal):
        for a in range(scenario.outputs_a):
            for i in range(1, config.m + 1):
                z_symbols[(x, a, i)] = aux_symbol(f"Z{x}.{a}.{i}")

    aux_list = [z_symbols[k] for k in sorted(z_symbols)]
    words = _word_set(meas_symbols, aux_list, config.npa_level, config.local_extras)
    problem = build_moment_problem(words)

    a_polys = {x: _measurement_polys("A", x, scenario.outputs_a) for x in range(scenario.inputs_a)}
    b_polys = {y: _measurement_polys("B", y, scenario.outputs_b) for y in range(scenario.inputs_b)}

    f_vectors: dict[str, np.ndarray] = {}
    perp = np.zeros(problem.n_complex)
    perp[0] = 1.0 - scenario.gamma
    f_vectors[PERP] = perp
    for label in STATISTIC_ORDER[1:]:
        poly = NCPolynomial({})
        for (x, y), p_xy in sorted(scenario.test_input_dist.items()):
            if p_xy == 0.0:
                continue
            for a in range(scenario.outputs_a):
                for b in range(scenario.outputs_b):
                    if scenario.test_statistic(a, b, x, y, 1) == label:
                        poly = poly + (a_polys[x][a] * b_polys[y][b]) * (scenario.gamma * p_xy)
        f_vectors[label] = _real_functional(poly, problem)

    reduction = None
    if config.symmetry_reduce:
        reduction = build_reduction(
            problem,
            _relabeling_candidates(scenario, z_symbols),
            check_vectors=[f_vectors[s] for s in STATISTIC_ORDER],
        )

    return ProgramKernel(
        scenario=scenario,
        problem=problem,
        z_symbols=z_symbols,
        f_vectors=f_vectors,
        key_marginal=key_marginal,
        m=config.m,
        npa_level=config.npa_level,
        local_extras=config.local_extras,
        reduction=reduction,
    )


def _node_polys(
    z_family: Sequence[OperatorSymbol],
    nodes: Sequence[float],
    weights: Sequence[float],
    quad_alpha: float,
) -> tuple[NCPolynomial, NCPolynomial]:
    """The paired polynomials (P, Q) of one variational family.

    P carries the state side of the trace bound, Q the reference side; at the
    variational optimum <rho, P> + <sigma, Q> upper-bounds the Renyi trace
    term for orders in (1, 2), where the sine prefactor is negative.
    """
    pref = math.sin(quad_alpha * math.pi) / math.pi
    p_poly = NCPolynomial.constant(1.0 + pref * sum(w / t for w, t in zip(weights, nodes)))
    q_poly = NCPolynomial({})
    for z_sym, t, w in zip(z_family, nodes, weights):
        z = NCPolynomial.from_word(Monomial(((z_sym, False),)))
        z_dag = NCPolynomial.from_word(Monomial(((z_sym, True),)))
        p_poly = p_poly + (z + z_dag + (z_dag * z) * (1.0 - t)) * (pref * w / t)
        q_poly = q_poly + (z * z_dag) * (pref * w)
    return p_poly, q_poly


def entropy_term_vector(kernel: ProgramKernel, quad_alpha: float) -> np.ndarray:
    """Functional whose moment value upper-bounds the key-bit entropy trace.

    One variational family per key input and outcome; the key inputs are
    weighted by the A-side marginal of the generation input distribution.
    The conditional entropy bound is log2 of this value divided by (1-order).
    """
    if not 1.0 < quad_alpha < 2.0:
        raise ValueError("entropy order must lie in (1, 2)")
    rule = radau_rule(approach_weight(quad_alpha, "2"), kernel.m, endpoint=1)
    scenario = kernel.scenario
    a_polys = {
        x: _measurement_polys("A", x, scenario.outputs_a) for x in sorted(kernel.key_marginal)
    }
    total = NCPolynomial({})
    for x, px in sorted(kernel.key_marginal.items()):
        for a in range(scenario.outputs_a):
            family = [kernel.z_symbols[(x, a, i)] for i in range(1, kernel.m + 1)]
            p_poly, q_poly = _node_polys(family, rule.nodes, rule.weights, quad_alpha)
            total = total + (a_polys[x][a] * p_poly + q_poly) * px
    return _real_functional(total, kernel.problem)


@dataclass(frozen=True)
class SingleRoundProgram:
    """Assembled conic program for one bound variant at fixed orders.

    The stored objective is in bits: the divergence slacks carry ``d_coeff``
    and the entropy slack ``ent_coeff`` directly, so solver tolerances apply
    at the scale of the reported bound.

    ``quadratic_divergence`` and ``tangent_entropy`` record which surrogate
    the small-order form substituted; both substitutions only ever lower the
    objective, so the solved value stays a valid bound.
    """

    program: ConicProgram
    kernel: ProgramKernel
    accept: AcceptSet
    q_vars: tuple[int, int, int]
    div_slacks: tuple[int, int, int]
    ent_slack: int | None
    g_vector: np.ndarray | None
    quad_alpha: float | None
    d_coeff: float
    ent_coeff: float
    label: str
    quadratic_divergence: bool = False
    tangent_entropy: bool = False


def _vector_form(vec: np.ndarray) -> LinearForm:
    return LinearForm.of({j: float(v) for j, v in enumerate(vec) if v != 0.0})


def _add_accept_rows(
    prog: ConicProgram, q_vars: Sequence[int], accept: AcceptSet
) -> None:
    delta = accept.delta_tol
    rows: list[LinearForm] = []
    if accept.mode == AcceptMode.BOX:
        for idx, label in enumerate(STATISTIC_ORDER):
            lo = max(accept.q_hon[label] - delta, 0.0)
            hi = accept.q_hon[label] + delta
            rows.append(LinearForm(coeffs=((q_vars[idx], 1.0),), const=-lo))
            rows.append(LinearForm(coeffs=((q_vars[idx], -1.0),), const=hi))
    else:
        # one-sided: cap the losing frequency, keep the generation window,
        # and state plain nonnegativity for the rest
        rows.append(
            LinearForm(coeffs=((q_vars[1], -1.0),), const=accept.q_hon["0"] + delta)
        )
        lo_perp = max(accept.q_hon[PERP] - delta, 0.0)
        rows.append(LinearForm(coeffs=((q_vars[0], 1.0),), const=-lo_perp))
        rows.append(LinearForm(coeffs=((q_vars[1], 1.0),), const=0.0))
        rows.append(LinearForm(coeffs=((q_vars[2], 1.0),), const=0.0))
    prog.add_block("nonneg", rows, origin="accepted statistics window")


def _assemble(
    kernel: ProgramKernel,
    accept: AcceptSet,
    quad_alpha: float | None,
    d_coeff: float,
    ent_coeff: float,
    label: str,
    f_vectors: Mapping[str, np.ndarray] | None = None,
    div_quadratic: bool = False,
    ent_tangent: bool = False,
) -> SingleRoundProgram:
    prog = ConicProgram()
    red = kernel.reduction
    if red is None:
        prog.add_variables(kernel.n_moment_vars)
        prog.fix_variable(0, 1.0, origin="moment normalization")
        entries, side = real_psd_entries(kernel.problem)
        prog.add_psd_entries(side, entries, origin="moment matrix")

        def to_form(vec: np.ndarray) -> LinearForm:
            return _vector_form(vec)

    else:
        prog.add_variables(red.dim)
        prog.add_block(
            "zero",
            [
                LinearForm.of(
                    {
                        j: float(v)
                        for j, v in enumerate(red.normalization_row)
                        if v != 0.0
                    },
                    const=-1.0,
                )
            ],
            origin="moment normalization",
        )
        for blk in red.blocks:
            prog.add_psd_block_rows(
                blk.side, blk.entry_i, blk.entry_j, blk.cols, blk.coeffs,
                origin="moment matrix sector",
            )

        def to_form(vec: np.ndarray) -> LinearForm:
            scale = max(1.0, float(np.abs(vec).max(initial=0.0)))
            if red.invariance_defect(vec) > 1e-9 * scale:
                raise ValueError(
                    "functional is not invariant under the symmetry reduction"
                )
            return _vector_form(red.reduce_vector(vec))

    q_vars = tuple(prog.add_variables(3))
    prog.add_block(
        "zero",
        [
            LinearForm(
                coeffs=tuple((q, 1.0) for q in q_vars), const=-1.0
            )
        ],
        origin="statistic normalization",
    )
    _add_accept_rows(prog, q_vars, accept)

    # objective kept in bit units: scaling it down by d_coeff looks tidier
    # but multiplies the solver's absolute error back up by d_coeff (huge
    # near order one), which can inflate the returned bound past soundness
    vectors = kernel.f_vectors if f_vectors is None else f_vectors
    div_slacks = tuple(prog.add_variables(3))
    for idx, stat in enumerate(STATISTIC_ORDER):
        if div_quadratic:
            add_rel_entropy_quadratic(
                prog,
                LinearForm.variable(q_vars[idx]),
                to_form(vectors[stat]),
                div_slacks[idx],
                origin=f"divergence block ({stat})",
            )
        else:
            add_rel_entropy_term(
                prog,
                q_vars[idx],
                to_form(vectors[stat]),
                div_slacks[idx],
                origin=f"divergence block ({stat})",
            )
        prog.add_objective_term(div_slacks[idx], d_coeff)
    if div_quadratic:
        # the exponential cone forced the statistic functionals nonnegative;
        # the quadratic surrogate does not, so state it
        prog.add_block(
            "nonneg",
            [to_form(vectors[stat]) for stat in STATISTIC_ORDER],
            origin="statistic functional sign",
        )

    ent_slack: int | None = None
    g_vec: np.ndarray | None = None
    if ent_coeff != 0.0:
        assert quad_alpha is not None
        g_vec = entropy_term_vector(kernel, quad_alpha)
        if ent_tangent:
            # ln g <= g - 1 under the negative entropy coefficient bounds the
            # log term from below by a moment functional; subtracting the
            # identity slot cancels the huge constant part analytically, so
            # nothing in the objective grows as the order approaches one
            unit = np.zeros_like(g_vec)
            unit[0] = 1.0
            tangent_form = to_form(g_vec - unit)
            for j, v in tangent_form.coeffs:
                prog.add_objective_term(j, ent_coeff * v)
        else:
            ent_slack = prog.add_variables(1)[0]
            add_log_epigraph(
                prog, to_form(g_vec), ent_slack, origin="entropy epigraph"
            )
            prog.add_objective_term(ent_slack, ent_coeff)

    return SingleRoundProgram(
        program=prog,
        kernel=kernel,
        accept=accept,
        q_vars=q_vars,
        div_slacks=div_slacks,
        ent_slack=ent_slack,
        g_vector=g_vec,
        quad_alpha=quad_alpha,
        d_coeff=d_coeff,
        ent_coeff=ent_coeff,
        label=label,
        quadratic_divergence=div_quadratic,
        tangent_entropy=ent_tangent,
    )


# Below this order gap the exponential-cone form is swapped for symmetric
# surrogates.  The divergence surrogate's quartic gap grows like the cube of
# the attack's optimal statistics shift over the smallest test frequency, so
# the cutoff also scales with the test probability; both branches keep the
# substitution loss under ~1e-4 bits while overlapping the band where the
# exponential cones still converge, so the two forms can be cross-checked.
_QUADRATIC_FORM_MAX_GAP = 2e-4


def _quadratic_form(order_gap: float, gamma: float, mode: str) -> bool:
    if mode == "cone":
        return False
    if mode == "quadratic":
        return True
    return order_gap <= min(_QUADRATIC_FORM_MAX_GAP, gamma / 50.0)


def build_perp_conditioned_program(
    config: ProtocolConfig,
    scenario: BellScenario | None = None,
    kernel: ProgramKernel | None = None,
) -> SingleRoundProgram:
    """Single-order bound: divergence plus conditioned, reweighted entropy.

    The entropy of the key bit given a generation round enters scaled by the
    least generation frequency any accepted statistic can have, which is the
    honest value minus the tolerance.
    """
    if config.alpha is None:
        raise ValueError("config.alpha must be set for a single-program build")
    alpha = config.alpha
    if kernel is None:
        kernel = build_program_kernel(config, scenario)
    accept = config.accept_set()
    weight = q_min_perp(accept)
    quadratic = _quadratic_form(alpha - 1.0, config.gamma, config.program_form)
    return _assemble(
        kernel,
        accept,
        quad_alpha=alpha,
        d_coeff=1.0 / ((alpha - 1.0) * LN2),
        ent_coeff=weight / ((1.0 - alpha) * LN2),
        label="perp-conditioned",
        div_quadratic=quadratic,
        ent_tangent=quadratic,
    )


def build_split_order_program(
    config: ProtocolConfig,
    scenario: BellScenario | None = None,
    entropy_order: float | None = None,
    divergence_order: float | None = None,
    kernel: ProgramKernel | None = None,
) -> SingleRoundProgram:
    """Split-order bound: full entropy term, divergence at its own order.

    Dropping the conditioning weight costs a worse effective order, obtained
    from the two split orders by `effective_order`.
    """
    eo = entropy_order if entropy_order is not None else config.alpha
    do = divergence_order if divergence_order is not None else config.alpha
    if eo is None or do is None:
        raise ValueError("both orders are required (set config.alpha or pass them)")
    if not (1.0 < eo < 2.0 and 1.0 < do < 2.0):
        raise ValueError("split orders must lie in (1, 2)")
    if kernel is None:
        kernel = build_program_kernel(config, scenario)
    return _assemble(
        kernel,
        config.accept_set(),
        quad_alpha=eo,
        d_coeff=do / ((do - 1.0) * LN2),
        ent_coeff=1.0 / ((1.0 - eo) * LN2),
        label="split-order",
        div_quadratic=_quadratic_form(do - 1.0, config.gamma, config.program_form),
        ent_tangent=_quadratic_form(eo - 1.0, config.gamma, config.program_form),
    )


def solve_single_round(
    srp: SingleRoundProgram, config: ProtocolConfig
) -> tuple[float, Solution]:
    """Solve the program; return a certified lower bound on h and the detail.

    The returned value subtracts the duality gap and primal residual from the
    solver objective, so near-optimal terminations still give a valid bound.
    """
    sol = solve(srp.program, backend=config.backend, **dict(config.solver_opts))
    if sol.status not in ("optimal", "near_optimal"):
        raise RuntimeError(
            f"single-round program did not solve (status {sol.status}); "
            f"diagnostics: {sol.diagnostics}"
        )
    return float(sol.certified_lower), sol


def moment_point(srp: SingleRoundProgram, solution: Solution) -> np.ndarray:
    """Full-space moment vector at a solved program's optimum.

    Undoes the symmetry reduction when one is active, so the result always
    indexes like the kernel's functionals.
    """
    if solution.x is None:
        raise ValueError("solution carries no primal point")
    x = np.asarray(solution.x, float)
    red = srp.kernel.reduction
    if red is None:
        return x[: srp.kernel.n_moment_vars]
    return red.expand_point(x[: red.dim])


def objective_at_point(
    srp: SingleRoundProgram, y_real: np.ndarray, q: Mapping[str, float]
) -> float:
    """Objective value (bits) at explicit moments and accepted statistics.

    Used to check soundness against explicit strategies: the solved minimum
    can never exceed the value at any feasible point.
    """
    y = np.asarray(y_real, float)[: srp.kernel.n_moment_vars]
    vectors = srp.kernel.f_vectors
    total = 0.0
    for stat in STATISTIC_ORDER:
        q_c = float(q[stat])
        f_c = float(vectors[stat] @ y)
        if q_c < 0.0:
            raise ValueError("statistics must be nonnegative")
        if q_c == 0.0:
            continue
        if f_c <= 0.0:
            return math.inf
        total += srp.d_coeff * q_c * math.log(q_c / f_c)
    if srp.ent_slack is not None:
        assert srp.g_vector is not None
        g_val = float(srp.g_vector @ y)
        if g_val <= 0.0:
            raise ValueError("entropy functional must be positive at a strategy")
        total += srp.ent_coeff * math.log(g_val)
    return total


def effective_order(entropy_order: float, divergence_order: float) -> float:
    """Combine split orders into the order the accumulation penalty sees."""
    for value in (entropy_order, divergence_order):
        if not 1.0 < value < 2.0:
            raise ValueError("split orders must lie in (1, 2)")
    r = entropy_order / (entropy_order - 1.0) + divergence_order / (divergence_order - 1.0)
    return r / (r - 1.0)


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def chsh_entropy_floor(omega: float) -> float:
    """Closed-form lower bound on the key bit's entropy given the adversary,
    as a function of the CHSH winning probability.

    Flat at zero up to the classical boundary 3/4, reaching one full bit at
    the quantum maximum (2 + sqrt(2))/4.
    """
    s = min(max(8.0 * omega - 4.0, 2.0), 2.0 * math.sqrt(2.0))
    if s <= 2.0:
        return 0.0
    return 1.0 - _binary_entropy(0.5 * (1.0 + math.sqrt(s * s / 4.0 - 1.0)))


def _vn_objective(
    q0: float, q1: float, omega: float, gamma: float, div_coeff: float
) -> float:
    """Divergence against the omega-parametrized statistics plus the floor."""
    f = ((1.0 - gamma), gamma * (1.0 - omega), gamma * omega)
    q = (1.0 - q0 - q1, q0, q1)
    total = 0.0
    for q_c, f_c in zip(q, f):
        if q_c <= 0.0:
            continue
        if f_c <= 0.0:
            return math.inf
        total += div_coeff * q_c * math.log2(q_c / f_c)
    return total + chsh_entropy_floor(omega)


def _golden_min(fun, lo: float, hi: float, iters: int = 60) -> tuple[float, float]:
    if hi <= lo:
        return lo, fun(lo)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fun(d)
    x = c if fc <= fd else d
    return x, min(fc, fd)


def h_vonneumann(
    config: ProtocolConfig,
    scenario: BellScenario | None = None,
    entropy_order: float | None = None,
    divergence_order: float | None = None,
) -> float:
    """Heuristic minimum of the closed-form bound over accepted statistics.

    Coordinate descent over (losing frequency, winning frequency, modeled
    winning probability) from several starts.  Each coordinate slice is
    convex so the descent is reliable, but the joint search carries no
    certificate; results feed the non-certified reference variant only.
    """
    eo = entropy_order if entropy_order is not None else config.alpha
    do = divergence_order if divergence_order is not None else config.alpha
    if eo is None or do is None:
        raise ValueError("both orders are required (set config.alpha or pass them)")
    if not 1.0 < eo < ENTROPY_ORDER_CAP:
        raise ValueError(
            f"entropy order must lie in (1, {ENTROPY_ORDER_CAP:.6f}) "
            "for the dimension penalty to apply"
        )
    if not 1.0 < do < 2.0:
        raise ValueError("divergence order must lie in (1, 2)")
    del scenario  # statistic map is fixed by the closed form
    gamma = config.gamma
    accept = config.accept_set()
    delta = accept.delta_tol
    q_hon = accept.q_hon
    div_coeff = do / (do - 1.0)

    if accept.mode == AcceptMode.BOX:
        lo0, hi0 = max(q_hon["0"] - delta, 0.0), q_hon["0"] + delta
        lo1, hi1 = max(q_hon["1"] - delta, 0.0), q_hon["1"] + delta
        sum_lo, sum_hi = max(gamma - delta, 0.0), gamma + delta
    else:
        lo0, hi0 = 0.0, q_hon["0"] + delta
        lo1, hi1 = 0.0, 1.0
        sum_lo, sum_hi = 0.0, min(gamma + delta, 1.0)

    def bounds0(q1: float) -> tuple[float, float]:
        return max(lo0, sum_lo - q1), min(hi0, sum_hi - q1)

    def bounds1(q0: float) -> tuple[float, float]:
        return max(lo1, sum_lo - q0), min(hi1, sum_hi - q0)

    omega_lo, omega_hi = 1e-9, 1.0 - 1e-9
    starts = [
        (q_hon["0"], q_hon["1"], config.omega_hon),
        (q_hon["0"], q_hon["1"], 0.7500001),
        (hi0, max(lo1, sum_lo - hi0), 0.78),
        (q_hon["0"], q_hon["1"], 0.87),
    ]
    best = math.inf
    for q0, q1, omega in starts:
        value = _vn_objective(q0, q1, omega, gamma, div_coeff)
        for _ in range(40):
            lo, hi = bounds0(q1)
            q0, _ = _golden_min(lambda v: _vn_objective(v, q1, omega, gamma, div_coeff), lo, hi)
            lo, hi = bounds1(q0)
            q1, _ = _golden_min(lambda v: _vn_objective(q0, v, omega, gamma, div_coeff), lo, hi)
            omega, new_value = _golden_min(
                lambda v: _vn_objective(q0, q1, v, gamma, div_coeff), omega_lo, omega_hi
            )
            if value - new_value < 1e-13:
                value = min(value, new_value)
                break
            value = new_value
        best = min(best, value)
    return best


@dataclass(frozen=True)
class RateResult:
    """One evaluated operating point plus its finite-size rate breakdown."""

    variant: Variant
    n: float
    alpha: float
    h: float
    rate: float
    pomega_bits: float
    smoothing_bits: float
    dimension_penalty: float = 0.0
    entropy_order: float | None = None
    divergence_order: float | None = None
    certified: bool = True
    status: str = "optimal"
    evaluated: tuple = ()
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        rebuilt = (
            self.h
            - (self.pomega_bits + self.smoothing_bits) / self.n
            - self.dimension_penalty
        )
        if abs(rebuilt - self.rate) > 1e-12 * max(1.0, abs(self.h)):
            raise ValueError("rate does not reproduce from its own breakdown")


def finite_size_rate(
    h: float,
    config: ProtocolConfig,
    alpha: float | None = None,
    entropy_order: float | None = None,
    divergence_order: float | None = None,
    certified: bool = True,
    status: str = "optimal",
    evaluated: tuple = (),
    diagnostics: Mapping[str, object] | None = None,
) -> RateResult:
    """Turn a single-round bound into a per-round finite-size key rate.

    Subtracts the acceptance-probability and smoothing penalties at the
    effective order, each divided by the round count, plus (for the
    non-certified variant only) the per-round order-splitting dimension cost.
    """
    variant = config.variant
    dim_penalty = 0.0
    if variant == Variant.PERP_CONDITIONED:
        a = alpha if alpha is not None else config.alpha
        if a is None:
            raise ValueError("order required: set config.alpha or pass alpha")
    else:
        eo = entropy_order if entropy_order is not None else config.alpha
        do = divergence_order if divergence_order is not None else config.alpha
        if eo is None or do is None:
            raise ValueError("split orders required: set config.alpha or pass them")
        a = effective_order(eo, do)
        if variant == Variant.VON_NEUMANN:
            dim_penalty = (eo - 1.0) * DIM_PENALTY_FACTOR
        entropy_order, divergence_order = eo, do
    pomega_bits = a / (a - 1.0) * math.log2(1.0 / config.p_omega_floor)
    smoothing_bits = math.log2(2.0 / config.epsilon**2) / (a - 1.0)
    rate = h - (pomega_bits + smoothing_bits) / config.n - dim_penalty
    return RateResult(
        variant=variant,
        n=config.n,
        alpha=a,
        h=h,
        rate=rate,
        pomega_bits=pomega_bits,
        smoothing_bits=smoothing_bits,
        dimension_penalty=dim_penalty,
        entropy_order=entropy_order,
        divergence_order=divergence_order,
        certified=certified and variant != Variant.VON_NEUMANN,
        status=status,
        evaluated=evaluated,
        diagnostics=dict(diagnostics or {}),
    )


def diqkd_penalty(config: ProtocolConfig, dim_announced: int = 2) -> float:
    """Per-round cost of publicly announcing the B-side test outcomes.

    Rounds that may be announced are the test rounds plus the statistical
    tolerance; each costs at most the log-dimension of the announced system.
    Kept separate from `finite_size_rate`, whose target quantity keeps the B
    side secret.
    """
    if dim_announced < 1:
        raise ValueError("announced dimension must be at least 1")
    return (config.gamma + config.resolved_delta_tol()) * math.log2(dim_announced)


def _grid_then_golden(
    evaluate, xs: Sequence[float], refine_iters: int
) -> tuple[list[tuple[float, RateResult]], float, RateResult]:
    """Scan a grid, then golden-section the log-spaced bracket at the top.

    Points where the solver fails are dropped from the search rather than
    aborting it; at least one grid point must survive.
    """
    cache: dict[float, RateResult | None] = {}

    def rate_at(x: float) -> RateResult | None:
        if x not in cache:
            try:
                cache[x] = evaluate(x)
            except RuntimeError:
                cache[x] = None
        return cache[x]

    results = [(x, rate_at(x)) for x in xs]
    usable = [(x, r) for x, r in results if r is not None]
    if not usable:
        raise RuntimeError("no order in the grid produced a solved program")
    best_x, best = max(usable, key=lambda item: item[1].rate)
    idx = [x for x, _ in results].index(best_x)
    lo = xs[max(idx - 1, 0)]
    hi = xs[min(idx + 1, len(xs) - 1)]
    if lo < hi and refine_iters > 0:

        def neg(u: float) -> float:
            r = rate_at(math.exp(u))
            return -r.rate if r is not None else math.inf

        u_best, _ = _golden_min(neg, math.log(lo), math.log(hi), iters=refine_iters)
        candidate = rate_at(math.exp(u_best))
        if candidate is not None and candidate.rate > best.rate:
            best_x, best = math.exp(u_best), candidate
    evaluated = [(x, r) for x, r in sorted(cache.items()) if r is not None]
    return evaluated, best_x, best


def optimize_alpha(
    config: ProtocolConfig, scenario: BellScenario | None = None
) -> RateResult:
    """Search the order interval for the best finite-size rate.

    Certified variants scan a geometric grid in (order - 1), reusing one
    moment kernel across solves, then refine the best bracket with a short
    golden-section pass.  The non-certified variant searches its two orders
    over a coarse product grid of the cheap closed-form bound.
    """
    lo, hi = config.alpha_interval

    if config.variant == Variant.VON_NEUMANN:
        eo_hi = min(hi, ENTROPY_ORDER_CAP * (1.0 - 1e-9))
        eo_grid = np.geomspace(max(lo, 1.0 + 1e-7) - 1.0, eo_hi - 1.0, 12)
        do_grid = np.geomspace(lo - 1.0, hi - 1.0, 12)
        best: RateResult | None = None
        evaluated: list[tuple[float, float, float]] = []
        for eo_x in eo_grid:
            for do_x in do_grid:
                eo, do = 1.0 + float(eo_x), 1.0 + float(do_x)
                h = h_vonneumann(config, scenario, eo, do)
                result = finite_size_rate(
                    h, config, entropy_order=eo, divergence_order=do,
                    certified=False, status="heuristic",
                )
                evaluated.append((eo, do, result.rate))
                if best is None or result.rate > best.rate:
                    best = result
        assert best is not None
        # one coordinate-refinement pass around the incumbent
        eo_c, do_c = best.entropy_order, best.divergence_order
        for _ in range(2):
            neg_eo = lambda u: -finite_size_rate(
                h_vonneumann(config, scenario, 1.0 + math.exp(u), do_c),
                config, entropy_order=1.0 + math.exp(u), divergence_order=do_c,
                certified=False, status="heuristic",
            ).rate
            u, _ = _golden_min(
                neg_eo, math.log(float(eo_grid[0])), math.log(eo_hi - 1.0), iters=40
            )
            eo_c = 1.0 + math.exp(u)
            neg_do = lambda u: -finite_size_rate(
                h_vonneumann(config, scenario, eo_c, 1.0 + math.exp(u)),
                config, entropy_order=eo_c, divergence_order=1.0 + math.exp(u),
                certified=False, status="heuristic",
            ).rate
            u, _ = _golden_min(
                neg_do, math.log(lo - 1.0), math.log(hi - 1.0), iters=40
            )
            do_c = 1.0 + math.exp(u)
        h = h_vonneumann(config, scenario, eo_c, do_c)
        refined = finite_size_rate(
            h, config, entropy_order=eo_c, divergence_order=do_c,
            certified=False, status="heuristic",
            evaluated=tuple(evaluated),
        )
        return refined if refined.rate > best.rate else replace(
            best, evaluated=tuple(evaluated)
        )

    kernel = build_program_kernel(config, scenario)

    def evaluate(x: float) -> RateResult:
        order = 1.0 + x
        if config.variant == Variant.PERP_CONDITIONED:
            srp = build_perp_conditioned_program(
                replace(config, alpha=order), kernel=kernel
            )
            h, sol = solve_single_round(srp, config)
            return finite_size_rate(
                h, config, alpha=order, status=sol.status,
                diagnostics={"solve_time": sol.solve_time},
            )
        srp = build_split_order_program(
            config, entropy_order=order, divergence_order=order, kernel=kernel
        )
        h, sol = solve_single_round(srp, config)
        return finite_size_rate(
            h, config, entropy_order=order, divergence_order=order,
            status=sol.status, diagnostics={"solve_time": sol.solve_time},
        )

    xs = [float(v) for v in np.geomspace(lo - 1.0, hi - 1.0, config.alpha_grid_size)]
    results, _x, best = _grid_then_golden(evaluate, xs, refine_iters=10)
    trace = tuple((1.0 + x, r.h, r.rate) for x, r in results)
    return replace(best, evaluated=trace)


# --- full per-statistic divergence program (builder and validator) ---------


@dataclass(frozen=True)
class FullDivergenceProgram:
    """Program where every statistic gets its own variational trace bound.

    No separate entropy term: each accepted statistic is compared against a
    variational functional built from one auxiliary family per statistic,
    measurement context, and A-side outcome.  Provided as a builder with a
    structure validator; solving at production sizes is out of scope.
    """

    program: ConicProgram
    problem: MomentProblem
    scenario: BellScenario
    alpha: float
    q_vars: tuple[int, int, int]
    div_slacks: tuple[int, int, int]
    f_vectors: Mapping[str, np.ndarray]
    families_by_statistic: Mapping[str, tuple[tuple[int, int, int, int], ...]]
    z_symbols: Mapping[tuple[str, int, int, int, int, int], OperatorSymbol]
    m: int


def _contexts(scenario: BellScenario) -> list[tuple[int, int, int, float]]:
    out: list[tuple[int, int, int, float]] = []
    for (x, y), p in sorted(scenario.generation_input_dist.items()):
        if p > 0.0:
            out.append((x, y, 0, (1.0 - scenario.gamma) * p))
    for (x, y), p in sorted(scenario.test_input_dist.items()):
        if p > 0.0:
            out.append((x, y, 1, scenario.gamma * p))
    return out


def build_full_divergence_program(
    config: ProtocolConfig, scenario: BellScenario | None = None
) -> FullDivergenceProgram:
    """Assemble the all-statistics divergence program at config.alpha."""
    if config.alpha is None:
        raise ValueError("config.alpha must be set")
    alpha = config.alpha
    scenario = scenario if scenario is not None else extended_chsh_scenario(config.gamma)
    rule = radau_rule(approach_weight(alpha, "2"), config.m, endpoint=1)

    meas_symbols: list[OperatorSymbol] = []
    for x in range(scenario.inputs_a):
        for a in range(scenario.outputs_a - 1):
            meas_symbols.append(measurement_symbol("A", x, a))
    for y in range(scenario.inputs_b):
        for b in range(scenario.outputs_b - 1):
            meas_symbols.append(measurement_symbol("B", y, b))

    contexts = _contexts(scenario)
    families: dict[str, list[tuple[int, int, int, int]]] = {s: [] for s in STATISTIC_ORDER}
    b_sets: dict[tuple[str, int, int, int, int], list[int]] = {}
    for x, y, t, _w in contexts:
        for a in range(scenario.outputs_a):
            for stat in STATISTIC_ORDER:
                bs = [
                    b
                    for b in range(scenario.outputs_b)
                    if scenario.test_statistic(a, b, x, y, t) == stat
                ]
                if bs:
                    families[stat].append((x, y, t, a))
                    b_sets[(stat, x, y, t, a)] = bs

    z_symbols: dict[tuple[str, int, int, int, int, int], OperatorSymbol] = {}
    for stat in STATISTIC_ORDER:
        for (x, y, t, a) in families[stat]:
            for i in range(1, config.m + 1):
                z_symbols[(stat, x, y, t, a, i)] = aux_symbol(
                    f"W{stat}.{x}{y}{t}.{a}.{i}"
                )

    aux_list = [z_symbols[k] for k in sorted(z_symbols)]
    words = _word_set(meas_symbols, aux_list, config.npa_level, config.local_extras)
    problem = build_moment_problem(words)

    a_polys = {x: _measurement_polys("A", x, scenario.outputs_a) for x in range(scenario.inputs_a)}
    b_polys = {y: _measurement_polys("B", y, scenario.outputs_b) for y in range(scenario.inputs_b)}

    f_vectors: dict[str, np.ndarray] = {}
    for stat in STATISTIC_ORDER:
        total = NCPolynomial({})
        for x, y, t, w_ctx in contexts:
            for a in range(scenario.outputs_a):
                key = (stat, x, y, t, a)
                if key not in b_sets:
                    continue
                family = [z_symbols[(stat, x, y, t, a, i)] for i in range(1, config.m + 1)]
                p_poly, q_poly = _node_polys(family, rule.nodes, rule.weights, alpha)
                outcome = NCPolynomial({})
                for b in b_sets[key]:
                    outcome = outcome + a_polys[x][a] * b_polys[y][b]
                total = total + (outcome * p_poly + q_poly) * w_ctx
        f_vectors[stat] = _real_functional(total, problem)

    prog = ConicProgram()
    prog.add_variables(problem.n_complex)
    prog.fix_variable(0, 1.0, origin="moment normalization")
    entries, side = real_psd_entries(problem)
    prog.add_psd_entries(side, entries, origin="moment matrix")
    q_vars = tuple(prog.add_variables(3))
    prog.add_block(
        "zero",
        [LinearForm(coeffs=tuple((q, 1.0) for q in q_vars), const=-1.0)],
        origin="statistic normalization",
    )
    accept = config.accept_set()
    _add_accept_rows(prog, q_vars, accept)
    d_coeff = 1.0 / ((alpha - 1.0) * LN2)
    div_slacks = tuple(prog.add_variables(3))
    for idx, stat in enumerate(STATISTIC_ORDER):
        add_rel_entropy_term(
            prog,
            q_vars[idx],
            _vector_form(f_vectors[stat]),
            div_slacks[idx],
            origin=f"divergence block ({stat})",
        )
        prog.add_objective_term(div_slacks[idx], d_coeff)

    return FullDivergenceProgram(
        program=prog,
        problem=problem,
        scenario=scenario,
        alpha=alpha,
        q_vars=q_vars,
        div_slacks=div_slacks,
        f_vectors=f_vectors,
        families_by_statistic={s: tuple(v) for s, v in families.items()},
        z_symbols=z_symbols,
        m=config.m,
    )


def validate_full_divergence_structure(fdp: FullDivergenceProgram) -> dict[str, int]:
    """Cross-check the assembled structure; returns the counts it verified.

    Confirms the auxiliary-family bookkeeping (one family per statistic,
    context, and A-outcome that can produce the statistic), that every
    statistic functional is present and real, and that the moment block has
    the expected side.
    """
    scenario = fdp.scenario
    expected: dict[str, int] = {s: 0 for s in STATISTIC_ORDER}
    for x, y, t, _w in _contexts(scenario):
        for a in range(scenario.outputs_a):
            for stat in STATISTIC_ORDER:
                if any(
                    scenario.test_statistic(a, b, x, y, t) == stat
                    for b in range(scenario.outputs_b)
                ):
                    expected[stat] += 1
    for stat in STATISTIC_ORDER:
        if len(fdp.families_by_statistic[stat]) != expected[stat]:
            raise ValueError(f"family count mismatch for statistic {stat}")
        if stat not in fdp.f_vectors:
            raise ValueError(f"missing functional for statistic {stat}")
    n_fam = sum(expected.values())
    if len(fdp.z_symbols) != n_fam * fdp.m:
        raise ValueError("auxiliary symbol count mismatch")
    psd_sides = [b.psd_side for b in fdp.program.blocks if b.cone == "psd"]
    if psd_sides != [fdp.problem.n_words]:
        raise ValueError("moment block has the wrong side")
    return {"families": n_fam, **{f"families_{s}": expected[s] for s in STATISTIC_ORDER}}
