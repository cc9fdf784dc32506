"""Gauss-Jacobi and Gauss-Radau-Jacobi quadrature on [0,1].

Rules are built for Jacobi-type weights t^beta0 (1-t)^beta1 via the
Golub-Welsch method: the three-term recurrence of the monic orthogonal
polynomials is known in closed form, and nodes/weights come out of a
symmetric tridiagonal eigenproblem.  Radau rules (one node pinned to an
endpoint) use Golub's modification of the last diagonal entry.

The one-sided error behavior of these rules is what makes them useful
here: for integrands whose even derivatives are nonnegative and odd
derivatives nonpositive on [0,1] (e.g. t -> c/(c+t)), the Gauss rule
underestimates the integral and the Radau rule pinned at 0 overestimates
it.  With the two-endpoint weight t^{a-1}(1-t)^{1-a} the roles of the
Radau endpoints give the reverse pair of bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import betaln

__all__ = [
    "ALPHA_ONE_MARGIN",
    "ALPHA_RANGES",
    "JacobiWeight",
    "RuleKind",
    "QuadratureRule",
    "jacobi_recurrence",
    "gauss_rule",
    "radau_rule",
    "check_exactness",
    "weight_moment",
    "validate_alpha",
    "approach_weight",
]

# Divergence orders live in (0,1) or (1,2); the margin keeps the
# 1/(alpha-1) prefactors downstream out of the catastrophic regime at the
# removable point alpha = 1.
ALPHA_ONE_MARGIN = 1e-6
ALPHA_RANGES = (
    (ALPHA_ONE_MARGIN, 1.0 - ALPHA_ONE_MARGIN),
    (1.0 + ALPHA_ONE_MARGIN, 2.0 - ALPHA_ONE_MARGIN),
)

# Every quadrature weight exponent must stay >= this floor so the weight
# remains comfortably integrable and the eigenproblem well conditioned.
# Enforced per approach: the single-endpoint families hit the floor already
# at |alpha - 1| = 0.001, the two-endpoint family only at the range ends.
_EXPONENT_FLOOR = -0.999

_MASS_TOL = 1e-10
_SELFCHECK_REL_TOL = 1e-8


class QuadratureError(ValueError):
    """Invalid weight/order parameters or a failed rule construction."""


@dataclass(frozen=True)
class JacobiWeight:
    """Weight t^beta0 (1-t)^beta1 on [0,1]; both exponents must exceed -1."""

    beta0: float
    beta1: float = 0.0

    def __post_init__(self) -> None:
        if not (self.beta0 > -1.0 and self.beta1 > -1.0):
            raise QuadratureError(
                f"weight exponents must exceed -1, got ({self.beta0}, {self.beta1})"
            )

    @property
    def mass(self) -> float:
        """Total mass of the weight, the Beta function B(beta0+1, beta1+1)."""
        return weight_moment(self, 0)


class RuleKind(str, Enum):
    GAUSS = "Gauss"
    RADAU_AT_0 = "RadauAt0"
    RADAU_AT_1 = "RadauAt1"


@dataclass(frozen=True)
class QuadratureRule:
    weight: JacobiWeight
    m: int
    kind: RuleKind
    nodes: tuple[float, ...]
    weights: tuple[float, ...]
    extended_precision_used: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if self.m < 1 or len(self.nodes) != self.m or len(self.weights) != self.m:
            raise QuadratureError("node/weight count must equal m >= 1")
        nodes = np.asarray(self.nodes)
        if np.any(np.diff(nodes) <= 0):
            raise QuadratureError("nodes must be strictly increasing")
        if nodes[0] < 0.0 or nodes[-1] > 1.0:
            raise QuadratureError("nodes must lie in [0,1]")
        if self.kind is RuleKind.RADAU_AT_0 and self.nodes[0] != 0.0:
            raise QuadratureError("RadauAt0 rule must pin nodes[0] = 0 exactly")
        if self.kind is RuleKind.RADAU_AT_1 and self.nodes[-1] != 1.0:
            raise QuadratureError("RadauAt1 rule must pin nodes[m-1] = 1 exactly")
        if any(w <= 0 for w in self.weights):
            raise QuadratureError("weights must all be positive")
        mass = self.weight.mass
        if abs(sum(self.weights) - mass) > _MASS_TOL * max(1.0, mass):
            raise QuadratureError("sum of weights disagrees with weight mass")

    def apply(self, f) -> float:
        """Apply the rule to a callable f on the nodes."""
        return float(sum(w * f(t) for t, w in zip(self.nodes, self.weights)))

    def apply_values(self, values: Sequence[float]) -> float:
        return float(np.dot(self.weights, values))


def weight_moment(weight: JacobiWeight, degree: int) -> float:
    """Moment integral of t^degree against the weight: B(beta0+degree+1, beta1+1)."""
    if degree < 0:
        raise QuadratureError("moment degree must be nonnegative")
    return math.exp(betaln(weight.beta0 + degree + 1.0, weight.beta1 + 1.0))


def jacobi_recurrence(weight: JacobiWeight, k: int) -> list[tuple[float, float]]:
    """First k coefficient pairs (a_j, b_j) of the monic three-term recurrence.

    p_{j+1}(t) = (t - a_j) p_j(t) - b_j p_{j-1}(t) on [0,1], with the usual
    convention b_0 = total mass.  Derived from the standard Jacobi recurrence
    on [-1,1] for (1-x)^{beta1} (1+x)^{beta0} under the shift t = (x+1)/2,
    which maps alpha_j -> (alpha_j+1)/2 and beta_j -> beta_j/4.
    """
    if k < 1:
        raise QuadratureError("need at least one recurrence coefficient")
    a = weight.beta1  # exponent at x=+1, i.e. t=1
    b = weight.beta0  # exponent at x=-1, i.e. t=0
    coeffs: list[tuple[float, float]] = []
    for j in range(k):
        if j == 0:
            alpha = (b - a) / (a + b + 2.0)
            beta = weight.mass
        else:
            s = 2.0 * j + a + b
            alpha = (b * b - a * a) / (s * (s + 2.0))
            if j == 1:
                beta = 4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0) ** 2 * (a + b + 3.0))
            else:
                beta = (
                    4.0 * j * (j + a) * (j + b) * (j + a + b)
                    / (s * s * (s + 1.0) * (s - 1.0))
                )
        coeffs.append(((alpha + 1.0) / 2.0, beta if j == 0 else beta / 4.0))
    return coeffs


def _monic_value(coeffs: list[tuple[float, float]], degree: int, t: float) -> float:
    """Evaluate the monic orthogonal polynomial p_degree at t via the recurrence."""
    p_prev, p = 0.0, 1.0
    for j in range(degree):
        a_j, b_j = coeffs[j]
        p_prev, p = p, (t - a_j) * p - (b_j if j > 0 else 0.0) * p_prev
    return p


def _rule_from_tridiagonal(
    diag: np.ndarray, offdiag: np.ndarray, mass: float
) -> tuple[np.ndarray, np.ndarray]:
    try:
        vals, vecs = eigh_tridiagonal(diag, offdiag)
    except Exception as exc:  # pragma: no cover - LAPACK failure is exotic
        raise QuadratureError(f"tridiagonal eigenproblem failed: {exc}") from exc
    weights = mass * vecs[0, :] ** 2
    return vals, weights


def _rule_from_tridiagonal_mp(
    diag: np.ndarray, offdiag: np.ndarray, mass: float
) -> tuple[np.ndarray, np.ndarray]:
    """Extended-precision fallback (50 digits) for ill-conditioned cases.

    Only exercised when the float64 self-check fails; documented escape hatch
    rather than the normal path.
    """
    import mpmath

    with mpmath.workdps(50):
        n = len(diag)
        J = mpmath.zeros(n, n)
        for i in range(n):
            J[i, i] = mpmath.mpf(diag[i])
        for i in range(n - 1):
            J[i, i + 1] = J[i + 1, i] = mpmath.mpf(offdiag[i])
        vals, vecs = mpmath.mp.eigsy(J)
        order = sorted(range(n), key=lambda i: vals[i])
        nodes = np.array([float(vals[i]) for i in order])
        weights = np.array([float(mass * vecs[0, i] ** 2) for i in order])
    return nodes, weights


def _tridiagonal_data(
    weight: JacobiWeight, m: int, endpoint: float | None
) -> tuple[np.ndarray, np.ndarray]:
    coeffs = jacobi_recurrence(weight, m)
    diag = np.array([c[0] for c in coeffs])
    offdiag = np.sqrt([coeffs[j][1] for j in range(1, m)])
    if endpoint is not None:
        # Golub's modification: pick the last diagonal entry so that the
        # characteristic polynomial of the Jacobi matrix vanishes at the endpoint.
        if m == 1:
            diag[0] = endpoint
        else:
            p_m1 = _monic_value(coeffs, m - 1, endpoint)
            p_m2 = _monic_value(coeffs, m - 2, endpoint)
            if p_m1 == 0.0:
                raise QuadratureError("endpoint coincides with an interior Gauss node")
            diag[m - 1] = endpoint - coeffs[m - 1][1] * p_m2 / p_m1
    return diag, offdiag


def _build_rule(weight: JacobiWeight, m: int, kind: RuleKind) -> QuadratureRule:
    if m < 1:
        raise QuadratureError("m must be >= 1")
    endpoint = {RuleKind.GAUSS: None, RuleKind.RADAU_AT_0: 0.0, RuleKind.RADAU_AT_1: 1.0}[kind]
    diag, offdiag = _tridiagonal_data(weight, m, endpoint)
    mass = weight.mass
    nodes, weights = _rule_from_tridiagonal(diag, offdiag, mass)
    used_mp = False
    if not _self_check(weight, m, kind, nodes, weights):
        nodes, weights = _rule_from_tridiagonal_mp(diag, offdiag, mass)
        used_mp = True
    nodes = np.clip(nodes, 0.0, 1.0)
    if endpoint is not None:
        # Snap the pinned eigenvalue; it is already within eigenproblem roundoff.
        idx = 0 if kind is RuleKind.RADAU_AT_0 else m - 1
        if abs(nodes[idx] - endpoint) > 1e-8:
            raise QuadratureError("pinned endpoint node drifted during eigensolve")
        nodes[idx] = endpoint
    return QuadratureRule(
        weight=weight,
        m=m,
        kind=kind,
        nodes=tuple(float(t) for t in nodes),
        weights=tuple(float(w) for w in weights),
        extended_precision_used=used_mp,
    )


def _self_check(
    weight: JacobiWeight, m: int, kind: RuleKind, nodes: np.ndarray, weights: np.ndarray
) -> bool:
    degree = 2 * m - 1 if kind is RuleKind.GAUSS else 2 * m - 2
    for d in (0, degree):
        mu = weight_moment(weight, d)
        if abs(float(np.dot(weights, nodes**d)) - mu) > _SELFCHECK_REL_TOL * max(1.0, mu):
            return False
    return True


def gauss_rule(weight: JacobiWeight, m: int) -> QuadratureRule:
    """m-point Gauss rule: exact to degree 2m-1, all nodes interior."""
    return _build_rule(weight, m, RuleKind.GAUSS)


def radau_rule(weight: JacobiWeight, m: int, endpoint: int) -> QuadratureRule:
    """m-point Radau rule with one node pinned at the given endpoint (0 or 1).

    Exact to degree 2m-2.  The pinned node's weight shrinks toward 0 as m
    grows, so endpoint special cases fade out of the bound at higher order.
    """
    if endpoint not in (0, 1):
        raise QuadratureError("endpoint must be 0 or 1")
    kind = RuleKind.RADAU_AT_0 if endpoint == 0 else RuleKind.RADAU_AT_1
    return _build_rule(weight, m, kind)


def check_exactness(rule: QuadratureRule, max_degree: int) -> float:
    """Max absolute error of the rule on monomials t^d, d = 0..max_degree."""
    nodes = np.asarray(rule.nodes)
    weights = np.asarray(rule.weights)
    worst = 0.0
    for d in range(max_degree + 1):
        err = abs(float(np.dot(weights, nodes**d)) - weight_moment(rule.weight, d))
        worst = max(worst, err)
    return worst


def validate_alpha(alpha: float) -> float:
    """Clamp-free validation of the Renyi order against the supported ranges."""
    for lo, hi in ALPHA_RANGES:
        if lo <= alpha <= hi:
            return float(alpha)
    raise QuadratureError(
        f"alpha={alpha} outside supported ranges {ALPHA_RANGES}"
    )


def _floored_weight(beta0: float, beta1: float, approach: str) -> JacobiWeight:
    if min(beta0, beta1) < _EXPONENT_FLOOR:
        raise QuadratureError(
            f"approach {approach!r} weight exponent below {_EXPONENT_FLOOR}: "
            f"({beta0}, {beta1})"
        )
    return JacobiWeight(beta0, beta1)


def approach_weight(alpha: float, approach: str) -> JacobiWeight:
    """Primary Jacobi weight for each bound-construction approach.

    '1a' (alpha in (0,1)):  t^{alpha-1}; its companion family t^{-alpha}
         is this same map evaluated at 1-alpha.
    '1b' (alpha in (1,2)):  t^{alpha-2}; companion t^{1-alpha} is the '1a'
         weight at 2-alpha.
    '2':  the two-endpoint weight t^{alpha-1} (1-t)^{1-alpha}.
    """
    validate_alpha(alpha)
    if approach == "1a":
        if alpha >= 1.0:
            raise QuadratureError("approach 1a requires alpha in (0,1)")
        return _floored_weight(alpha - 1.0, 0.0, approach)
    if approach == "1b":
        if alpha <= 1.0:
            raise QuadratureError("approach 1b requires alpha in (1,2)")
        return _floored_weight(alpha - 2.0, 0.0, approach)
    if approach == "2":
        return _floored_weight(alpha - 1.0, 1.0 - alpha, approach)
    raise QuadratureError(f"unknown approach {approach!r}; expected 1a, 1b, or 2")
