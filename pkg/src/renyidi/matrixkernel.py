"""Exact finite-dimensional oracles and matrix-level variational bound evaluation.

Everything the relaxation machinery (moment matrices, conic programs) only ever
bounds is evaluated here exactly, by eigendecomposition, on concrete matrices:
the Petz trace functional, its divergence, pretty-good fidelity, the Chernoff
coefficient, and the quadrature-based two-sided bounds with their inner
minimizations solved in closed form.  The two routes never share code, so one
can certify the other.

Inner quadratic forms (`inner_variational_value`) are convex in the matrix
variable Z; their stationarity conditions are Sylvester equations A Z + Z B = C
with A, B positive semi-definite, solved exactly in the joint eigenbasis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import (
    JacobiWeight,
    gauss_rule,
    radau_rule,
    validate_alpha,
)

__all__ = [
    "KernelInclusionError",
    "InnerSolution",
    "BoundReport",
    "check_hermitian",
    "check_state",
    "kernel_included",
    "petz_trace",
    "petz_divergence",
    "conditional_petz_entropy",
    "pretty_good_fidelity",
    "quantum_chernoff",
    "inner_variational_value",
    "bound_value",
    "perturb_for_inclusion",
    "seeded_state_pair",
]

_HERMITIAN_TOL = 1e-12
_PSD_TOL = 1e-10
_KERNEL_RTOL = 1e-9   # relative spectral threshold for the inclusion test
_PINV_RTOL = 1e-10    # pseudo-inverse cutoff for the endpoint trace
_EIG_ZERO_RTOL = 1e-12

INNER_FORMS = ("A1-eq1", "A1-eq2", "A1P2-eq1", "A1P2-eq2", "A2")
APPROACHES = ("1-lower", "1-upper", "2-lower", "2-upper")


class KernelInclusionError(ValueError):
    """Raised when a bound construction requires supp(rho) <= supp(sigma)."""


def check_hermitian(mat: np.ndarray, name: str = "operator") -> np.ndarray:
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.conj().T).max() > _HERMITIAN_TOL * scale:
        raise ValueError(f"{name} is not Hermitian within tolerance")
    return mat


def check_state(mat: np.ndarray, name: str = "state") -> np.ndarray:
    """Validate a (sub)normalized quantum state: PSD, 0 < trace <= 1 + slack."""
    mat = check_hermitian(mat, name)
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() < -_PSD_TOL:
        raise ValueError(f"{name} is not positive semi-definite")
    tr = float(np.trace(mat).real)
    if not (0.0 < tr <= 1.0 + _PSD_TOL):
        raise ValueError(f"{name} trace {tr} outside (0, 1]")
    return mat


def _eig_state(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition with small negative eigenvalues clipped to zero."""
    vals, vecs = np.linalg.eigh(mat)
    cutoff = _EIG_ZERO_RTOL * max(1.0, float(vals.max(initial=0.0)))
    vals = np.where(vals > cutoff, vals, 0.0)
    return vals, vecs


def kernel_included(rho: np.ndarray, sigma: np.ndarray, rtol: float = _KERNEL_RTOL) -> bool:
    """True when supp(rho) lies inside supp(sigma) up to the relative threshold."""
    p, V = np.linalg.eigh(np.asarray(sigma, dtype=complex))
    ker = V[:, p <= rtol * max(p.max(initial=0.0), 0.0)]
    if ker.shape[1] == 0:
        return True
    block = ker.conj().T @ np.asarray(rho, dtype=complex) @ ker
    rho_norm = float(np.linalg.eigvalsh(np.asarray(rho, dtype=complex)).max())
    return float(np.linalg.eigvalsh(block).max()) <= rtol * max(rho_norm, 1e-300)


def _overlap_data(rho, sigma):
    q, U = _eig_state(np.asarray(rho, dtype=complex))
    p, V = _eig_state(np.asarray(sigma, dtype=complex))
    overlap = np.abs(V.conj().T @ U) ** 2  # overlap[j, k] = |<psi_j|phi_k>|^2
    return q, p, overlap


def petz_trace(rho: np.ndarray, sigma: np.ndarray, alpha: float) -> float:
    """Trace functional sum over strictly positive eigenvalue pairs.

    For alpha > 1 without kernel inclusion the quantity is divergent by
    convention and +inf is returned.
    """
    validate_alpha(alpha)
    rho = check_state(rho, "rho")
    sigma = check_state(sigma, "sigma")
    if alpha > 1.0 and not kernel_included(rho, sigma):
        return math.inf
    q, p, overlap = _overlap_data(rho, sigma)
    jj, kk = np.nonzero(np.outer(p > 0, q > 0))
    return float(np.sum(q[kk] ** alpha * p[jj] ** (1.0 - alpha) * overlap[jj, kk]))


def petz_divergence(rho: np.ndarray, sigma: np.ndarray, alpha: float) -> float:
    """Renyi divergence (base 2) of order alpha; +inf in the divergent cases."""
    value = petz_trace(rho, sigma, alpha)
    tr_rho = float(np.trace(np.asarray(rho)).real)
    if alpha > 1.0:
        if math.isinf(value):
            return math.inf
    else:
        if value <= 0.0:  # orthogonal supports
            return math.inf
    return math.log2(value / tr_rho) / (alpha - 1.0)


def conditional_petz_entropy(rho_ab: np.ndarray, dim_a: int, alpha: float) -> float:
    """Conditional Renyi entropy of A given B: -D_alpha(rho_AB || 1_A (x) rho_B)."""
    rho_ab = check_state(rho_ab, "rho_ab")
    d = rho_ab.shape[0]
    if d % dim_a != 0:
        raise ValueError("dim_a must divide the joint dimension")
    dim_b = d // dim_a
    rho_b = np.trace(rho_ab.reshape(dim_a, dim_b, dim_a, dim_b), axis1=0, axis2=2)
    sigma = np.kron(np.eye(dim_a), rho_b)
    # sigma has trace dim_a; bypass the state normalization check on purpose.
    value = _petz_trace_unchecked(rho_ab, sigma, alpha)
    if alpha > 1.0 and math.isinf(value):
        return -math.inf
    if alpha < 1.0 and value <= 0.0:
        return -math.inf
    return -math.log2(value) / (alpha - 1.0)


def _petz_trace_unchecked(rho, sigma, alpha):
    validate_alpha(alpha)
    if alpha > 1.0 and not kernel_included(rho, sigma):
        return math.inf
    q, p, overlap = _overlap_data(rho, sigma)
    jj, kk = np.nonzero(np.outer(p > 0, q > 0))
    return float(np.sum(q[kk] ** alpha * p[jj] ** (1.0 - alpha) * overlap[jj, kk]))


def pretty_good_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Tr[rho^(1/2) sigma^(1/2)]; shares the petz_trace code path at alpha = 1/2."""
    return petz_trace(rho, sigma, 0.5)


def quantum_chernoff(rho: np.ndarray, sigma: np.ndarray) -> tuple[float, float]:
    """Minimize the trace functional over s in (0,1) by golden-section search.

    The objective is convex in s, so the search converges to the global
    infimum; returns (value, s_star).
    """
    rho = check_state(rho, "rho")
    sigma = check_state(sigma, "sigma")
    q, p, overlap = _overlap_data(rho, sigma)
    jj, kk = np.nonzero(np.outer(p > 0, q > 0))
    qv, pv, ov = q[kk], p[jj], overlap[jj, kk]

    def objective(s: float) -> float:
        return float(np.sum(qv**s * pv ** (1.0 - s) * ov))

    lo, hi = 1e-9, 1.0 - 1e-9
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - invphi * (hi - lo)
    x2 = lo + invphi * (hi - lo)
    f1, f2 = objective(x1), objective(x2)
    while hi - lo > 1e-12:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = objective(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = objective(x2)
    s_star = 0.5 * (lo + hi)
    return objective(s_star), s_star


@dataclass(frozen=True)
class InnerSolution:
    value: float
    z_opt: np.ndarray
    regularized: bool = False


def _sylvester_eig_solve(a_mat, b_mat, c_mat):
    """Solve A Z + Z B = C for Hermitian PSD A, B in their joint eigenbases.

    Pairs of (near-)zero eigenvalues make the system singular; those components
    are regularized toward zero and flagged.
    """
    a_vals, a_vecs = np.linalg.eigh(a_mat)
    b_vals, b_vecs = np.linalg.eigh(b_mat)
    c_tilde = a_vecs.conj().T @ c_mat @ b_vecs
    denom = a_vals[:, None] + b_vals[None, :]
    scale = max(float(a_vals.max(initial=0.0)), float(b_vals.max(initial=0.0)), 1e-300)
    singular = denom <= 1e-14 * scale
    regularized = bool(np.any(singular & (np.abs(c_tilde) > 1e-12 * scale)))
    z_tilde = np.where(singular, 0.0, c_tilde / np.where(singular, 1.0, denom))
    return a_vecs @ z_tilde @ b_vecs.conj().T, regularized


def _form_quadratic(rho, sigma, t, form):
    """Sylvester data (A, B, C) and an evaluator for each inner quadratic form."""
    one = np.eye(rho.shape[0])
    if form in ("A1-eq1", "A1P2-eq1"):
        def evaluate(z):
            zp = one + z
            return float((np.trace(rho @ z.conj().T @ z) + t * np.trace(sigma @ zp @ zp.conj().T)).real)
        return t * sigma, rho, -t * sigma, evaluate
    if form == "A1-eq2":
        def evaluate(z):
            zp = one + z
            return float((np.trace(sigma @ z @ z.conj().T) + t * np.trace(rho @ zp.conj().T @ zp)).real)
        return sigma, t * rho, -t * rho, evaluate
    if form == "A1P2-eq2":
        def evaluate(z):
            zp = one + z
            return float((np.trace(rho @ zp.conj().T @ zp) + np.trace(sigma @ z @ z.conj().T) / t).real)
        return sigma / t, rho, -rho, evaluate
    if form == "A2":
        def evaluate(z):
            return float((
                np.trace(rho @ (one + z + z.conj().T + (1.0 - t) * z.conj().T @ z))
                + t * np.trace(sigma @ z @ z.conj().T)
            ).real)
        return t * sigma, (1.0 - t) * rho, -rho, evaluate
    raise ValueError(f"unknown inner form {form!r}; expected one of {INNER_FORMS}")


def inner_variational_value(
    rho: np.ndarray, sigma: np.ndarray, t: float, form: str
) -> InnerSolution:
    """Exact infimum of one inner quadratic form over unconstrained complex Z.

    The minimizer solves a Sylvester system; the returned value is the raw
    infimum of the stated quadratic (prefactors and identities that relate it
    to eigenvalue sums live in the callers/tests).
    """
    if not (t > 0.0):
        raise ValueError("t must be positive")
    rho = check_hermitian(rho, "rho")
    sigma = check_hermitian(sigma, "sigma")
    a_mat, b_mat, c_mat, evaluate = _form_quadratic(rho, sigma, t, form)
    z_opt, regularized = _sylvester_eig_solve(a_mat, b_mat, c_mat)
    return InnerSolution(value=evaluate(z_opt), z_opt=z_opt, regularized=regularized)


def _endpoint_inf_value(rho: np.ndarray, sigma: np.ndarray) -> float:
    """inf_Z Tr[rho (Z + Z^dag)] + Tr[sigma Z Z^dag] = -Tr[rho^2 sigma^+].

    Pseudo-inverse with a relative cutoff; finite only under kernel inclusion,
    which callers must have checked.
    """
    p, V = np.linalg.eigh(sigma)
    keep = p > _PINV_RTOL * max(float(p.max(initial=0.0)), 0.0)
    rho2 = rho @ rho
    diag = np.einsum("ij,jk,ki->i", V.conj().T, rho2, V).real
    return -float(np.sum(diag[keep] / p[keep]))


@dataclass(frozen=True)
class BoundReport:
    """One evaluated quadrature bound: value = constant_cm + prefactor * sum(terms).

    per_node_terms stores the weighted inner-infimum of each node in theorem
    order (first weight family then second, endpoint term first where one
    exists) without the sine prefactor, so SDP builders can reuse the pieces.
    """

    value: float
    alpha: float
    m: int
    approach: str
    per_node_terms: tuple[float, ...]
    constant_cm: float

    @property
    def prefactor(self) -> float:
        return math.sin(self.alpha * math.pi) / math.pi

    def __post_init__(self) -> None:
        if self.approach not in APPROACHES:
            raise ValueError(f"unknown approach {self.approach!r}")
        recon = self.constant_cm + self.prefactor * sum(self.per_node_terms)
        if abs(self.value - recon) > 1e-10 * max(1.0, abs(self.value)):
            raise ValueError("bound report pieces do not reproduce the value")


def _inner(rho, sigma, t, form):
    return inner_variational_value(rho, sigma, t, form).value


def bound_value(
    rho: np.ndarray, sigma: np.ndarray, alpha: float, m: int, approach: str
) -> BoundReport:
    """Evaluate one quadrature bound on the trace functional exactly.

    approach selects construction and direction:
      1-lower: two Gauss families; lower bound (valid both alpha ranges).
      1-upper: two 0-pinned Radau families with endpoint handling; alpha in (1,2).
      2-lower: 1-pinned Radau on the two-endpoint weight; alpha in (0,1).
      2-upper: same rule, reversed inequality; alpha in (1,2).
    Kernel inclusion supp(rho) <= supp(sigma) is required whenever the
    construction invokes a pseudo-inverse or sum completion (1-upper, 2-*).
    """
    validate_alpha(alpha)
    if approach not in APPROACHES:
        raise ValueError(f"unknown approach {approach!r}; expected one of {APPROACHES}")
    rho = check_state(rho, "rho")
    sigma = check_state(sigma, "sigma")
    tr_rho = float(np.trace(rho).real)
    pref = math.sin(alpha * math.pi) / math.pi
    sin_shift = math.sin((alpha - 1.0) * math.pi) / math.pi

    if approach == "1-upper" and alpha < 1.0:
        raise ValueError("1-upper requires alpha in (1,2)")
    if approach == "2-lower" and alpha > 1.0:
        raise ValueError("2-lower requires alpha in (0,1)")
    if approach == "2-upper" and alpha < 1.0:
        raise ValueError("2-upper requires alpha in (1,2)")
    needs_inclusion = approach in ("2-lower", "2-upper", "1-upper")
    if needs_inclusion and not kernel_included(rho, sigma):
        raise KernelInclusionError("supp(rho) must lie inside supp(sigma)")

    terms: list[float] = []
    if approach == "1-lower" and alpha < 1.0:
        fam1 = gauss_rule(JacobiWeight(alpha - 1.0, 0.0), m)
        fam2 = gauss_rule(JacobiWeight(-alpha, 0.0), m)
        for t, w in zip(fam1.nodes, fam1.weights):
            terms.append(w / t * _inner(rho, sigma, t, "A1-eq1"))
        for t, w in zip(fam2.nodes, fam2.weights):
            terms.append(w / t * _inner(rho, sigma, t, "A1-eq2"))
        constant = 0.0
    elif approach == "1-lower":  # alpha in (1,2), Gauss variant
        fam1 = gauss_rule(JacobiWeight(alpha - 2.0, 0.0), m)
        fam2 = gauss_rule(JacobiWeight(1.0 - alpha, 0.0), m)
        for t, w in zip(fam1.nodes, fam1.weights):
            terms.append(w * _inner(rho, sigma, t, "A1P2-eq1"))
        for t, w in zip(fam2.nodes, fam2.weights):
            terms.append(w / t * _inner(rho, sigma, t, "A1P2-eq2"))
        constant = sin_shift * tr_rho * (
            1.0 / (alpha - 1.0) + sum(w / t for t, w in zip(fam2.nodes, fam2.weights))
        )
    elif approach == "1-upper":
        fam1 = radau_rule(JacobiWeight(alpha - 2.0, 0.0), m, 0)
        fam2 = radau_rule(JacobiWeight(1.0 - alpha, 0.0), m, 0)
        # family-1 endpoint contributes w_1 Tr[rho], absorbed into the constant
        # through the exact weight-mass identity sum(w) = 1/(alpha-1).
        for t, w in zip(fam1.nodes[1:], fam1.weights[1:]):
            terms.append(w * _inner(rho, sigma, t, "A1P2-eq1"))
        terms.append(fam2.weights[0] * _endpoint_inf_value(rho, sigma))
        for t, w in zip(fam2.nodes[1:], fam2.weights[1:]):
            terms.append(w / t * _inner(rho, sigma, t, "A1P2-eq2"))
        constant = sin_shift * tr_rho * (
            1.0 / (alpha - 1.0)
            + sum(w / t for t, w in zip(fam2.nodes[1:], fam2.weights[1:]))
        )
    else:  # 2-lower / 2-upper
        rule = radau_rule(JacobiWeight(alpha - 1.0, 1.0 - alpha), m, 1)
        for t, w in zip(rule.nodes, rule.weights):
            terms.append(w / t * (_inner(rho, sigma, t, "A2") - tr_rho))
        constant = tr_rho * (
            1.0 + pref * sum(w / t for t, w in zip(rule.nodes, rule.weights))
        )

    value = constant + pref * sum(terms)
    return BoundReport(
        value=value,
        alpha=alpha,
        m=m,
        approach=approach,
        per_node_terms=tuple(terms),
        constant_cm=constant,
    )


def perturb_for_inclusion(
    rho: np.ndarray, sigma: np.ndarray, delta: float, alpha: float
) -> tuple[np.ndarray, float]:
    """Mix sigma toward rho so kernel inclusion holds by construction.

    Returns tau = (1-delta) sigma + delta rho and the trace-functional error
    bound (2 delta)^(1-alpha) valid for normalized states.
    """
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0,1)")
    validate_alpha(alpha)
    tau = (1.0 - delta) * np.asarray(sigma, dtype=complex) + delta * np.asarray(rho, dtype=complex)
    return tau, (2.0 * delta) ** (1.0 - alpha)


def seeded_state_pair(
    dim: int, seed: int, min_eig: float = 0.02
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic full-rank density-matrix pair with eigenvalues >= min_eig."""
    if dim * min_eig >= 1.0:
        raise ValueError("min_eig too large for the dimension")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        unitary, _ = np.linalg.qr(raw)
        probs = rng.dirichlet(np.ones(dim))
        eigs = (1.0 - dim * min_eig) * probs + min_eig
        out.append((unitary * eigs) @ unitary.conj().T)
    return out[0], out[1]
