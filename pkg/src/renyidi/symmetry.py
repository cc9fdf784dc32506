"""Block reduction of moment programs under relabeling symmetries.

A relabeling of measurement outcomes and inputs, together with a matching
permutation of the auxiliary families, acts on canonical words as an algebra
automorphism.  On the real moment slots the action is linear (the identity
moment occupies slot 0, so affine shifts fold into that coordinate); on the
moment matrix it is a congruence by an integer word-basis matrix.  For a
commuting family of such involutions whose program data are invariant, the
optimum is attained on the joint fixed subspace of the variable maps, and in
a joint sign eigenbasis the moment matrix splits into one diagonal block per
sign sector.  Solving over the fixed subspace with per-sector semidefinite
blocks is equivalent to the full program at a fraction of the cubic cost.

Everything here is verified numerically at build time: involution and
commutation of the word matrices, the congruence identity between the
variable maps and the word matrices, invariance of caller-supplied data
vectors, and vanishing of the cross-sector blocks on a random fixed point.
Builders raise on structural failures and silently drop relabelings that
merely fail data invariance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import qr
from scipy.sparse.csgraph import connected_components

from .ncalgebra import MomentProblem, Monomial, NCPolynomial, OperatorSymbol

__all__ = [
    "Relabeling",
    "MomentReduction",
    "ReducedBlock",
    "word_matrix",
    "variable_matrix",
    "build_reduction",
]

# separation band for exact-zero detection: coefficients are dyadic rationals
# over common column norms, so true zeros cancel exactly in float arithmetic
_DROP_TOL = 1e-10


def _symbol_poly(sym: OperatorSymbol) -> NCPolynomial:
    return NCPolynomial.from_word(Monomial(((sym, False),)))


@dataclass(frozen=True)
class Relabeling:
    """Algebra automorphism given by images of the operator symbols.

    Symbols absent from the map are fixed.  Images must have real
    coefficients, and the map must square to the identity; both are checked
    when a reduction is built.
    """

    name: str
    images: Mapping[OperatorSymbol, NCPolynomial]

    def image_of_word(self, word: Monomial) -> NCPolynomial:
        result = NCPolynomial.constant(1.0)
        for sym, dagger in word.letters:
            base = self.images.get(sym)
            if base is None:
                base = _symbol_poly(sym)
            result = result * (base.adjoint() if dagger else base)
        return result


def word_matrix(rel: Relabeling, words: Sequence[Monomial]) -> np.ndarray:
    """Matrix whose column c expands the image of words[c] in the word basis.

    Raises when an image leaves the span of the word set; level and local
    product sets contain every subword of their members, so outcome
    complements and input swaps always stay inside them.
    """
    index = {w: i for i, w in enumerate(words)}
    n = len(words)
    s_mat = np.zeros((n, n))
    for c, w in enumerate(words):
        for term, coeff in rel.image_of_word(w).terms.items():
            if abs(coeff.imag) > 1e-12:
                raise ValueError("relabeling must act with real coefficients")
            r = index.get(term)
            if r is None:
                raise ValueError(
                    f"image of word {w} leaves the word set at {term}"
                )
            s_mat[r, c] += coeff.real
    return s_mat


def variable_matrix(rel: Relabeling, problem: MomentProblem) -> sparse.csr_matrix:
    """Linear action of the relabeling on the real moment slots.

    Row k expands the real part of the image moment of var_words[k]; the
    conjugation flag from lookup is immaterial because real parts agree.
    """
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for k, w in enumerate(problem.var_words):
        acc: dict[int, float] = {}
        for term, coeff in rel.image_of_word(w).terms.items():
            if abs(coeff.imag) > 1e-12:
                raise ValueError("relabeling must act with real coefficients")
            k2, _conj = problem.lookup(term)
            acc[k2] = acc.get(k2, 0.0) + coeff.real
        for k2, v in sorted(acc.items()):
            if v != 0.0:
                rows.append(k)
                cols.append(k2)
                vals.append(v)
    n = problem.n_complex
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class ReducedBlock:
    """One sign sector of the reduced moment matrix.

    Entry (entry_i[t], entry_j[t]) of the block, upper triangle, carries
    coefficient coeffs[t] on reduced variable cols[t].
    """

    side: int
    entry_i: np.ndarray
    entry_j: np.ndarray
    cols: np.ndarray
    coeffs: np.ndarray


@dataclass(frozen=True, eq=False)
class MomentReduction:
    """Fixed-subspace parametrization plus per-sector moment blocks.

    The original moment vector is basis @ u; its identity slot is
    normalization_row @ u, which downstream programs pin to one.  Sector
    sides sum to the word count, and variable_maps holds the verified
    generator actions for invariance checks on later data vectors.
    """

    basis: sparse.csc_matrix
    dim: int
    normalization_row: np.ndarray
    blocks: tuple[ReducedBlock, ...]
    sector_dims: tuple[int, ...]
    variable_maps: tuple[sparse.csr_matrix, ...]
    generator_names: tuple[str, ...]
    checks: Mapping[str, float]

    def reduce_vector(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(self.basis.T @ np.asarray(vec, float)).ravel()

    def expand_point(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(self.basis @ np.asarray(u, float)).ravel()

    def invariance_defect(self, vec: np.ndarray) -> float:
        """Largest violation of R^T vec = vec over the generators."""
        vec = np.asarray(vec, float)
        worst = 0.0
        for r_mat in self.variable_maps:
            diff = r_mat.T @ vec - vec
            worst = max(worst, float(np.abs(diff).max(initial=0.0)))
        return worst


def _real_moment_matrix(problem: MomentProblem, y: np.ndarray) -> np.ndarray:
    mat = np.zeros((problem.n_words, problem.n_words))
    mask = problem.entry_var >= 0
    mat[mask] = y[problem.entry_var[mask]]
    return mat


def _probe_congruence(
    problem: MomentProblem,
    r_mat: sparse.csr_matrix,
    s_mat: np.ndarray,
    rng: np.random.Generator,
) -> float:
    worst = 0.0
    for _ in range(3):
        y = rng.standard_normal(problem.n_complex)
        direct = _real_moment_matrix(problem, np.asarray(r_mat @ y).ravel())
        conjugated = s_mat.T @ _real_moment_matrix(problem, y) @ s_mat
        worst = max(worst, float(np.abs(direct - conjugated).max()))
    return worst


def _fixed_basis(avg: sparse.csr_matrix) -> sparse.csc_matrix:
    """Well-conditioned sparse column basis of a sparse projector's range.

    The projector decomposes over connected components of its support graph;
    each component contributes trace-many columns, chosen by pivoted QR and
    normalized, so the basis stays as sparse as the projector itself.
    """
    n = avg.shape[0]
    pattern = (abs(avg) + abs(avg.T)).tocoo()
    graph = sparse.csr_matrix(
        (np.ones_like(pattern.data), (pattern.row, pattern.col)), shape=(n, n)
    )
    _n_comp, labels = connected_components(graph, directed=False)
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    bounds = np.flatnonzero(
        np.r_[True, sorted_labels[1:] != sorted_labels[:-1], True]
    )
    avg_csr = avg.tocsr()
    avg_csc = avg.tocsc()
    col_rows: list[np.ndarray] = []
    col_cols: list[np.ndarray] = []
    col_vals: list[np.ndarray] = []
    next_col = 0
    for s, e in zip(bounds[:-1], bounds[1:]):
        comp = np.sort(order[s:e])
        block = avg_csr[comp][:, comp].toarray()
        trace = float(np.trace(block))
        rank = int(round(trace))
        if abs(trace - rank) > 1e-8:
            raise ValueError("group average is not a projector on a component")
        if rank == 0:
            continue  # coordinates forced to zero on the fixed subspace
        _q, _r, piv = qr(block, pivoting=True)
        for local in piv[:rank]:
            column = avg_csc[:, int(comp[local])]
            norm = math.sqrt(float(column.multiply(column).sum()))
            col_rows.append(column.indices.copy())
            col_cols.append(np.full(column.nnz, next_col, dtype=np.int64))
            col_vals.append(column.data / norm)
            next_col += 1
    basis = sparse.csc_matrix(
        (
            np.concatenate(col_vals) if col_vals else np.zeros(0),
            (
                np.concatenate(col_rows) if col_rows else np.zeros(0, dtype=np.int64),
                np.concatenate(col_cols) if col_cols else np.zeros(0, dtype=np.int64),
            ),
        ),
        shape=(n, next_col),
    )
    return basis


def _sector_columns(
    s_elements: Mapping[tuple[int, ...], np.ndarray], n_gen: int, n_words: int
) -> list[np.ndarray]:
    """Joint sign eigenbasis columns, one dense matrix per nonempty sector."""
    sectors: list[np.ndarray] = []
    for signs in itertools.product((1.0, -1.0), repeat=n_gen):
        proj = np.zeros((n_words, n_words))
        for exps, s_mat in s_elements.items():
            character = 1.0
            for sign, exp in zip(signs, exps):
                if exp:
                    character *= sign
            proj += character * s_mat
        proj /= len(s_elements)
        trace = float(np.trace(proj))
        dim = int(round(trace))
        if abs(trace - dim) > 1e-8:
            raise ValueError("sign sector dimension is not an integer")
        if dim == 0:
            continue
        _q, _r, piv = qr(proj, pivoting=True)
        cols = proj[:, piv[:dim]].copy()
        cols /= np.linalg.norm(cols, axis=0, keepdims=True)
        sectors.append(cols)
    total = sum(c.shape[1] for c in sectors)
    if total != n_words:
        raise ValueError("sign sector dimensions do not sum to the word count")
    return sectors


def _sector_block(
    problem: MomentProblem,
    v_cols: np.ndarray,
    basis: sparse.csc_matrix,
    var_cells: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[ReducedBlock, float, float]:
    """Entries of one congruent sector block, reduced to the fixed subspace."""
    side = v_cols.shape[1]
    rows_l: list[np.ndarray] = []
    cols_l: list[np.ndarray] = []
    vals_l: list[np.ndarray] = []
    kept_min = math.inf
    dropped_max = 0.0
    for k, (cell_r, cell_c) in enumerate(var_cells):
        if cell_r.size == 0:
            continue
        # symmetric by construction: cells carry both orientations
        t_mat = v_cols[cell_r, :].T @ v_cols[cell_c, :]
        mag = np.abs(t_mat)
        keep = np.triu(mag > _DROP_TOL)
        low = mag[np.triu(mag <= _DROP_TOL, k=0) & (mag > 0.0)]
        if low.size:
            dropped_max = max(dropped_max, float(low.max()))
        idx_i, idx_j = np.nonzero(keep)
        if idx_i.size == 0:
            continue
        vals = t_mat[idx_i, idx_j]
        kept_min = min(kept_min, float(np.abs(vals).min()))
        rows_l.append(idx_j * (idx_j + 1) // 2 + idx_i)
        cols_l.append(np.full(idx_i.size, k, dtype=np.int64))
        vals_l.append(vals)
    n_svec = side * (side + 1) // 2
    a_y = sparse.csr_matrix(
        (
            np.concatenate(vals_l) if vals_l else np.zeros(0),
            (
                np.concatenate(rows_l) if rows_l else np.zeros(0, dtype=np.int64),
                np.concatenate(cols_l) if cols_l else np.zeros(0, dtype=np.int64),
            ),
        ),
        shape=(n_svec, problem.n_complex),
    )
    a_u = (a_y @ basis).tocoo()
    # the basis product can leave cancellation residue at machine scale;
    # scrub it under the same audited separation band
    mag = np.abs(a_u.data)
    keep = mag > _DROP_TOL
    low = mag[~keep & (mag > 0.0)]
    if low.size:
        dropped_max = max(dropped_max, float(low.max()))
    if keep.any():
        kept_min = min(kept_min, float(mag[keep].min()))
    # invert the svec packing back to matrix coordinates
    table_i = np.empty(n_svec, dtype=np.int64)
    table_j = np.empty(n_svec, dtype=np.int64)
    for j in range(side):
        base = j * (j + 1) // 2
        table_i[base : base + j + 1] = np.arange(j + 1)
        table_j[base : base + j + 1] = j
    block = ReducedBlock(
        side=side,
        entry_i=table_i[a_u.row[keep]],
        entry_j=table_j[a_u.row[keep]],
        cols=a_u.col[keep].astype(np.int64),
        coeffs=a_u.data[keep],
    )
    return block, kept_min, dropped_max


def _variable_cells(
    problem: MomentProblem,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per variable, the matrix cells it occupies, both orientations."""
    per_var_r: list[list[int]] = [[] for _ in range(problem.n_complex)]
    per_var_c: list[list[int]] = [[] for _ in range(problem.n_complex)]
    n = problem.n_words
    ev = problem.entry_var
    for r in range(n):
        for c in range(r, n):
            k = int(ev[r, c])
            if k < 0:
                continue
            per_var_r[k].append(r)
            per_var_c[k].append(c)
            if c != r:
                per_var_r[k].append(c)
                per_var_c[k].append(r)
    return [
        (np.array(rs, dtype=np.int64), np.array(cs, dtype=np.int64))
        for rs, cs in zip(per_var_r, per_var_c)
    ]


def build_reduction(
    problem: MomentProblem,
    relabelings: Sequence[Relabeling],
    check_vectors: Sequence[np.ndarray] = (),
) -> MomentReduction | None:
    """Verify the relabelings and build the blocked fixed-subspace reduction.

    Relabelings that fail invariance of a check vector are dropped (the data
    simply lacks that symmetry); structural failures raise.  Returns None
    when no relabeling survives.
    """
    rng = np.random.default_rng(7)
    survivors: list[tuple[Relabeling, np.ndarray, sparse.csr_matrix]] = []
    checks: dict[str, float] = {}
    for rel in relabelings:
        s_mat = word_matrix(rel, problem.words)
        defect = float(np.abs(s_mat @ s_mat - np.eye(problem.n_words)).max())
        if defect > 1e-9:
            raise ValueError(f"relabeling {rel.name!r} is not an involution")
        r_mat = variable_matrix(rel, problem)
        cong = _probe_congruence(problem, r_mat, s_mat, rng)
        if cong > 1e-9:
            raise ValueError(
                f"relabeling {rel.name!r} breaks the moment-matrix congruence"
            )
        invariant = True
        for vec in check_vectors:
            diff = np.abs(r_mat.T @ np.asarray(vec, float) - vec).max(initial=0.0)
            if diff > 1e-10 * max(1.0, float(np.abs(vec).max(initial=0.0))):
                invariant = False
                break
        if not invariant:
            continue
        checks[f"involution[{rel.name}]"] = defect
        checks[f"congruence[{rel.name}]"] = cong
        survivors.append((rel, s_mat, r_mat))
    # keep only a mutually commuting family, preferring earlier entries
    kept: list[tuple[Relabeling, np.ndarray, sparse.csr_matrix]] = []
    for cand in survivors:
        if all(
            float(np.abs(cand[1] @ prev[1] - prev[1] @ cand[1]).max()) <= 1e-9
            for prev in kept
        ):
            kept.append(cand)
    if not kept:
        return None

    n_gen = len(kept)
    s_elements: dict[tuple[int, ...], np.ndarray] = {}
    r_elements: dict[tuple[int, ...], sparse.csr_matrix] = {}
    eye_r = sparse.identity(problem.n_complex, format="csr")
    for exps in itertools.product((0, 1), repeat=n_gen):
        s_prod = np.eye(problem.n_words)
        r_prod = eye_r
        for exp, (_rel, s_mat, r_mat) in zip(exps, kept):
            if exp:
                s_prod = s_prod @ s_mat
                r_prod = (r_prod @ r_mat).tocsr()
        s_elements[exps] = s_prod
        r_elements[exps] = r_prod

    avg = sum(r_elements.values()) / len(r_elements)
    avg = avg.tocsr()
    probe = rng.standard_normal(problem.n_complex)
    proj_defect = float(np.abs(avg @ (avg @ probe) - avg @ probe).max())
    if proj_defect > 1e-9:
        raise ValueError("variable maps do not average to a projector")
    checks["projector"] = proj_defect

    basis = _fixed_basis(avg)
    normalization_row = np.asarray(basis[0, :].todense()).ravel()
    if float(np.abs(normalization_row).max(initial=0.0)) == 0.0:
        raise ValueError("identity moment is not reachable on the fixed subspace")

    sectors = _sector_columns(s_elements, n_gen, problem.n_words)
    var_cells = _variable_cells(problem)
    blocks: list[ReducedBlock] = []
    kept_min = math.inf
    dropped_max = 0.0
    for v_cols in sectors:
        block, k_min, d_max = _sector_block(problem, v_cols, basis, var_cells)
        blocks.append(block)
        kept_min = min(kept_min, k_min)
        dropped_max = max(dropped_max, d_max)
    if dropped_max > 0.0 and (dropped_max > 1e-13 or kept_min < 1e-7):
        raise ValueError(
            "sector entries are not cleanly separated from zero "
            f"(dropped {dropped_max:.2e}, kept {kept_min:.2e})"
        )
    checks["entry_drop_max"] = dropped_max
    checks["entry_keep_min"] = kept_min if math.isfinite(kept_min) else 0.0

    # cross-sector blocks must vanish on the fixed subspace
    u_probe = rng.standard_normal(basis.shape[1])
    y_fix = np.asarray(basis @ u_probe).ravel()
    full = _real_moment_matrix(problem, y_fix)
    v_all = np.hstack(sectors)
    congruent = v_all.T @ full @ v_all
    scale = max(1.0, float(np.abs(congruent).max()))
    off = 0
    cross_max = 0.0
    for v_cols in sectors:
        d = v_cols.shape[1]
        congruent[off : off + d, off : off + d] = 0.0
        off += d
    cross_max = float(np.abs(congruent).max()) / scale
    if cross_max > 1e-9:
        raise ValueError("cross-sector moments do not vanish on the fixed subspace")
    checks["cross_sector"] = cross_max

    return MomentReduction(
        basis=basis,
        dim=basis.shape[1],
        normalization_row=normalization_row,
        blocks=tuple(blocks),
        sector_dims=tuple(v.shape[1] for v in sectors),
        variable_maps=tuple(r_mat for _rel, _s, r_mat in kept),
        generator_names=tuple(rel.name for rel, _s, _r in kept),
        checks=checks,
    )
