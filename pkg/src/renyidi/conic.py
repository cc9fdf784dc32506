"""Solver-agnostic conic programs: PSD, second-order, exponential, nonnegative, zero cones.

Programs are built as affine blocks (A x + b) constrained to lie in a cone,
always in the minimization sense.  Three encodings carry all the entropy
machinery downstream:

  relative entropy   t >= q ln(q/f)   as (-t, q, f) in the exponential cone
  log epigraph       t <= ln(g)       as ( t, 1, g) in the exponential cone
  quadratic minorant t >= 3(q-f)^2/(2(q+2f))  as one second-order block

with the exponential cone in the convention (x1, x2, x3) feasible iff
x2 exp(x1/x2) <= x3, x2 > 0 (plus its closure at x2 = 0), and the
second-order cone as (x1, ..., xk) with x1 >= ||(x2, ..., xk)||.  Base-2
conversion is the caller's job, handled by a 1/ln2 factor in the objective.

PSD blocks are vectorized in the fixed layout documented by svec_index:
column-stacked upper triangle, so a 2x2 block orders entries (1,1), (2,1),
(2,2) positionally, with off-diagonal entries scaled by sqrt(2) so that the
Euclidean inner product of two vectorizations equals the trace inner product.

Certified-bound policy: a solve reports, next to the raw objective, the value
objective - (duality gap + primal residual).  Downstream modules treat only
that certified value as a sound lower bound, since the outputs are security
quantities and must not lean on solver tolerance.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

__all__ = [
    "LinearForm",
    "ConeBlock",
    "ConicProgram",
    "Solution",
    "ConicError",
    "svec_size",
    "svec_index",
    "add_rel_entropy_term",
    "add_rel_entropy_quadratic",
    "add_log_epigraph",
    "validate_program",
    "solve",
    "export_cbf",
    "read_cbf",
    "BACKENDS",
]

_SQRT2 = math.sqrt(2.0)
BACKENDS = ("clarabel", "scs")

CONE_ZERO = "zero"
CONE_NONNEG = "nonneg"
CONE_SOC = "soc"
CONE_EXP3 = "exp3"
CONE_PSD = "psd"
_CONES = (CONE_ZERO, CONE_NONNEG, CONE_SOC, CONE_EXP3, CONE_PSD)


class ConicError(RuntimeError):
    pass


def svec_size(side: int) -> int:
    return side * (side + 1) // 2


def svec_index(i: int, j: int) -> int:
    """Row of entry (i, j), i <= j, in the column-stacked upper triangle."""
    if i > j:
        i, j = j, i
    return j * (j + 1) // 2 + i


@dataclass(frozen=True)
class LinearForm:
    """Affine expression sum_j coeffs[j] x_j + const."""

    coeffs: tuple[tuple[int, float], ...]
    const: float = 0.0

    @classmethod
    def of(cls, coeffs, const: float = 0.0) -> "LinearForm":
        if isinstance(coeffs, LinearForm):
            return coeffs
        if isinstance(coeffs, dict):
            items = tuple(sorted((int(k), float(v)) for k, v in coeffs.items()))
        else:
            items = tuple(
                (int(j), float(v)) for j, v in enumerate(np.asarray(coeffs, float)) if v != 0.0
            )
        return cls(coeffs=items, const=float(const))

    @classmethod
    def variable(cls, idx: int) -> "LinearForm":
        return cls(coeffs=((int(idx), 1.0),), const=0.0)

    @classmethod
    def constant(cls, value: float) -> "LinearForm":
        return cls(coeffs=(), const=float(value))


@dataclass
class ConeBlock:
    cone: str
    rows: int
    # (row within block, var, coeff); large blocks may carry a float ndarray
    # of shape (nnz, 3) instead of a tuple list
    triplets: list[tuple[int, int, float]] | np.ndarray
    offsets: np.ndarray  # b part, length == rows
    origin: str = ""
    psd_side: int | None = None


@dataclass
class ConicProgram:
    """min c.x subject to, per block, A x + b in the tagged cone."""

    n_vars: int = 0
    objective: list[float] = field(default_factory=list)
    blocks: list[ConeBlock] = field(default_factory=list)

    def add_variables(self, count: int, objective: float | list[float] = 0.0) -> range:
        start = self.n_vars
        if isinstance(objective, (int, float)):
            coeffs = [float(objective)] * count
        else:
            coeffs = [float(v) for v in objective]
            if len(coeffs) != count:
                raise ValueError("objective coefficient count mismatch")
        self.n_vars += count
        self.objective.extend(coeffs)
        return range(start, self.n_vars)

    def add_objective_term(self, var: int, coeff: float) -> None:
        self.objective[var] += float(coeff)

    def add_block(self, cone: str, forms: list[LinearForm], origin: str = "",
                  psd_side: int | None = None) -> None:
        if cone not in _CONES:
            raise ValueError(f"unknown cone {cone!r}")
        triplets = []
        offsets = np.zeros(len(forms))
        for r, form in enumerate(forms):
            offsets[r] = form.const
            for j, v in form.coeffs:
                if v != 0.0:
                    triplets.append((r, j, v))
        self.blocks.append(ConeBlock(
            cone=cone, rows=len(forms), triplets=triplets, offsets=offsets,
            origin=origin, psd_side=psd_side,
        ))

    def fix_variable(self, var: int, value: float, origin: str = "") -> None:
        self.add_block(
            CONE_ZERO,
            [LinearForm(coeffs=((var, 1.0),), const=-float(value))],
            origin=origin or f"fix x{var}={value}",
        )

    def add_psd_entries(self, side: int, entries, origin: str = "") -> None:
        """PSD block from matrix-coordinate data.

        entries: iterable of (i, j, var, coeff) and (i, j, None, const), i <= j,
        describing M(x)[i, j]; vectorized per svec_index with sqrt(2) scaling.
        """
        rows = svec_size(side)
        triplets: list[tuple[int, int, float]] = []
        offsets = np.zeros(rows)
        for i, j, var, coeff in entries:
            if i > j:
                raise ValueError("psd entries must be given with i <= j")
            scale = 1.0 if i == j else _SQRT2
            r = svec_index(i, j)
            if var is None:
                offsets[r] += scale * coeff
            else:
                triplets.append((r, int(var), scale * coeff))
        self.blocks.append(ConeBlock(
            cone=CONE_PSD, rows=rows, triplets=triplets, offsets=offsets,
            origin=origin, psd_side=side,
        ))

    def add_psd_block_rows(
        self,
        side: int,
        entry_i: np.ndarray,
        entry_j: np.ndarray,
        vars_: np.ndarray,
        coeffs: np.ndarray,
        origin: str = "",
    ) -> None:
        """PSD block from vectorized entry arrays (i <= j elementwise).

        Array-backed variant of add_psd_entries for blocks with millions of
        entries; constants are not supported here.
        """
        entry_i = np.asarray(entry_i, dtype=np.int64)
        entry_j = np.asarray(entry_j, dtype=np.int64)
        if np.any(entry_i > entry_j):
            raise ValueError("psd entries must be given with i <= j")
        rows = entry_j * (entry_j + 1) // 2 + entry_i
        scale = np.where(entry_i == entry_j, 1.0, _SQRT2)
        triplets = np.column_stack([
            rows.astype(float),
            np.asarray(vars_, dtype=float),
            np.asarray(coeffs, dtype=float) * scale,
        ])
        self.blocks.append(ConeBlock(
            cone=CONE_PSD, rows=svec_size(side), triplets=triplets,
            offsets=np.zeros(svec_size(side)), origin=origin, psd_side=side,
        ))


def add_rel_entropy_term(prog: ConicProgram, q_var: int, f_form, t_var: int,
                         origin: str = "rel-entropy") -> None:
    """Constrain t >= q ln(q/f) through one exponential-cone block."""
    prog.add_block(
        CONE_EXP3,
        [
            LinearForm(coeffs=((int(t_var), -1.0),)),
            LinearForm.variable(int(q_var)),
            LinearForm.of(f_form) if not isinstance(f_form, LinearForm) else f_form,
        ],
        origin=origin,
    )


def _combine(terms, const: float = 0.0) -> LinearForm:
    acc: dict[int, float] = {}
    total = const
    for w, form in terms:
        total += w * form.const
        for j, v in form.coeffs:
            acc[j] = acc.get(j, 0.0) + w * v
    items = tuple(sorted((j, v) for j, v in acc.items() if v != 0.0))
    return LinearForm(coeffs=items, const=float(total))


def add_rel_entropy_quadratic(prog: ConicProgram, q_form, f_form, t_var: int,
                              origin: str = "rel-entropy quadratic",
                              scale: float = 1.0) -> None:
    """Constrain t >= scale * 3(q-f)^2 / (2(q+2f)) through one SOC block.

    The scale=1 body is a pointwise minorant of q ln(q/f) - q + f, so summed
    over the components of two normalized distributions it still lower-bounds
    the relative entropy.  It agrees with that function through third order
    in (q-f), leaving only a quartic gap near q = f, and it trades the
    exponential cone for a symmetric one, which keeps interior-point steps
    stable when a huge weight sits on t and the optimum pins q close to f.

    When the objective would put that huge weight on t itself, pass it as
    scale instead: the block is degree-2 homogeneous, so the weight folds
    into the difference row and t keeps an order-one objective coefficient,
    which is what the solver's stopping criteria actually see.

    Encoding: t >= s 3(q-f)^2/(2(q+2f)) iff 2 t b >= s c^2 with
    b = (q+2f)/3, c = q - f, the second-order condition
    t+b >= ||(t-b, sqrt(2s) c)||.  The block also forces t >= 0, q+2f >= 0.
    """
    if not scale > 0.0:
        raise ValueError("scale must be positive")
    q_lf = LinearForm.of(q_form) if not isinstance(q_form, LinearForm) else q_form
    f_lf = LinearForm.of(f_form) if not isinstance(f_form, LinearForm) else f_form
    t_lf = LinearForm.variable(int(t_var))
    b_lf = _combine([(1.0 / 3.0, q_lf), (2.0 / 3.0, f_lf)])
    root = math.sqrt(2.0 * scale)
    prog.add_block(
        CONE_SOC,
        [
            _combine([(1.0, t_lf), (1.0, b_lf)]),
            _combine([(1.0, t_lf), (-1.0, b_lf)]),
            _combine([(root, q_lf), (-root, f_lf)]),
        ],
        origin=origin,
    )


def add_log_epigraph(prog: ConicProgram, g_form, t_var: int,
                     origin: str = "log-epigraph") -> None:
    """Constrain t <= ln(g) through one exponential-cone block."""
    prog.add_block(
        CONE_EXP3,
        [
            LinearForm.variable(int(t_var)),
            LinearForm.constant(1.0),
            LinearForm.of(g_form) if not isinstance(g_form, LinearForm) else g_form,
        ],
        origin=origin,
    )


def validate_program(prog: ConicProgram) -> None:
    """Static checks: dimensions, cone tags, PSD row counts, finite data."""
    if len(prog.objective) != prog.n_vars:
        raise ConicError("objective length disagrees with variable count")
    if not all(math.isfinite(v) for v in prog.objective):
        raise ConicError("objective contains non-finite entries")
    for idx, blk in enumerate(prog.blocks):
        tag = f"block {idx} ({blk.origin or blk.cone})"
        if blk.cone not in _CONES:
            raise ConicError(f"{tag}: unknown cone {blk.cone!r}")
        if blk.cone == CONE_EXP3 and blk.rows != 3:
            raise ConicError(f"{tag}: exponential block must have 3 rows")
        if blk.cone == CONE_SOC and blk.rows < 2:
            raise ConicError(f"{tag}: second-order block needs at least 2 rows")
        if blk.cone == CONE_PSD:
            if blk.psd_side is None or svec_size(blk.psd_side) != blk.rows:
                raise ConicError(f"{tag}: PSD rows disagree with side")
        if len(blk.offsets) != blk.rows:
            raise ConicError(f"{tag}: offset length disagrees with rows")
        if not np.all(np.isfinite(blk.offsets)):
            raise ConicError(f"{tag}: non-finite offsets")
        if isinstance(blk.triplets, np.ndarray):
            tr = blk.triplets
            if tr.ndim != 2 or tr.shape[1] != 3:
                raise ConicError(f"{tag}: triplet array must have shape (nnz, 3)")
            if not np.all(np.isfinite(tr)):
                raise ConicError(f"{tag}: non-finite coefficient")
            rows_ok = (tr[:, 0] >= 0) & (tr[:, 0] < blk.rows)
            vars_ok = (tr[:, 1] >= 0) & (tr[:, 1] < prog.n_vars)
            if not bool(np.all(rows_ok & vars_ok)):
                raise ConicError(f"{tag}: triplet out of range")
            continue
        for r, j, v in blk.triplets:
            if not (0 <= r < blk.rows and 0 <= j < prog.n_vars):
                raise ConicError(f"{tag}: triplet ({r},{j}) out of range")
            if not math.isfinite(v):
                raise ConicError(f"{tag}: non-finite coefficient")


@dataclass
class Solution:
    status: str  # optimal | near_optimal | infeasible | error
    x: np.ndarray | None
    objective: float | None
    objective_dual: float | None
    gap: float | None
    residual_primal: float | None
    residual_dual: float | None
    certified_lower: float | None
    backend: str
    solve_time: float
    iterations: int | None
    diagnostics: dict

    @property
    def certified_upper(self) -> float | None:
        """Sound upper bound when the program was a negated maximization."""
        if self.objective is None or self.gap is None:
            return None
        return self.objective + self.gap + (self.residual_primal or 0.0)


def _stack(prog: ConicProgram, cone_order: list[str], psd_lower: bool = False):
    """Rows of all blocks, grouped by cone kind in the given order.

    Returns (A csc, b, groups) with groups = list of (cone, rows|side).  When
    psd_lower is set, PSD rows are permuted from the native upper-column
    layout to lower-triangle column-major (the SCS convention).
    """
    part_r: list[np.ndarray] = []
    part_c: list[np.ndarray] = []
    part_v: list[np.ndarray] = []
    b_parts: list[np.ndarray] = []
    groups: list[tuple[str, int]] = []
    offset = 0
    order_key = {kind: pos for pos, kind in enumerate(cone_order)}
    indexed = sorted(range(len(prog.blocks)), key=lambda k: order_key[prog.blocks[k].cone])
    for k in indexed:
        blk = prog.blocks[k]
        perm = None
        if blk.cone == CONE_PSD and psd_lower:
            n = blk.psd_side
            perm = np.empty(blk.rows, dtype=int)
            pos = 0
            for i in range(n):  # lower triangle, column-major
                for j in range(i, n):
                    perm[svec_index(i, j)] = pos
                    pos += 1
        if isinstance(blk.triplets, np.ndarray):
            rr = blk.triplets[:, 0].astype(np.int64)
            if perm is not None:
                rr = perm[rr]
            part_r.append(rr + offset)
            part_c.append(blk.triplets[:, 1].astype(np.int64))
            part_v.append(blk.triplets[:, 2])
        elif blk.triplets:
            r_l, c_l, v_l = zip(*blk.triplets)
            rr = np.array(r_l, dtype=np.int64)
            if perm is not None:
                rr = perm[rr]
            part_r.append(rr + offset)
            part_c.append(np.array(c_l, dtype=np.int64))
            part_v.append(np.array(v_l, dtype=float))
        if perm is not None:
            b_perm = np.empty(blk.rows)
            b_perm[perm] = blk.offsets
            b_parts.append(b_perm)
        else:
            b_parts.append(blk.offsets)
        groups.append((blk.cone, blk.psd_side if blk.cone == CONE_PSD else blk.rows))
        offset += blk.rows
    if part_r:
        r = np.concatenate(part_r)
        c = np.concatenate(part_c)
        v = np.concatenate(part_v)
    else:
        r = np.zeros(0, dtype=np.int64)
        c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    a_mat = sparse.csc_matrix((v, (r, c)), shape=(offset, prog.n_vars))
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)
    return a_mat, b, groups


def _solve_clarabel(prog: ConicProgram, opts: dict) -> Solution:
    import clarabel

    a_mat, b, groups = _stack(
        prog, [CONE_ZERO, CONE_NONNEG, CONE_SOC, CONE_EXP3, CONE_PSD]
    )
    cones = []
    for cone, size in groups:
        if cone == CONE_ZERO:
            cones.append(clarabel.ZeroConeT(size))
        elif cone == CONE_NONNEG:
            cones.append(clarabel.NonnegativeConeT(size))
        elif cone == CONE_SOC:
            cones.append(clarabel.SecondOrderConeT(size))
        elif cone == CONE_EXP3:
            cones.append(clarabel.ExponentialConeT())
        else:
            cones.append(clarabel.PSDTriangleConeT(size))
    settings = clarabel.DefaultSettings()
    settings.verbose = bool(opts.get("verbose", False))
    for key in ("max_iter", "time_limit", "tol_gap_abs", "tol_gap_rel", "tol_feas"):
        if key in opts:
            setattr(settings, key, opts[key])
    p_mat = sparse.csc_matrix((prog.n_vars, prog.n_vars))
    q = np.asarray(prog.objective, float)
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(p_mat, q, -a_mat, b, cones, settings)
    result = solver.solve()
    elapsed = time.perf_counter() - t0
    status_name = str(result.status)
    if status_name in ("SolverStatus.Solved", "Solved"):
        status = "optimal"
    elif "AlmostSolved" in status_name:
        status = "near_optimal"
    elif "Infeasible" in status_name:
        status = "infeasible"
    else:
        status = "error"
    diagnostics = {"solver_status": status_name,
                   "tol_gap_abs": float(getattr(settings, "tol_gap_abs")),
                   "tol_feas": float(getattr(settings, "tol_feas"))}
    if status in ("optimal", "near_optimal"):
        obj = float(result.obj_val)
        obj_dual = float(result.obj_val_dual)
        gap = abs(obj - obj_dual)
        r_prim = float(result.r_prim)
        r_dual = float(result.r_dual)
        return Solution(
            status=status, x=np.asarray(result.x, float), objective=obj,
            objective_dual=obj_dual, gap=gap, residual_primal=r_prim,
            residual_dual=r_dual, certified_lower=obj - gap - r_prim,
            backend="clarabel", solve_time=elapsed,
            iterations=int(result.iterations), diagnostics=diagnostics,
        )
    return Solution(
        status=status, x=None, objective=None, objective_dual=None, gap=None,
        residual_primal=None, residual_dual=None, certified_lower=None,
        backend="clarabel", solve_time=elapsed,
        iterations=int(result.iterations), diagnostics=diagnostics,
    )


def _solve_scs(prog: ConicProgram, opts: dict) -> Solution:
    import scs

    a_mat, b, groups = _stack(
        prog, [CONE_ZERO, CONE_NONNEG, CONE_SOC, CONE_PSD, CONE_EXP3],
        psd_lower=True,
    )
    cone: dict = {}
    for kind, size in groups:
        if kind == CONE_ZERO:
            cone["z"] = cone.get("z", 0) + size
        elif kind == CONE_NONNEG:
            cone["l"] = cone.get("l", 0) + size
        elif kind == CONE_SOC:
            cone.setdefault("q", []).append(size)
        elif kind == CONE_PSD:
            cone.setdefault("s", []).append(size)
        else:
            cone["ep"] = cone.get("ep", 0) + 1
    data = {"A": -a_mat, "b": b, "c": np.asarray(prog.objective, float)}
    kwargs = {
        "verbose": bool(opts.get("verbose", False)),
        "eps_abs": float(opts.get("tol_gap_abs", 1e-9)),
        "eps_rel": float(opts.get("tol_gap_rel", 1e-9)),
    }
    if "max_iter" in opts:
        kwargs["max_iters"] = int(opts["max_iter"])
    t0 = time.perf_counter()
    out = scs.solve(data, cone, **kwargs)
    elapsed = time.perf_counter() - t0
    info = out["info"]
    raw = info["status"]
    if raw == "solved":
        status = "optimal"
    elif "inaccurate" in raw:
        status = "near_optimal"
    elif "infeasible" in raw:
        status = "infeasible"
    else:
        status = "error"
    diagnostics = {"solver_status": raw, "eps_abs": kwargs["eps_abs"]}
    if status in ("optimal", "near_optimal"):
        obj = float(info["pobj"])
        obj_dual = float(info["dobj"])
        gap = abs(obj - obj_dual)
        r_prim = float(info["res_pri"])
        return Solution(
            status=status, x=np.asarray(out["x"], float), objective=obj,
            objective_dual=obj_dual, gap=gap, residual_primal=r_prim,
            residual_dual=float(info["res_dual"]),
            certified_lower=obj - gap - r_prim, backend="scs",
            solve_time=elapsed, iterations=int(info["iter"]),
            diagnostics=diagnostics,
        )
    return Solution(
        status=status, x=None, objective=None, objective_dual=None, gap=None,
        residual_primal=None, residual_dual=None, certified_lower=None,
        backend="scs", solve_time=elapsed, iterations=None, diagnostics=diagnostics,
    )


def solve(prog: ConicProgram, backend: str = "clarabel", **opts) -> Solution:
    validate_program(prog)
    if backend == "clarabel":
        runner = _solve_clarabel
    elif backend == "scs":
        runner = _solve_scs
    else:
        raise ConicError(f"unknown backend {backend!r}; available: {BACKENDS}")
    try:
        return runner(prog, opts)
    except ConicError:
        raise
    except Exception as exc:  # backend failure surfaces as Error status
        return Solution(
            status="error", x=None, objective=None, objective_dual=None,
            gap=None, residual_primal=None, residual_dual=None,
            certified_lower=None, backend=backend, solve_time=0.0,
            iterations=None, diagnostics={"exception": repr(exc)},
        )


# ---------------------------------------------------------------------------
# Conic Benchmark Format text export / import.
#
# Scalar and exponential blocks become CON rows (in block order); PSD blocks
# become PSDCON entries with HCOORD/DCOORD matrix coordinates.  The format
# added exponential cones in version 3, so files declare version 2 unless an
# exponential block forces 3.  The file's EXP cone reads (g1, g2, g3) with
# g1 >= g2 exp(g3/g2), i.e. our (x1, x2, x3) written in reversed row order.
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def export_cbf(prog: ConicProgram, path: str) -> None:
    validate_program(prog)
    scalar_blocks = [b for b in prog.blocks if b.cone != CONE_PSD]
    psd_blocks = [b for b in prog.blocks if b.cone == CONE_PSD]
    version = 3 if any(b.cone == CONE_EXP3 for b in scalar_blocks) else 2
    lines: list[str] = ["VER", str(version), "", "OBJSENSE", "MIN", "", "VAR",
                        f"{prog.n_vars} 1", f"F {prog.n_vars}", ""]

    con_rows = 0
    con_groups: list[str] = []
    acoord: list[str] = []
    bcoord: list[str] = []
    for blk in scalar_blocks:
        if blk.cone == CONE_ZERO:
            con_groups.append(f"L= {blk.rows}")
            row_map = list(range(blk.rows))
        elif blk.cone == CONE_NONNEG:
            con_groups.append(f"L+ {blk.rows}")
            row_map = list(range(blk.rows))
        elif blk.cone == CONE_SOC:
            con_groups.append(f"Q {blk.rows}")
            row_map = list(range(blk.rows))
        else:
            con_groups.append("EXP 3")
            row_map = [2, 1, 0]  # file order (g1,g2,g3) = our (x3,x2,x1)
        for r, j, v in blk.triplets:
            acoord.append(f"{con_rows + row_map[int(r)]} {int(j)} {_fmt(float(v))}")
        for r in range(blk.rows):
            if blk.offsets[r] != 0.0:
                bcoord.append(f"{con_rows + row_map[r]} {_fmt(blk.offsets[r])}")
        con_rows += blk.rows
    if con_groups:
        lines += ["CON", f"{con_rows} {len(con_groups)}"] + con_groups + [""]

    if psd_blocks:
        lines += ["PSDCON", str(len(psd_blocks))]
        lines += [str(b.psd_side) for b in psd_blocks] + [""]

    obj_terms = [(j, v) for j, v in enumerate(prog.objective) if v != 0.0]
    if obj_terms:
        lines += ["OBJACOORD", str(len(obj_terms))]
        lines += [f"{j} {_fmt(v)}" for j, v in obj_terms] + [""]

    if acoord:
        lines += ["ACOORD", str(len(acoord))] + acoord + [""]
    if bcoord:
        lines += ["BCOORD", str(len(bcoord))] + bcoord + [""]

    hcoord: list[str] = []
    dcoord: list[str] = []
    for pidx, blk in enumerate(psd_blocks):
        pairs = _svec_pairs(blk.psd_side)
        for r, j, v in blk.triplets:
            i_row, j_col = pairs[int(r)]
            scale = 1.0 if i_row == j_col else _SQRT2
            hcoord.append(f"{pidx} {int(j)} {j_col} {i_row} {_fmt(float(v) / scale)}")
        for r in range(blk.rows):
            if blk.offsets[r] != 0.0:
                i_row, j_col = pairs[r]
                scale = 1.0 if i_row == j_col else _SQRT2
                dcoord.append(f"{pidx} {j_col} {i_row} {_fmt(blk.offsets[r] / scale)}")
    if hcoord:
        lines += ["HCOORD", str(len(hcoord))] + hcoord + [""]
    if dcoord:
        lines += ["DCOORD", str(len(dcoord))] + dcoord + [""]

    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(lines) + "\n")


def _svec_pairs(side: int) -> list[tuple[int, int]]:
    pairs = [(0, 0)] * svec_size(side)
    for j in range(side):
        for i in range(j + 1):
            pairs[svec_index(i, j)] = (i, j)
    return pairs


def read_cbf(path: str) -> ConicProgram:
    """Reader for the files export_cbf writes (the documented subset)."""
    with open(path, encoding="ascii") as handle:
        raw = [ln.rstrip("\n") for ln in handle]
    lines = [ln for ln in raw if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def take() -> str:
        nonlocal pos
        line = lines[pos]
        pos += 1
        return line

    n_vars = 0
    con_groups: list[tuple[str, int]] = []
    psd_sides: list[int] = []
    obj: dict[int, float] = {}
    a_entries: list[tuple[int, int, float]] = []
    b_entries: dict[int, float] = {}
    h_entries: list[tuple[int, int, int, int, float]] = []
    d_entries: list[tuple[int, int, int, float]] = []

    while pos < len(lines):
        section = take().strip()
        if section == "VER":
            take()
        elif section == "OBJSENSE":
            sense = take().strip()
            if sense != "MIN":
                raise ConicError(f"unsupported objective sense {sense!r}")
        elif section == "VAR":
            header = take().split()
            n_vars = int(header[0])
            remaining = int(header[1])
            total = 0
            for _ in range(remaining):
                kind, count = take().split()
                if kind != "F":
                    raise ConicError(f"unsupported variable cone {kind!r}")
                total += int(count)
            if total != n_vars:
                raise ConicError("variable cone counts disagree with total")
        elif section == "CON":
            header = take().split()
            n_groups = int(header[1])
            for _ in range(n_groups):
                kind, count = take().split()
                con_groups.append((kind, int(count)))
        elif section == "PSDCON":
            count = int(take())
            psd_sides = [int(take()) for _ in range(count)]
        elif section == "OBJACOORD":
            for _ in range(int(take())):
                j, v = take().split()
                obj[int(j)] = float(v)
        elif section == "ACOORD":
            for _ in range(int(take())):
                i, j, v = take().split()
                a_entries.append((int(i), int(j), float(v)))
        elif section == "BCOORD":
            for _ in range(int(take())):
                i, v = take().split()
                b_entries[int(i)] = float(v)
        elif section == "HCOORD":
            for _ in range(int(take())):
                p, j, k, ell, v = take().split()
                h_entries.append((int(p), int(j), int(k), int(ell), float(v)))
        elif section == "DCOORD":
            for _ in range(int(take())):
                p, k, ell, v = take().split()
                d_entries.append((int(p), int(k), int(ell), float(v)))
        else:
            raise ConicError(f"unsupported CBF section {section!r}")

    prog = ConicProgram()
    prog.add_variables(n_vars)
    for j, v in obj.items():
        prog.add_objective_term(j, v)

    row = 0
    for kind, count in con_groups:
        if kind == "L=":
            cone, row_map = CONE_ZERO, list(range(count))
        elif kind == "L+":
            cone, row_map = CONE_NONNEG, list(range(count))
        elif kind == "Q":
            cone, row_map = CONE_SOC, list(range(count))
        elif kind == "EXP":
            cone, row_map = CONE_EXP3, [2, 1, 0]
        else:
            raise ConicError(f"unsupported constraint cone {kind!r}")
        forms: list[LinearForm] = []
        for local in row_map:
            file_row = row + local
            coeffs = tuple(
                (j, v) for (i, j, v) in a_entries if i == file_row
            )
            forms.append(LinearForm(coeffs=coeffs, const=b_entries.get(file_row, 0.0)))
        prog.add_block(cone, forms, origin=f"cbf:{kind}")
        row += count

    for pidx, side in enumerate(psd_sides):
        entries = [
            (min(k, ell), max(k, ell), j, v)
            for (p, j, k, ell, v) in h_entries if p == pidx
        ]
        entries += [
            (min(k, ell), max(k, ell), None, v)
            for (p, k, ell, v) in d_entries if p == pidx
        ]
        prog.add_psd_entries(side, entries, origin="cbf:PSD")
    validate_program(prog)
    return prog
