"""Noncommutative operator words, rewrite rules, and moment-matrix structure.

Measurement symbols are projectors tagged with party/input/output; auxiliary
(Eve-side) symbols may be non-Hermitian, with the adjoint tracked as a flag on
each letter rather than as a separate symbol.  Canonicalization applies, in a
fixed confluent order: cross-party commutation (stable sort by party; parties
mutually commute, letters within a party do not), projector idempotence, and
same-input orthogonality.  Completeness of each measurement is handled before
words exist: only the first k-1 outcome projectors of a k-outcome input are
ever declared, the last outcome being one-minus-the-rest at polynomial level.

The moment matrix stores, for the chosen word set {u_i}, the variable of the
canonical form of each product u_i^dag u_j.  Moments of mutually adjoint words
share one complex variable (one real slot, one imaginary slot); self-adjoint
words get a real slot only.  PSD-ness of the complex Hermitian matrix is
realized for solvers through the real embedding [[Re, -Im], [Im, Re]].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "OperatorSymbol",
    "Monomial",
    "ZERO",
    "NCPolynomial",
    "MomentProblem",
    "measurement_symbol",
    "aux_symbol",
    "canonicalize",
    "adjoint_word",
    "build_word_set",
    "build_moment_problem",
    "functional",
    "evaluate_strategy",
    "assemble_moment_matrix",
    "embed_real",
    "embedded_psd_entries",
    "moment_structure_json",
]

_PARTY_RANK = {"A": 0, "B": 1, "Aux": 2}
_RULE_TOL = 1e-10
_PSD_TOL = 1e-8


@dataclass(frozen=True, order=False)
class OperatorSymbol:
    name: str
    party: str
    hermitian: bool = True
    projector: bool = True
    input: int | None = None
    output: int | None = None

    def __post_init__(self) -> None:
        if self.party not in _PARTY_RANK:
            raise ValueError(f"party must be one of {set(_PARTY_RANK)}")
        if self.projector and not self.hermitian:
            raise ValueError("projector symbols must be hermitian")
        if self.party in ("A", "B") and (self.input is None or self.output is None):
            raise ValueError("measurement symbols need input and output labels")

    @property
    def sort_key(self):
        return (
            _PARTY_RANK[self.party],
            self.input if self.input is not None else -1,
            self.output if self.output is not None else -1,
            self.name,
        )


def measurement_symbol(party: str, x: int, a: int) -> OperatorSymbol:
    """Projector for outcome a of input x on party A or B."""
    return OperatorSymbol(
        name=f"{party}({a}|{x})", party=party, hermitian=True, projector=True,
        input=x, output=a,
    )


def aux_symbol(name: str, hermitian: bool = False) -> OperatorSymbol:
    """Auxiliary (Eve-side) operator symbol; non-Hermitian unless stated."""
    return OperatorSymbol(name=name, party="Aux", hermitian=hermitian, projector=False)


# A letter is (symbol, dagger flag); dagger is normalized away on hermitian symbols.
Letter = tuple[OperatorSymbol, bool]


class _Zero:
    """Annihilated word (orthogonal projectors met)."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "ZERO"

    def __bool__(self) -> bool:
        return False


ZERO = _Zero()


@dataclass(frozen=True)
class Monomial:
    letters: tuple[Letter, ...] = ()

    @property
    def sort_key(self):
        return (len(self.letters), tuple((s.sort_key, dag) for s, dag in self.letters))

    def __lt__(self, other: "Monomial") -> bool:
        return self.sort_key < other.sort_key

    def __len__(self) -> int:
        return len(self.letters)

    def __str__(self) -> str:
        if not self.letters:
            return "1"
        return ".".join(f"{s.name}{'*' if dag else ''}" for s, dag in self.letters)

    def is_self_adjoint(self) -> bool:
        return self == adjoint_word(self)


IDENTITY_WORD = Monomial(())


def _normalize_letters(word) -> list[Letter]:
    if isinstance(word, Monomial):
        raw = word.letters
    else:
        raw = tuple(word)
    letters: list[Letter] = []
    for item in raw:
        if isinstance(item, OperatorSymbol):
            sym, dag = item, False
        elif isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], OperatorSymbol):
            sym, dag = item
        else:
            raise ValueError(f"undeclared symbol in word: {item!r}")
        letters.append((sym, bool(dag) and not sym.hermitian))
    return letters


def canonicalize(word) -> Monomial | _Zero:
    """Unique normal form of a word, or ZERO if orthogonality annihilates it.

    The rewrite system: stable sort by party (cross-party commutation), then a
    single stack pass applying idempotence and same-input orthogonality inside
    each party run.  The local rules only ever shorten words, so this is a
    normal form, and the stable sort makes it independent of input order of
    commuting letters.
    """
    if isinstance(word, _Zero):
        return ZERO
    letters = _normalize_letters(word)
    letters.sort(key=lambda lt: _PARTY_RANK[lt[0].party])  # stable
    stack: list[Letter] = []
    for letter in letters:
        sym, dag = letter
        while True:
            if not stack:
                stack.append((sym, dag))
                break
            top_sym, top_dag = stack[-1]
            if top_sym.party != sym.party:
                stack.append((sym, dag))
                break
            if (
                top_sym.projector
                and sym.projector
                and top_sym.input == sym.input
                and top_sym.party in ("A", "B")
            ):
                if top_sym.output == sym.output:
                    break  # idempotence: drop the new letter
                return ZERO  # orthogonality
            if top_sym == sym and top_dag == dag and sym.projector:
                break  # idempotence for projector aux symbols
            stack.append((sym, dag))
            break
    return Monomial(tuple(stack))


def adjoint_word(word: Monomial) -> Monomial:
    """Canonical form of the adjoint word."""
    flipped = tuple((s, not dag) for s, dag in reversed(word.letters))
    result = canonicalize(flipped)
    assert not isinstance(result, _Zero)
    return result


def _concat(u: Monomial, v: Monomial) -> Monomial | _Zero:
    return canonicalize(u.letters + v.letters)


@dataclass
class NCPolynomial:
    """Linear combination of canonical monomials; zero coefficients pruned."""

    terms: dict[Monomial, complex] = field(default_factory=dict)

    @classmethod
    def constant(cls, c: complex) -> "NCPolynomial":
        return cls({IDENTITY_WORD: complex(c)}) if c != 0 else cls({})

    @classmethod
    def from_word(cls, word, coeff: complex = 1.0) -> "NCPolynomial":
        canon = canonicalize(word)
        if isinstance(canon, _Zero) or coeff == 0:
            return cls({})
        return cls({canon: complex(coeff)})

    def __add__(self, other: "NCPolynomial") -> "NCPolynomial":
        out = dict(self.terms)
        for w, c in other.terms.items():
            acc = out.get(w, 0j) + c
            if acc == 0:
                out.pop(w, None)
            else:
                out[w] = acc
        return NCPolynomial(out)

    def __sub__(self, other: "NCPolynomial") -> "NCPolynomial":
        return self + (other * -1.0)

    def __mul__(self, other) -> "NCPolynomial":
        if isinstance(other, (int, float, complex)):
            if other == 0:
                return NCPolynomial({})
            return NCPolynomial({w: c * other for w, c in self.terms.items()})
        out: dict[Monomial, complex] = {}
        for u, cu in self.terms.items():
            for v, cv in other.terms.items():
                w = _concat(u, v)
                if isinstance(w, _Zero):
                    continue
                acc = out.get(w, 0j) + cu * cv
                if acc == 0:
                    out.pop(w, None)
                else:
                    out[w] = acc
        return NCPolynomial(out)

    __rmul__ = __mul__

    def adjoint(self) -> "NCPolynomial":
        return NCPolynomial({adjoint_word(w): c.conjugate() for w, c in self.terms.items()})

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        for w, c in self.terms.items():
            if abs(self.terms.get(adjoint_word(w), 0j) - c.conjugate()) > tol:
                return False
        return True


def _letters_of(symbols: Iterable[OperatorSymbol]) -> list[Letter]:
    letters: list[Letter] = []
    for sym in symbols:
        letters.append((sym, False))
        if not sym.hermitian:
            letters.append((sym, True))
    return letters


def build_word_set(
    symbols: Sequence[OperatorSymbol], level: int, local_extras: bool = False
) -> list[Monomial]:
    """All canonical words of length <= level, plus measurement-times-aux extras.

    The identity word comes first; the rest are sorted deterministically.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    letters = _letters_of(symbols)
    seen: set[Monomial] = {IDENTITY_WORD}
    frontier: list[Monomial] = [IDENTITY_WORD]
    for _ in range(level):
        new_frontier: list[Monomial] = []
        for word in frontier:
            for letter in letters:
                grown = canonicalize(word.letters + (letter,))
                if isinstance(grown, _Zero) or grown in seen:
                    continue
                seen.add(grown)
                new_frontier.append(grown)
        frontier = new_frontier
    if local_extras:
        meas = [(s, False) for s in symbols if s.party in ("A", "B")]
        aux = [lt for lt in letters if lt[0].party == "Aux"]
        for m_letter in meas:
            for a_letter in aux:
                grown = canonicalize((m_letter, a_letter))
                if not isinstance(grown, _Zero):
                    seen.add(grown)
    rest = sorted(seen - {IDENTITY_WORD}, key=lambda w: w.sort_key)
    return [IDENTITY_WORD] + rest


def local_product_words(
    groups: Sequence[Sequence[OperatorSymbol]],
) -> list[Monomial]:
    """Words that are products of at most one letter from each group.

    Each group contributes its symbols' letters (daggered letters too for
    non-Hermitian symbols) plus the implicit identity, and one letter is
    drawn per group.  For per-party groups this is the degree-(1,...,1)
    local set; it strictly contains plain level 1 on the same symbols.
    """
    choice_sets: list[list[Letter | None]] = []
    for group in groups:
        choices: list[Letter | None] = [None]
        for sym in group:
            choices.append((sym, False))
            if not sym.hermitian:
                choices.append((sym, True))
        choice_sets.append(choices)
    seen: set[Monomial] = set()
    stack: list[tuple[int, tuple[Letter, ...]]] = [(0, ())]
    while stack:
        depth, letters = stack.pop()
        if depth == len(choice_sets):
            word = canonicalize(letters)
            if not isinstance(word, _Zero):
                seen.add(word)
            continue
        for choice in choice_sets[depth]:
            grown = letters if choice is None else letters + (choice,)
            stack.append((depth + 1, grown))
    rest = sorted(seen - {IDENTITY_WORD}, key=lambda w: w.sort_key)
    return [IDENTITY_WORD] + rest


@dataclass
class MomentProblem:
    """Symbolic moment matrix over a word set.

    var_words[k] is the representative word of complex moment variable k
    (variable 0 is the empty word, fixed to 1 by downstream programs).  Matrix
    entry (i, j) refers to variable entry_var[i, j], conjugated when
    entry_conj[i, j] is set; entry_var is -1 where the product annihilates.
    Real slots: re(k) = k; im slots exist only for non-self-adjoint
    representatives and are indexed by im_slots[k] >= n_complex.
    """

    words: tuple[Monomial, ...]
    var_words: tuple[Monomial, ...]
    var_index: dict[Monomial, int]
    entry_var: np.ndarray
    entry_conj: np.ndarray
    im_slots: tuple[int | None, ...]
    n_real: int

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_complex(self) -> int:
        return len(self.var_words)

    def lookup(self, word: Monomial) -> tuple[int, bool]:
        """Variable id and conjugation flag for a canonical word's moment."""
        if word in self.var_index:
            return self.var_index[word], False
        adj = adjoint_word(word)
        if adj in self.var_index:
            return self.var_index[adj], True
        raise KeyError(f"word {word} not covered by the moment problem")


def build_moment_problem(words: Sequence[Monomial]) -> MomentProblem:
    deduped: list[Monomial] = []
    seen: set[Monomial] = set()
    for w in words:
        canon = canonicalize(w)
        if isinstance(canon, _Zero):
            raise ValueError("word set must not contain annihilated words")
        if canon not in seen:
            seen.add(canon)
            deduped.append(canon)
    if not deduped or deduped[0] != IDENTITY_WORD:
        raise ValueError("word set must start with the identity word")
    n = len(deduped)
    var_words: list[Monomial] = []
    var_index: dict[Monomial, int] = {}
    entry_var = -np.ones((n, n), dtype=np.int64)
    entry_conj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        u_adj_letters = tuple((s, not d) for s, d in reversed(deduped[i].letters))
        for j in range(i, n):
            product = canonicalize(u_adj_letters + deduped[j].letters)
            if isinstance(product, _Zero):
                continue
            adj = adjoint_word(product)
            rep = product if product.sort_key <= adj.sort_key else adj
            if rep not in var_index:
                var_index[rep] = len(var_words)
                var_words.append(rep)
            k = var_index[rep]
            conj = product != rep
            entry_var[i, j] = k
            entry_conj[i, j] = conj
            entry_var[j, i] = k
            entry_conj[j, i] = not conj if rep != adj else False
    im_slots: list[int | None] = []
    next_slot = len(var_words)
    for k, rep in enumerate(var_words):
        if rep == adjoint_word(rep):
            im_slots.append(None)
        else:
            im_slots.append(next_slot)
            next_slot += 1
    return MomentProblem(
        words=tuple(deduped),
        var_words=tuple(var_words),
        var_index=var_index,
        entry_var=entry_var,
        entry_conj=entry_conj,
        im_slots=tuple(im_slots),
        n_real=next_slot,
    )


def functional(poly: NCPolynomial, problem: MomentProblem) -> np.ndarray:
    """Real coefficient vector a with <poly> = a . y over the real slots.

    Requires a Hermitian polynomial (real expectation); raises when a monomial
    is outside the moment problem's variable table, naming the missing word.
    """
    real = np.zeros(problem.n_real)
    imag = np.zeros(problem.n_real)
    for word, coeff in poly.terms.items():
        canon = canonicalize(word)
        if isinstance(canon, _Zero):
            continue
        try:
            k, conj = problem.lookup(canon)
        except KeyError:
            raise ValueError(
                f"functional not expressible: word {canon} missing from the word set"
            ) from None
        sign = -1.0 if conj else 1.0
        real[k] += coeff.real
        imag[k] += coeff.imag
        slot = problem.im_slots[k]
        if slot is not None:
            real[slot] += -coeff.imag * sign
            imag[slot] += coeff.real * sign
    if np.abs(imag).max(initial=0.0) > 1e-9:
        raise ValueError("polynomial must be Hermitian to define a real functional")
    return real


def _moment_value(y_real: np.ndarray, problem: MomentProblem, k: int, conj: bool) -> complex:
    slot = problem.im_slots[k]
    im = y_real[slot] if slot is not None else 0.0
    return complex(y_real[k], -im if conj else im)


def assemble_moment_matrix(problem: MomentProblem, y_real: np.ndarray) -> np.ndarray:
    n = problem.n_words
    mat = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            k = problem.entry_var[i, j]
            if k >= 0:
                mat[i, j] = _moment_value(y_real, problem, k, bool(problem.entry_conj[i, j]))
    return mat


def embed_real(mat: np.ndarray) -> np.ndarray:
    """Real embedding [[Re, -Im], [Im, Re]]; PSD iff the Hermitian input is."""
    re, im = mat.real, mat.imag
    return np.block([[re, -im], [im, re]])


def _word_matrix(word: Monomial, assignment: Mapping[OperatorSymbol, np.ndarray], dim: int) -> np.ndarray:
    out = np.eye(dim, dtype=complex)
    for sym, dag in word.letters:
        mat = np.asarray(assignment[sym], dtype=complex)
        out = out @ (mat.conj().T if dag else mat)
    return out


def _check_assignment(assignment: Mapping[OperatorSymbol, np.ndarray]) -> int:
    dims = {np.asarray(m).shape[0] for m in assignment.values()}
    if len(dims) != 1:
        raise ValueError("all assigned operators must share one dimension")
    (dim,) = dims
    syms = list(assignment)
    for sym in syms:
        mat = np.asarray(assignment[sym], dtype=complex)
        if sym.hermitian and np.abs(mat - mat.conj().T).max() > _RULE_TOL:
            raise ValueError(f"assignment for {sym.name} must be Hermitian")
        if sym.projector and np.abs(mat @ mat - mat).max() > _RULE_TOL:
            raise ValueError(f"assignment for {sym.name} must be idempotent")
    for i, s1 in enumerate(syms):
        m1 = np.asarray(assignment[s1], dtype=complex)
        for s2 in syms[i + 1:]:
            m2 = np.asarray(assignment[s2], dtype=complex)
            if s1.party != s2.party:
                if np.abs(m1 @ m2 - m2 @ m1).max() > _RULE_TOL:
                    raise ValueError(f"{s1.name} and {s2.name} must commute across parties")
            elif (
                s1.projector and s2.projector
                and s1.party in ("A", "B") and s1.input == s2.input
                and s1.output != s2.output
            ):
                if np.abs(m1 @ m2).max() > _RULE_TOL:
                    raise ValueError(f"{s1.name} and {s2.name} must be orthogonal")
    return dim


def evaluate_strategy(
    problem: MomentProblem,
    state: np.ndarray,
    assignment: Mapping[OperatorSymbol, np.ndarray],
) -> np.ndarray:
    """Moments of an explicit quantum strategy, as the real slot vector.

    Validates the operator rules numerically, then checks the assembled moment
    matrix is PSD (it is a Gram matrix, so failure means an invalid strategy).
    """
    dim = _check_assignment(assignment)
    rho = np.asarray(state, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError("state dimension does not match the assignment")
    y = np.zeros(problem.n_real)
    for k, rep in enumerate(problem.var_words):
        moment = complex(np.trace(rho @ _word_matrix(rep, assignment, dim)))
        y[k] = moment.real
        slot = problem.im_slots[k]
        if slot is not None:
            y[slot] = moment.imag
    if abs(y[0] - 1.0) > _RULE_TOL:
        raise ValueError("state must be normalized (empty-word moment != 1)")
    mat = assemble_moment_matrix(problem, y)
    min_eig = float(np.linalg.eigvalsh(mat).min())
    if min_eig < -_PSD_TOL:
        raise ValueError(f"assembled moment matrix not PSD (min eig {min_eig})")
    return y


def embedded_psd_entries(
    problem: MomentProblem, var_offset: int = 0
) -> tuple[list[tuple[int, int, int, float]], int]:
    """Upper-triangle entries of the real-embedded moment matrix as forms.

    Returns (entries, side): entries are (i, j, variable, coeff) with i <= j
    over the real slot variables shifted by var_offset, side = 2 n_words.
    Feeding them to a PSD cone constrains exactly the Hermitian moment matrix,
    since the embedding [[Re, -Im], [Im, Re]] is PSD iff the original is.
    """
    n = problem.n_words
    entries: list[tuple[int, int, int, float]] = []
    for r in range(n):
        for c in range(n):
            k = int(problem.entry_var[r, c])
            if k < 0:
                continue
            if r <= c:
                entries.append((r, c, var_offset + k, 1.0))
                entries.append((r + n, c + n, var_offset + k, 1.0))
            slot = problem.im_slots[k]
            if slot is not None:
                sign = -1.0 if problem.entry_conj[r, c] else 1.0
                entries.append((r, c + n, var_offset + slot, -sign))
    return entries, 2 * n


def real_psd_entries(
    problem: MomentProblem, var_offset: int = 0
) -> tuple[list[tuple[int, int, int, float]], int]:
    """Upper-triangle entries of the conjugation-symmetric moment matrix.

    Valid for programs whose objective and non-matrix constraints only touch
    re slots: negating every im slot then maps feasible points to feasible
    points with the same value, so by convexity the im slots can be fixed to
    zero and the moment matrix taken real symmetric of side n_words.  Only the
    complex-variable re slots (ids 0..n_complex-1, shifted by var_offset)
    appear.  Callers must verify their functional vectors vanish on im slots.
    """
    n = problem.n_words
    entries: list[tuple[int, int, int, float]] = []
    for r in range(n):
        for c in range(r, n):
            k = int(problem.entry_var[r, c])
            if k >= 0:
                entries.append((r, c, var_offset + k, 1.0))
    return entries, n


def moment_structure_json(problem: MomentProblem) -> str:
    """Debug dump: variable table and sparsity pattern of the moment matrix."""
    entries = [
        {
            "row": int(i),
            "col": int(j),
            "var": int(problem.entry_var[i, j]),
            "conj": bool(problem.entry_conj[i, j]),
        }
        for i in range(problem.n_words)
        for j in range(problem.n_words)
        if problem.entry_var[i, j] >= 0
    ]
    payload = {
        "n_words": problem.n_words,
        "n_complex_vars": problem.n_complex,
        "n_real_slots": problem.n_real,
        "words": [str(w) for w in problem.words],
        "variables": [
            {"id": k, "word": str(w), "im_slot": problem.im_slots[k]}
            for k, w in enumerate(problem.var_words)
        ],
        "entries": entries,
    }
    return json.dumps(payload, indent=2, sort_keys=True)
