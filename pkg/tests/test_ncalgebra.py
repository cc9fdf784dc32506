"""Tests for word canonicalization and moment-matrix structure.

The independent oracle here is direct matrix arithmetic: explicit
tensor-product strategies whose moments are computed by multiplying the
assigned matrices, never through the module's own canonical forms.
"""

import json

import numpy as np
import pytest

from renyidi.ncalgebra import (
    IDENTITY_WORD,
    ZERO,
    Monomial,
    NCPolynomial,
    OperatorSymbol,
    adjoint_word,
    assemble_moment_matrix,
    aux_symbol,
    build_moment_problem,
    build_word_set,
    canonicalize,
    embed_real,
    evaluate_strategy,
    functional,
    measurement_symbol,
    moment_structure_json,
)

A0 = measurement_symbol("A", 0, 0)
A1 = measurement_symbol("A", 1, 0)
B0 = measurement_symbol("B", 0, 0)
B1 = measurement_symbol("B", 1, 0)
CHSH_SYMBOLS = [A0, A1, B0, B1]

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


def eigenspace_projector(obs: np.ndarray) -> np.ndarray:
    """Projector onto the +1 eigenspace of a +-1-valued observable."""
    return (np.eye(obs.shape[0]) + obs) / 2


def kron3(a: np.ndarray, b: np.ndarray, e: np.ndarray) -> np.ndarray:
    return np.kron(np.kron(a, b), e)


def ideal_chsh_assignment(dim_e: int = 1):
    """Tsirelson-optimal qubit strategy, embedded as commuting tensor factors."""
    ia, ib, ie = np.eye(2), np.eye(2), np.eye(dim_e)
    h_plus = (PAULI_X + PAULI_Z) / np.sqrt(2)
    h_minus = (PAULI_Z - PAULI_X) / np.sqrt(2)
    return {
        A0: kron3(eigenspace_projector(PAULI_Z), ib, ie),
        A1: kron3(eigenspace_projector(PAULI_X), ib, ie),
        B0: kron3(ia, eigenspace_projector(h_plus), ie),
        B1: kron3(ia, eigenspace_projector(h_minus), ie),
    }


def chsh_win_polynomial() -> NCPolynomial:
    """Winning probability of the CHSH game, outcomes 1|x eliminated."""
    one = NCPolynomial.constant(1.0)
    total = NCPolynomial({})
    for x, a_sym in ((0, A0), (1, A1)):
        for y, b_sym in ((0, B0), (1, B1)):
            pa = NCPolynomial.from_word((a_sym,))
            pb = NCPolynomial.from_word((b_sym,))
            if x * y == 0:
                total = total + pa * pb + (one - pa) * (one - pb)
            else:
                total = total + pa * (one - pb) + (one - pa) * pb
    return total * 0.25


def word_matrix(word: Monomial, assignment, dim: int) -> np.ndarray:
    out = np.eye(dim, dtype=complex)
    for sym, dag in word.letters:
        mat = assignment[sym]
        out = out @ (mat.conj().T if dag else mat)
    return out


def random_strategy(seed: int, with_aux: bool = False):
    """Random tensor-product strategy: Haar-rotated projectors per party."""
    rng = np.random.default_rng(seed)
    dim_a, dim_b, dim_e = 2, 2, (2 if with_aux else 1)

    def haar_projector(d, rank):
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        q, _ = np.linalg.qr(g)
        return q @ np.diag([1.0] * rank + [0.0] * (d - rank)) @ q.conj().T

    assignment = {
        A0: kron3(haar_projector(dim_a, 1), np.eye(dim_b), np.eye(dim_e)),
        A1: kron3(haar_projector(dim_a, 1), np.eye(dim_b), np.eye(dim_e)),
        B0: kron3(np.eye(dim_a), haar_projector(dim_b, 1), np.eye(dim_e)),
        B1: kron3(np.eye(dim_a), haar_projector(dim_b, 1), np.eye(dim_e)),
    }
    symbols = list(CHSH_SYMBOLS)
    if with_aux:
        z_raw = rng.normal(size=(dim_e, dim_e)) + 1j * rng.normal(size=(dim_e, dim_e))
        z_sym = aux_symbol("Z")
        assignment[z_sym] = kron3(np.eye(dim_a), np.eye(dim_b), z_raw / 2)
        symbols.append(z_sym)
    dim = dim_a * dim_b * dim_e
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    return symbols, rho, assignment


class TestCanonicalize:
    def test_idempotence_collapses(self):
        assert canonicalize((A0, A0)) == Monomial(((A0, False),))

    def test_orthogonality_annihilates(self):
        other = measurement_symbol("A", 0, 1)
        assert canonicalize((A0, other)) is ZERO

    def test_party_commutation_sorts(self):
        assert canonicalize((B0, A0)) == canonicalize((A0, B0))
        word = canonicalize((B0, A0))
        assert [s.party for s, _ in word.letters] == ["A", "B"]

    def test_aux_sorts_last(self):
        z = aux_symbol("Z")
        word = canonicalize(((z, False), (A0, False)))
        assert [s.party for s, _ in word.letters] == ["A", "Aux"]

    def test_empty_word(self):
        assert canonicalize(()) == IDENTITY_WORD

    def test_dagger_normalized_on_hermitian(self):
        word = canonicalize(((A0, True),))
        assert word == Monomial(((A0, False),))

    def test_undeclared_symbol_rejected(self):
        with pytest.raises(ValueError, match="undeclared"):
            canonicalize(("not a symbol",))

    def test_projector_requires_hermitian(self):
        with pytest.raises(ValueError):
            OperatorSymbol(name="bad", party="Aux", hermitian=False, projector=True)

    def test_measurement_needs_labels(self):
        with pytest.raises(ValueError):
            OperatorSymbol(name="A?", party="A")

    def test_adjoint_of_mixed_word(self):
        z = aux_symbol("Z")
        word = canonicalize(((A0, False), (z, False)))
        adj = adjoint_word(word)
        assert adj.letters == ((A0, False), (z, True))
        assert adjoint_word(adj) == word


def naive_rewrite(letters, rng):
    """Reference rewriter: applies randomly chosen valid moves to a fixpoint.

    Moves: inversion-reducing cross-party swaps, adjacent projector
    idempotence, adjacent same-input orthogonality.  Terminates because every
    move reduces (inversions, length) lexicographically.
    """
    rank = {"A": 0, "B": 1, "Aux": 2}
    word = list(letters)
    while True:
        moves = []
        for i in range(len(word) - 1):
            (s1, d1), (s2, d2) = word[i], word[i + 1]
            if rank[s1.party] > rank[s2.party]:
                moves.append(("swap", i))
            if s1.party == s2.party:
                if (
                    s1.projector and s2.projector and s1.party in ("A", "B")
                    and s1.input == s2.input
                ):
                    moves.append(("zero" if s1.output != s2.output else "drop", i))
                elif s1 == s2 and d1 == d2 and s1.projector:
                    moves.append(("drop", i))
        if not moves:
            return tuple(word)
        kind, i = moves[rng.integers(len(moves))]
        if kind == "swap":
            word[i], word[i + 1] = word[i + 1], word[i]
        elif kind == "drop":
            del word[i + 1]
        else:
            return ZERO


class TestConfluence:
    def test_thousand_random_words(self):
        rng = np.random.default_rng(20240817)
        z1, z2 = aux_symbol("Z1"), aux_symbol("Z2")
        a01 = measurement_symbol("A", 0, 1)
        pool = [A0, A1, B0, B1, a01, z1, z2]
        for _ in range(1000):
            length = int(rng.integers(0, 7))
            letters = tuple(
                (pool[rng.integers(len(pool))], bool(rng.integers(2)))
                for _ in range(length)
            )
            canon = canonicalize(letters)
            # idempotence of the canonicalizer itself
            assert canonicalize(canon) == canon if canon is not ZERO else True
            # two independent random rewrite orders agree with it
            for sub_seed in (1, 2):
                ref = naive_rewrite(
                    [(s, d and not s.hermitian) for s, d in letters],
                    np.random.default_rng(hash((sub_seed, length)) % 2**32),
                )
                if ref is ZERO:
                    assert canon is ZERO
                else:
                    assert canon == Monomial(ref)


class TestWordSet:
    def test_chsh_level1(self):
        words = build_word_set(CHSH_SYMBOLS, 1)
        expected = {IDENTITY_WORD} | {Monomial(((s, False),)) for s in CHSH_SYMBOLS}
        assert words[0] == IDENTITY_WORD
        assert set(words) == expected
        assert len(words) == 5

    def test_chsh_level2_hand_enumeration(self):
        words = build_word_set(CHSH_SYMBOLS, 2)
        # 1, four letters, A0A1, A1A0, four AxBy, B0B1, B1B0
        assert len(words) == 13
        assert canonicalize((A0, A1)) in words
        assert canonicalize((A1, A0)) in words
        assert canonicalize((B1, B0)) in words
        # squares collapsed, orthogonal pairs absent
        assert all(len(w) <= 2 for w in words)

    def test_local_extras_with_one_aux(self):
        z = aux_symbol("Z")
        words = build_word_set(CHSH_SYMBOLS + [z], 1, local_extras=True)
        expected = {IDENTITY_WORD}
        expected |= {Monomial(((s, False),)) for s in CHSH_SYMBOLS}
        expected |= {Monomial(((z, d),)) for d in (False, True)}
        for m in CHSH_SYMBOLS:
            for d in (False, True):
                expected.add(Monomial(((m, False), (z, d))))
        assert set(words) == expected
        assert len(words) == 15

    def test_level_zero_rejected(self):
        with pytest.raises(ValueError):
            build_word_set(CHSH_SYMBOLS, 0)

    def test_deterministic_order(self):
        w1 = build_word_set(CHSH_SYMBOLS, 2)
        w2 = build_word_set(list(reversed(CHSH_SYMBOLS)), 2)
        assert w1 == w2


class TestMomentProblem:
    def test_three_word_diagonal(self):
        problem = build_moment_problem([IDENTITY_WORD] + [
            Monomial(((s, False),)) for s in (A0, B0)
        ])
        assert problem.n_words == 3
        # diagonal uses idempotence: (A0)†A0 -> A0
        diag_vars = [problem.entry_var[i, i] for i in range(3)]
        assert diag_vars[0] == 0
        assert problem.var_words[diag_vars[1]] == Monomial(((A0, False),))
        assert problem.var_words[diag_vars[2]] == Monomial(((B0, False),))
        # off-diagonal introduces the A0B0 moment; all words self-adjoint here
        assert problem.n_complex == 4
        assert problem.n_real == 4

    def test_identity_word_required_first(self):
        with pytest.raises(ValueError, match="identity"):
            build_moment_problem([Monomial(((A0, False),))])

    def test_orthogonal_products_leave_structural_zero(self):
        a01 = measurement_symbol("A", 0, 1)
        words = [IDENTITY_WORD, Monomial(((A0, False),)), Monomial(((a01, False),))]
        problem = build_moment_problem(words)
        assert problem.entry_var[1, 2] == -1
        y = np.zeros(problem.n_real)
        y[0] = 1.0
        mat = assemble_moment_matrix(problem, y)
        assert mat[1, 2] == 0

    def test_adjoint_pairing_shares_variable(self):
        z = aux_symbol("Z")
        words = [IDENTITY_WORD, Monomial(((z, False),)), Monomial(((z, True),))]
        problem = build_moment_problem(words)
        k_fwd, conj_fwd = problem.lookup(Monomial(((z, False),)))
        k_bwd, conj_bwd = problem.lookup(Monomial(((z, True),)))
        assert k_fwd == k_bwd
        assert conj_fwd != conj_bwd
        assert problem.im_slots[k_fwd] is not None

    def test_hermitian_symmetry_of_forms(self):
        z = aux_symbol("Z")
        words = build_word_set([A0, B0, z], 1, local_extras=True)
        problem = build_moment_problem(words)
        rng = np.random.default_rng(5)
        y = rng.normal(size=problem.n_real)
        y[0] = 1.0
        mat = assemble_moment_matrix(problem, y)
        assert np.abs(mat - mat.conj().T).max() < 1e-14

    def test_real_embedding_psd_equivalence(self):
        rng = np.random.default_rng(7)
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        herm = g @ g.conj().T
        emb = embed_real(herm)
        assert np.abs(emb - emb.T).max() < 1e-12
        assert np.linalg.eigvalsh(emb).min() > -1e-12
        indef = herm - 3.0 * np.eye(4)
        assert np.linalg.eigvalsh(embed_real(indef)).min() < 0


class TestEvaluateStrategy:
    def test_ideal_chsh_moments(self):
        words = build_word_set(CHSH_SYMBOLS, 1)
        for x, a_sym in ((0, A0), (1, A1)):
            for y_in, b_sym in ((0, B0), (1, B1)):
                words.append(canonicalize((a_sym, b_sym)))
        problem = build_moment_problem(words)
        assignment = ideal_chsh_assignment()
        rho = np.outer(PHI_PLUS, PHI_PLUS.conj())
        y = evaluate_strategy(problem, rho, assignment)
        form = functional(chsh_win_polynomial(), problem)
        assert form @ y == pytest.approx((2 + np.sqrt(2)) / 4, abs=1e-10)

    def test_product_deterministic_strategy(self):
        words = build_word_set(CHSH_SYMBOLS, 2)
        problem = build_moment_problem(words)
        one = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
        zero = np.zeros((2, 2), dtype=complex)
        assignment = {
            A0: np.kron(one, np.eye(2)),
            A1: np.kron(zero, np.eye(2)),
            B0: np.kron(np.eye(2), one),
            B1: np.kron(np.eye(2), one),
        }
        rho = np.zeros((4, 4), dtype=complex)
        rho[0, 0] = 1.0
        y = evaluate_strategy(problem, rho, assignment)
        assert np.all((np.abs(y) < 1e-12) | (np.abs(y - 1) < 1e-12))
        mat = assemble_moment_matrix(problem, y)
        assert np.linalg.eigvalsh(mat).min() > -1e-8

    def test_depolarized_setup1_distribution(self):
        q = 0.05
        words = build_word_set(CHSH_SYMBOLS, 1)
        for a_sym in (A0, A1):
            for b_sym in (B0, B1):
                words.append(canonicalize((a_sym, b_sym)))
        problem = build_moment_problem(words)
        assignment = ideal_chsh_assignment()
        psi = np.outer(PHI_PLUS, PHI_PLUS.conj())
        rho = (1 - 2 * q) * psi + 2 * q * np.eye(4) / 4
        y = evaluate_strategy(problem, rho, assignment)
        ideal = {(0, 0): (2 + np.sqrt(2)) / 8, (0, 1): (2 + np.sqrt(2)) / 8,
                 (1, 0): (2 + np.sqrt(2)) / 8, (1, 1): (2 - np.sqrt(2)) / 8}
        for (x, y_in), p00_ideal in ideal.items():
            a_sym = (A0, A1)[x]
            b_sym = (B0, B1)[y_in]
            k, _ = problem.lookup(canonicalize((a_sym, b_sym)))
            ka, _ = problem.lookup(Monomial(((a_sym, False),)))
            kb, _ = problem.lookup(Monomial(((b_sym, False),)))
            p00 = y[k]
            p01 = y[ka] - y[k]
            p10 = y[kb] - y[k]
            p11 = 1 - y[ka] - y[kb] + y[k]
            expect00 = (1 - 2 * q) * p00_ideal + q / 2
            assert p00 == pytest.approx(expect00, abs=1e-10)
            marg_ideal = 0.5
            assert p01 == pytest.approx((1 - 2 * q) * (marg_ideal - p00_ideal) + q / 2, abs=1e-10)
            assert p10 == pytest.approx((1 - 2 * q) * (marg_ideal - p00_ideal) + q / 2, abs=1e-10)
            assert p00 + p01 + p10 + p11 == pytest.approx(1.0, abs=1e-12)

    def test_rule_violation_rejected(self):
        words = build_word_set(CHSH_SYMBOLS, 1)
        problem = build_moment_problem(words)
        assignment = ideal_chsh_assignment()
        assignment[A0] = assignment[A0] * 0.7  # no longer idempotent
        rho = np.outer(PHI_PLUS, PHI_PLUS.conj())
        with pytest.raises(ValueError, match="idempotent"):
            evaluate_strategy(problem, rho, assignment)

    def test_noncommuting_cross_party_rejected(self):
        words = build_word_set([A0, B0], 1)
        problem = build_moment_problem(words)
        proj = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
        assignment = {A0: proj, B0: eigenspace_projector(PAULI_X)}
        rho = np.eye(2, dtype=complex) / 2
        with pytest.raises(ValueError, match="commute"):
            evaluate_strategy(problem, rho, assignment)

    def test_unnormalized_state_rejected(self):
        words = build_word_set(CHSH_SYMBOLS, 1)
        problem = build_moment_problem(words)
        rho = 2.0 * np.outer(PHI_PLUS, PHI_PLUS.conj())
        with pytest.raises(ValueError, match="normalized"):
            evaluate_strategy(problem, rho, ideal_chsh_assignment())


class TestGramSoundness:
    @pytest.mark.parametrize("seed", range(20))
    def test_seeded_strategies_psd(self, seed):
        symbols, rho, assignment = random_strategy(seed, with_aux=(seed % 2 == 1))
        words = build_word_set(symbols, 1, local_extras=(seed % 2 == 1))
        problem = build_moment_problem(words)
        y = evaluate_strategy(problem, rho, assignment)
        assert y[0] == pytest.approx(1.0, abs=1e-12)
        mat = assemble_moment_matrix(problem, y)
        assert np.linalg.eigvalsh(mat).min() > -1e-8
        # spot-check entries against direct matrix products
        dim = rho.shape[0]
        rng = np.random.default_rng(1000 + seed)
        for _ in range(5):
            i, j = rng.integers(problem.n_words, size=2)
            ui = word_matrix(problem.words[i], assignment, dim)
            uj = word_matrix(problem.words[j], assignment, dim)
            direct = complex(np.trace(rho @ ui.conj().T @ uj))
            assert mat[i, j] == pytest.approx(direct, abs=1e-10)


class TestFunctional:
    def test_constant_selects_y1(self):
        problem = build_moment_problem(build_word_set(CHSH_SYMBOLS, 1))
        form = functional(NCPolynomial.constant(1.0), problem)
        expected = np.zeros(problem.n_real)
        expected[0] = 1.0
        assert np.array_equal(form, expected)

    def test_missing_word_named_in_error(self):
        # pairwise products are variables of the level-1 matrix, so go to length 3
        problem = build_moment_problem(build_word_set(CHSH_SYMBOLS, 1))
        poly = NCPolynomial.from_word((A0, A1, A0))
        with pytest.raises(ValueError, match=r"A\(0\|0\).A\(0\|1\).A\(0\|0\)"):
            functional(poly, problem)

    def test_non_hermitian_rejected(self):
        z = aux_symbol("Z")
        problem = build_moment_problem(build_word_set([A0, B0, z], 1))
        poly = NCPolynomial.from_word(((z, False),), coeff=1.0)
        with pytest.raises(ValueError, match="Hermitian"):
            functional(poly, problem)

    def test_quadrature_node_polynomial_m1(self):
        # one-node lower-bound polynomial: 1 + c*(1 + Z + Z' + (1-t) Z'Z)
        z = aux_symbol("Z")
        words = [IDENTITY_WORD, Monomial(((z, False),)), Monomial(((z, True),))]
        problem = build_moment_problem(words)
        t1, w1, alpha = 0.5, 2.0, 0.5
        pref = np.sin(alpha * np.pi) / np.pi
        c = pref * w1 / t1
        poly = (
            NCPolynomial.constant(1.0 + c)
            + NCPolynomial.from_word(((z, False),), c)
            + NCPolynomial.from_word(((z, True),), c)
            + NCPolynomial.from_word(((z, True), (z, False)), c * (1 - t1))
        )
        form = functional(poly, problem)
        k_z, _ = problem.lookup(Monomial(((z, False),)))
        k_zz, _ = problem.lookup(Monomial(((z, True), (z, False))))
        assert form[0] == pytest.approx(1.0 + c)
        assert form[k_z] == pytest.approx(2 * c)  # Z + Z' gives twice the real slot
        im_slot = problem.im_slots[k_z]
        assert form[im_slot] == pytest.approx(0.0)
        assert form[k_zz] == pytest.approx(c * (1 - t1))

    @pytest.mark.parametrize("seed", range(8))
    def test_consistency_random_polynomials(self, seed):
        symbols, rho, assignment = random_strategy(seed, with_aux=True)
        words = build_word_set(symbols, 1, local_extras=True)
        problem = build_moment_problem(words)
        y = evaluate_strategy(problem, rho, assignment)
        rng = np.random.default_rng(300 + seed)
        half = NCPolynomial({})
        for _ in range(6):
            w = words[rng.integers(len(words))]
            coeff = complex(rng.normal(), rng.normal())
            half = half + NCPolynomial.from_word(w, coeff)
        poly = half + half.adjoint()
        assert poly.is_hermitian()
        form = functional(poly, problem)
        dim = rho.shape[0]
        direct = 0j
        for w, cf in poly.terms.items():
            direct += cf * np.trace(rho @ word_matrix(w, assignment, dim))
        assert abs(direct.imag) < 1e-10
        assert form @ y == pytest.approx(direct.real, abs=1e-8)


class TestPolynomialAlgebra:
    def test_zero_coefficients_pruned(self):
        p = NCPolynomial.from_word((A0,)) - NCPolynomial.from_word((A0,))
        assert p.terms == {}

    def test_multiplication_canonicalizes(self):
        p = NCPolynomial.from_word((A0,)) * NCPolynomial.from_word((A0,))
        assert p.terms == {Monomial(((A0, False),)): 1.0 + 0j}

    def test_orthogonal_product_vanishes(self):
        a01 = measurement_symbol("A", 0, 1)
        p = NCPolynomial.from_word((A0,)) * NCPolynomial.from_word((a01,))
        assert p.terms == {}

    def test_hermitian_flag(self):
        z = aux_symbol("Z")
        p = NCPolynomial.from_word(((z, False),), 1.0)
        assert not p.is_hermitian()
        assert (p + p.adjoint()).is_hermitian()


class TestMomentStructureJson:
    def test_round_trip_fields(self):
        z = aux_symbol("Z")
        problem = build_moment_problem(build_word_set([A0, B0, z], 1, local_extras=True))
        payload = json.loads(moment_structure_json(problem))
        assert payload["n_words"] == problem.n_words
        assert payload["n_complex_vars"] == problem.n_complex
        assert payload["n_real_slots"] == problem.n_real
        assert payload["words"][0] == "1"
        assert len(payload["variables"]) == problem.n_complex
        nonzero = sum(
            1
            for i in range(problem.n_words)
            for j in range(problem.n_words)
            if problem.entry_var[i, j] >= 0
        )
        assert len(payload["entries"]) == nonzero
