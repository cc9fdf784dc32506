"""Bell scenarios, honest behaviors under depolarizing noise, accept sets.

Honest behaviors come from exact 2-qubit computations on the maximally
entangled state with fixed observables per setup, mixed with uniform noise by
P(ab|xy) = (1-2q) P_ideal(ab|xy) + q/2.  Outcome 0 is the +1 eigenspace of
the listed observable.

The test statistic of a round is "perp" on generation rounds (t=0) and the
win/lose bit of the CHSH condition a xor b = x.y on test rounds.  Its honest
distribution is (1-gamma, gamma(1-omega), gamma*omega) over (perp, 0, 1).
Test inputs are drawn uniformly and generation inputs are deterministic at
the key pair; the honest winning probability omega_hon is an input parameter
wherever it appears, not derived from the noise model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "AcceptMode",
    "AcceptSet",
    "BellScenario",
    "HonestBehavior",
    "PERP",
    "SETUPS",
    "chsh_scenario",
    "chsh_winning_prob",
    "delta_tol",
    "extended_chsh_scenario",
    "honest_distribution",
    "q_min_perp",
    "qber",
    "symmetrize_behavior",
    "test_statistic_distribution",
]

PERP = "perp"
_CBAR_KEYS = (PERP, "0", "1")

_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
_SQ2 = math.sqrt(2.0)

# observables per input, plus the designated key-generation input pair
SETUPS: dict[str, dict] = {
    "CHSH2222": {
        "a_obs": (_Z, _X),
        "b_obs": ((_Z + _X) / _SQ2, (_Z - _X) / _SQ2),
        "key_inputs": (0, 0),
    },
    "ExtCHSH": {
        "a_obs": (_Z, _X),
        "b_obs": ((_Z + _X) / _SQ2, (_Z - _X) / _SQ2, _Z),
        "key_inputs": (0, 2),
    },
    "AdvDist1": {
        "a_obs": (_Z, _X),
        "b_obs": ((_X + _Z) / _SQ2, (_X - _Z) / _SQ2),
        "key_inputs": (0, 0),
    },
    "AdvDist2": {
        "a_obs": (_Z, _X),
        "b_obs": (_Z, (_X + _Z) / _SQ2, (_X - _Z) / _SQ2),
        "key_inputs": (0, 0),
    },
}


class AcceptMode(str, Enum):
    BOX = "box"
    ONE_SIDED = "one_sided"


@dataclass(frozen=True)
class HonestBehavior:
    """Conditional table P(ab|xy), indexed [a, b, x, y]."""

    table: np.ndarray
    setup: str
    q: float
    key_inputs: tuple[int, int]

    def __post_init__(self) -> None:
        tab = np.asarray(self.table, float)
        if tab.ndim != 4 or tab.shape[:2] != (2, 2):
            raise ValueError("table must be P[a,b,x,y] with binary outcomes")
        if tab.min() < -1e-12:
            raise ValueError("negative probability entry")
        sums = tab.sum(axis=(0, 1))
        if np.abs(sums - 1.0).max() > 1e-12:
            raise ValueError("columns must sum to one")

    @property
    def n_inputs_a(self) -> int:
        return self.table.shape[2]

    @property
    def n_inputs_b(self) -> int:
        return self.table.shape[3]

    def prob(self, a: int, b: int, x: int, y: int) -> float:
        return float(self.table[a, b, x, y])


def honest_distribution(setup: str, q: float) -> HonestBehavior:
    """Depolarized 2-qubit behavior of a named setup on the singlet-class state."""
    if setup not in SETUPS:
        raise ValueError(f"unknown setup {setup!r}; known: {sorted(SETUPS)}")
    if not 0.0 <= q <= 0.5:
        raise ValueError("depolarizing parameter must lie in [0, 1/2]")
    spec = SETUPS[setup]
    phi = np.zeros(4)
    phi[0] = phi[3] = 1.0 / _SQ2
    rho = np.outer(phi, phi)
    a_obs, b_obs = spec["a_obs"], spec["b_obs"]
    table = np.zeros((2, 2, len(a_obs), len(b_obs)))
    eye = np.eye(2)
    for x, a_o in enumerate(a_obs):
        for y, b_o in enumerate(b_obs):
            for a in (0, 1):
                pa = (eye + (1 if a == 0 else -1) * a_o) / 2
                for b in (0, 1):
                    pb = (eye + (1 if b == 0 else -1) * b_o) / 2
                    ideal = float(np.trace(rho @ np.kron(pa, pb)).real)
                    table[a, b, x, y] = (1 - 2 * q) * ideal + q / 2
    return HonestBehavior(table=table, setup=setup, q=q, key_inputs=spec["key_inputs"])


def qber(behavior: HonestBehavior) -> float:
    """Disagreement probability at the designated key-generation inputs."""
    x, y = behavior.key_inputs
    return behavior.prob(0, 1, x, y) + behavior.prob(1, 0, x, y)


def symmetrize_behavior(behavior: HonestBehavior) -> HonestBehavior:
    """Joint-bit-flip symmetrization: P'(ab|xy) = (P(ab|xy)+P(a'b'|xy))/2."""
    flipped = behavior.table[::-1, ::-1, :, :]
    return HonestBehavior(
        table=(behavior.table + flipped) / 2,
        setup=behavior.setup,
        q=behavior.q,
        key_inputs=behavior.key_inputs,
    )


def chsh_winning_prob(behavior: HonestBehavior, test_dist: dict | None = None) -> float:
    """Probability of a xor b = x.y under the test-input distribution.

    Defaults to uniform over the 2x2 test inputs {0,1} x {0,1}.
    """
    if test_dist is None:
        test_dist = {(x, y): 0.25 for x in (0, 1) for y in (0, 1)}
    total = 0.0
    for (x, y), weight in test_dist.items():
        for a in (0, 1):
            for b in (0, 1):
                if a ^ b == x * y:
                    total += weight * behavior.prob(a, b, x, y)
    return total


def test_statistic_distribution(omega: float, gamma: float) -> dict[str, float]:
    """Honest law of the round statistic over ('perp', '0', '1')."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError("winning probability must lie in [0, 1]")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("test probability must lie in [0, 1)")
    return {PERP: 1.0 - gamma, "0": gamma * (1.0 - omega), "1": gamma * omega}


def delta_tol(n: float, gamma: float, eps_com: float, mode: AcceptMode | str) -> float:
    """Statistical tolerance of the accept test for n rounds.

    box:       sqrt((3 gamma / n) ln(6 / eps_com))
    one_sided: sqrt((3 gamma / n) ln(1 / eps_com))
    """
    if n < 1:
        raise ValueError("need at least one round")
    if not 0.0 < gamma < 1.0:
        raise ValueError("test probability must lie in (0, 1)")
    if eps_com <= 0.0:
        raise ValueError("completeness error must be positive")
    mode = AcceptMode(mode)
    arg = 6.0 / eps_com if mode is AcceptMode.BOX else 1.0 / eps_com
    if arg <= 1.0:
        raise ValueError("completeness error too large for this mode")
    return math.sqrt(3.0 * gamma / n * math.log(arg))


@dataclass(frozen=True)
class AcceptSet:
    """Accepted statistics around q_hon: a box, or one-sided in the lose rate."""

    q_hon: dict[str, float]
    delta_tol: float
    mode: AcceptMode

    def __post_init__(self) -> None:
        if set(self.q_hon) != set(_CBAR_KEYS):
            raise ValueError(f"q_hon must have keys {_CBAR_KEYS}")
        total = sum(self.q_hon.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError("q_hon must be normalized")
        if self.delta_tol <= 0:
            raise ValueError("delta_tol must be positive")
        object.__setattr__(self, "mode", AcceptMode(self.mode))

    def contains(self, q: dict[str, float]) -> bool:
        if self.mode is AcceptMode.BOX:
            return all(
                abs(q[key] - self.q_hon[key]) <= self.delta_tol for key in _CBAR_KEYS
            )
        return q["0"] <= self.q_hon["0"] + self.delta_tol


def q_min_perp(accept: AcceptSet) -> float:
    """Smallest generation-round fraction over the accept set.

    Both modes resolve to q_hon(perp) - delta_tol: the box directly, the
    one-sided mode through the protocol-controlled window on q(perp) (the
    test/generation split is not adversarial, so q(perp) stays within
    delta_tol of 1 - gamma).
    """
    value = accept.q_hon[PERP] - accept.delta_tol
    if value < 0.0:
        warnings.warn("tolerance exceeds the honest generation fraction; clamping to 0")
        return 0.0
    return value


@dataclass(frozen=True)
class BellScenario:
    """Protocol-level description: inputs, key/test splits, statistic map."""

    inputs_a: int
    inputs_b: int
    key_inputs: tuple[int, int]
    test_inputs_a: tuple[int, ...]
    test_inputs_b: tuple[int, ...]
    gamma: float
    test_input_dist: dict[tuple[int, int], float] = field(repr=False)
    generation_input_dist: dict[tuple[int, int], float] = field(repr=False)
    outputs_a: int = 2
    outputs_b: int = 2

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("test probability must lie in (0, 1)")
        if self.outputs_a < 1 or self.outputs_b < 1:
            raise ValueError("each side needs at least one outcome")
        for name, dist in (("test", self.test_input_dist),
                           ("generation", self.generation_input_dist)):
            if abs(sum(dist.values()) - 1.0) > 1e-12:
                raise ValueError(f"{name} input distribution must be normalized")
            if any(p < 0 for p in dist.values()):
                raise ValueError(f"{name} input distribution must be nonnegative")

    def test_statistic(self, a: int, b: int, x: int, y: int, t: int) -> str:
        """Round statistic: 'perp' iff t=0, else the CHSH win/lose bit."""
        if t == 0:
            return PERP
        return "1" if (a ^ b) == (x * y) else "0"


def _uniform_tests() -> dict[tuple[int, int], float]:
    return {(x, y): 0.25 for x in (0, 1) for y in (0, 1)}


def chsh_scenario(gamma: float) -> BellScenario:
    return BellScenario(
        inputs_a=2, inputs_b=2, key_inputs=(0, 0),
        test_inputs_a=(0, 1), test_inputs_b=(0, 1), gamma=gamma,
        test_input_dist=_uniform_tests(),
        generation_input_dist={(0, 0): 1.0},
    )


def extended_chsh_scenario(gamma: float) -> BellScenario:
    """CHSH tests plus a third, key-only input on the B side."""
    return BellScenario(
        inputs_a=2, inputs_b=3, key_inputs=(0, 2),
        test_inputs_a=(0, 1), test_inputs_b=(0, 1), gamma=gamma,
        test_input_dist=_uniform_tests(),
        generation_input_dist={(0, 2): 1.0},
    )
