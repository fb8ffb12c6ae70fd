"""Cloning product-state quantum money with its public verifier.

Money is ``(x)_i (cos t_i |0> + sin t_i |1>)`` with secret angles. Held
states stay in product form, so ``n`` is not limited by dense memory; the
forger never sees the angles, only the state and the verifier.
"""
from __future__ import annotations

import math
import threading
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .hilbert import PureState
from .oracle import DEGENERATE_AMPLITUDE, VerifierOracle
from .seeding import as_generator

DENSE_LIMIT = 20
MATCH_TOL = 1e-12


class ForgeryCapError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ProductState:
    """Tensor product of single-qubit states, first factor most significant."""

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        facs = []
        for f in self.factors:
            f = np.array(f, dtype=complex).ravel()
            if f.size != 2 or abs(np.linalg.norm(f) - 1) > 1e-10:
                raise ValueError("each factor must be a normalized qubit state")
            f.setflags(write=False)
            facs.append(f)
        if not facs:
            raise ValueError("product state needs at least one factor")
        object.__setattr__(self, "factors", tuple(facs))

    @property
    def n(self) -> int:
        return len(self.factors)

    def replace(self, k: int, factor: np.ndarray) -> ProductState:
        facs = list(self.factors)
        facs[k] = factor
        return ProductState(tuple(facs))

    def overlaps(self, other: ProductState) -> np.ndarray:
        return np.array([np.vdot(a, b) for a, b in zip(self.factors, other.factors)])

    def fidelity(self, other: ProductState) -> float:
        if self.n != other.n:
            raise ValueError("product states have different qubit counts")
        return float(min(1.0, np.prod(np.abs(self.overlaps(other)) ** 2)))

    def to_pure_state(self) -> PureState:
        if self.n > DENSE_LIMIT:
            raise MemoryError(f"{self.n} qubits exceed the dense limit of {DENSE_LIMIT}")
        vec = np.ones(1, dtype=complex)
        for f in self.factors:
            vec = np.kron(vec, f)
        return PureState(vec, (vec.size, 1))


def qubit(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)], dtype=complex)


class ProductVerifier:
    """Measures ``P = |psi><psi|`` for a product target.

    Outcome 0 keeps product form only when the measured state differs from
    the target in at most one factor, which is all the cloning attack needs;
    anything else is refused rather than approximated.
    """

    def __init__(self, target: ProductState):
        self._target = target
        self._count = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._count

    @property
    def n(self) -> int:
        return self._target.n

    def measure(self, state: ProductState, rng) -> tuple[int, ProductState]:
        if state.n != self._target.n:
            raise ValueError("qubit count mismatch")
        with self._lock:
            self._count += 1
        ov = self._target.overlaps(state)
        p1 = float(min(1.0, np.prod(np.abs(ov) ** 2)))
        if as_generator(rng).random() < p1:
            return 1, self._target
        differing = np.flatnonzero(np.abs(ov) ** 2 < 1 - MATCH_TOL)
        if differing.size == 0:
            raise ValueError("outcome 0 sampled on a state equal to the target")
        if differing.size > 1:
            raise NotImplementedError("post-measurement state is entangled; use the dense verifier")
        k = int(differing[0])
        rest = state.factors[k] - ov[k] * self._target.factors[k]
        norm = np.linalg.norm(rest)
        if norm < DEGENERATE_AMPLITUDE:
            raise ValueError("degenerate outcome-0 branch")
        return 0, state.replace(k, rest / norm)

    def dense(self) -> VerifierOracle:
        """Equivalent dense oracle (small ``n`` only), for cross-checks."""
        return VerifierOracle(self._target.to_pure_state())


@dataclass
class ProductMoney:
    angles: np.ndarray
    state: ProductState
    verifier: ProductVerifier


def mint(n: int, rng, angles=None) -> ProductMoney:
    """Bank side: secret uniform angles in ``[0, 2 pi)`` and the matching verifier."""
    if n < 1:
        raise ValueError("money needs at least one qubit")
    if angles is None:
        angles = as_generator(rng).uniform(0, 2 * math.pi, size=n)
    angles = np.asarray(angles, dtype=float)
    if angles.size != n:
        raise ValueError("need one angle per qubit")
    state = ProductState(tuple(qubit(t) for t in angles))
    return ProductMoney(angles, state, ProductVerifier(state))


def haar_qubit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    return v / np.linalg.norm(v)


@dataclass
class ForgeResult:
    clone: ProductState
    original: ProductState
    oracle_calls: int
    per_qubit_calls: list[int] = field(default_factory=list)

    def calls_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.per_qubit_calls).items()))


def _forge(state: ProductState, verifier: ProductVerifier, rng: np.random.Generator, cap: int) -> ForgeResult:
    held = state
    copies = []
    per_qubit = []
    start = verifier.call_count
    for k in range(held.n):
        aside = held.factors[k]
        for attempt in range(1, cap + 1):
            bit, held = verifier.measure(held.replace(k, haar_qubit(rng)), rng)
            if bit:
                break
        else:
            raise ForgeryCapError(f"qubit {k} not restored within {cap} attempts")
        copies.append(aside)
        per_qubit.append(attempt)
    return ForgeResult(ProductState(tuple(copies)), held, verifier.call_count - start, per_qubit)


def forge(money: ProductMoney, rng, max_iters_per_qubit: int = 200) -> ForgeResult:
    """Clone the money one qubit at a time using only the state and the verifier."""
    return _forge(money.state, money.verifier, as_generator(rng), max_iters_per_qubit)
