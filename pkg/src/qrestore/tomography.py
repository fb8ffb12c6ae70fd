"""Single-copy estimators for ``q_i = <psi| Q_i |psi>``, ``Q_i = |i><i|_B``.

Three methods, all ending with the held copy back in ``|psi>``:

* ``SR``: measure B, restore, repeat; frequencies.
* ``AP``: alternate ``Q_i`` and ``P``; count repeated outcomes.
* ``PE``: phase estimation of ``W_i = (2P - 1)(2Q_i - 1)``; median of rounds.

The AP bound treats the ``2N - 1`` consecutive-outcome indicators as
independent Bernoulli(q_i) draws. They are: every step repeats the previous
outcome with probability ``q_i`` whichever of the four states the walk is in.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .hilbert import PureState, fidelity
from .oracle import VerifierOracle, measure_subsystem_array, subsystem_mask
from .restoration import default_max_iters, restore_many
from .seeding import as_generator

DEGENERATE_Q = 1e-12
RECOVERY_CAP_SCALE = 100.0
LOG2_MEDIAN_BASE = math.log2(2 / math.sqrt(3))


class Method(str, enum.Enum):
    SR = "SR"
    AP = "AP"
    PE = "PE"


class RecoveryCapError(RuntimeError):
    """The walk did not return to ``|psi>`` within the recovery cap."""


def hoeffding_n(delta: float, epsilon: float, d: int) -> int:
    """Samples so that all ``d`` frequencies are within ``delta`` w.p. ``1 - epsilon``."""
    _check_budget(delta, epsilon, d)
    return max(1, math.ceil(math.log(2 * d / epsilon) / (2 * delta**2)))


def ap_rounds(delta: float, epsilon: float, d: int) -> int:
    """Number ``N`` of (Q_i, P) pairs for per-outcome error ``epsilon / d``."""
    _check_budget(delta, epsilon, d)
    return max(1, math.ceil(0.5 + math.log(2 * d / epsilon) / (4 * delta**2)))


def qpe_ancillas(delta: float) -> int:
    if delta <= 0:
        raise ValueError("delta must be positive")
    return math.ceil(math.log2(3 * math.pi / delta)) + 2


def median_rounds(d: int, epsilon: float) -> int:
    """Rounds ``r`` with ``(1/2)(sqrt(3)/2)**r <= epsilon / d``."""
    _check_budget(1.0, epsilon, d)
    return max(1, math.ceil(math.log2(d / (2 * epsilon)) / LOG2_MEDIAN_BASE))


def _check_budget(delta, epsilon, d):
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if d < 1:
        raise ValueError(f"d must be at least 1, got {d}")


def pe_call_bound(d: int, delta: float, epsilon: float) -> float:
    """``2 d r (12 pi / delta + 1)``, the expected-cost ceiling for all ``d`` outcomes."""
    return 2 * d * median_rounds(d, epsilon) * (12 * math.pi / delta + 1)


@dataclass(frozen=True, eq=False)
class JordanFrame:
    """Two-dimensional frame for outcome ``i``.

    ``cos(theta)**2 = q``. ``psi_perp``, ``v`` and ``v_perp`` are ``None``
    when ``q`` is 0 or 1 (``degenerate``).
    """

    index: int
    q: float
    theta: float
    psi: np.ndarray
    psi_perp: np.ndarray | None
    v: np.ndarray | None
    v_perp: np.ndarray | None

    @property
    def degenerate(self) -> bool:
        return self.psi_perp is None

    @property
    def phase(self) -> float:
        """``theta / pi``, the eigenphase of ``W_i`` on this frame."""
        return self.theta / math.pi

    def w_matrix(self) -> np.ndarray:
        """``W_i`` restricted to ``{psi, psi_perp}``: rotation by ``2 theta``."""
        c, s = math.cos(2 * self.theta), math.sin(2 * self.theta)
        return np.array([[c, -s], [s, c]])

    def coordinates(self, vec: np.ndarray) -> np.ndarray:
        return np.array([np.vdot(self.psi, vec), np.vdot(self.psi_perp, vec)])

    def embed(self, coords) -> np.ndarray:
        return coords[0] * self.psi + coords[1] * self.psi_perp


def build_jordan_frame(state: PureState, i: int) -> JordanFrame:
    psi = state.amplitudes
    mask = subsystem_mask(state.split, i)
    inside = np.where(mask, psi, 0)
    q = float(min(1.0, max(0.0, np.vdot(inside, inside).real)))
    theta = math.acos(math.sqrt(q))
    if q < DEGENERATE_Q or q > 1 - DEGENERATE_Q:
        return JordanFrame(i, q, theta, psi, None, None, None)
    v = inside / math.sqrt(q)
    v_perp = (psi - inside) / math.sqrt(1 - q)
    psi_perp = -math.sqrt(1 - q) * v + math.sqrt(q) * v_perp
    return JordanFrame(i, q, theta, psi, psi_perp, v, v_perp)


@dataclass
class ApTranscript:
    """Outcome bits ``a_1..a_2N`` (odd: ``Q_i``, even: ``P``) and recovery."""

    bits: np.ndarray
    recovery_bits: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))
    degenerate: bool = False

    @property
    def differences(self) -> np.ndarray:
        return self.bits[1:] ^ self.bits[:-1]

    @property
    def m(self) -> int:
        return int((self.differences == 0).sum())

    @property
    def rounds(self) -> int:
        return self.bits.size // 2

    @property
    def recovery_steps(self) -> int:
        return self.recovery_bits.size // 2

    def p_outcomes(self) -> np.ndarray:
        return np.concatenate([self.bits[1::2], self.recovery_bits[1::2]])


@dataclass
class PeTranscript:
    """Measured phases, per-round estimates and ``P`` outcomes."""

    t: int
    r: int
    outcomes: np.ndarray
    estimates: np.ndarray
    p_bits: np.ndarray
    recovery_rounds: int = 0
    degenerate: bool = False

    def p_outcomes(self) -> np.ndarray:
        return self.p_bits


@dataclass
class SingleEstimate:
    estimate: float
    transcript: Any
    final_state: PureState
    oracle_calls: int


@dataclass
class EstimateReport:
    method: Method
    delta: float
    epsilon: float
    params: dict
    estimates: np.ndarray
    oracle_calls: int
    transcripts: list = field(default_factory=list)
    final_state: PureState | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "method": Method(self.method).value,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "params": self.params,
            "estimates": [float(x) for x in self.estimates],
            "oracle_calls": int(self.oracle_calls),
            "seed": self.seed,
        }
        doc.update(self.extra)
        return doc


def walk_transitions(p_bits) -> dict[str, int]:
    """Transition counts of the two-state walk read off successive ``P`` outcomes.

    The walk starts in ``psi`` (outcome 1).
    """
    seq = np.concatenate([[1], np.asarray(p_bits, dtype=np.int8)])
    prev, nxt = seq[:-1], seq[1:]
    return {
        "psi->psi": int(((prev == 1) & (nxt == 1)).sum()),
        "psi->perp": int(((prev == 1) & (nxt == 0)).sum()),
        "perp->psi": int(((prev == 0) & (nxt == 1)).sum()),
        "perp->perp": int(((prev == 0) & (nxt == 0)).sum()),
    }


def _require_target(state: PureState, oracle: VerifierOracle) -> None:
    if state.split != oracle.target.split or fidelity(state, oracle.target) < 1 - 1e-10:
        raise ValueError("the held state must be the oracle's target")


def estimate_sr(state: PureState, oracle: VerifierOracle, delta: float, epsilon: float, rng, max_iters: int | None = None) -> EstimateReport:
    """Measure B in the computational basis ``N`` times, restoring after each."""
    rng = as_generator(rng)
    _require_target(state, oracle)
    dim_a, d = state.split
    n = hoeffding_n(delta, epsilon, d)
    start = oracle.call_count
    m = state.matrix()
    q = np.einsum("ab,ab->b", m.conj(), m).real
    outcomes = rng.choice(d, size=n, p=q / q.sum())
    cols = m[:, outcomes].T
    samples = cols / np.linalg.norm(cols, axis=1)[:, None]
    if max_iters is None:
        max_iters = default_max_iters(state)
    iters = restore_many(samples, oracle, rng, max_iters)
    estimates = np.bincount(outcomes, minlength=d) / n
    return EstimateReport(
        Method.SR, delta, epsilon, {"N": n}, estimates, oracle.call_count - start,
        transcripts=[{"outcomes": outcomes, "iterations": iters}], final_state=state,
    )


def estimate_ap_single(state: PureState, oracle: VerifierOracle, i: int, delta: float, eps_over_d: float, rng) -> SingleEstimate:
    """Alternating projections for one outcome ``i`` with failure budget ``eps_over_d``."""
    rng = as_generator(rng)
    _require_target(state, oracle)
    start = oracle.call_count
    frame = build_jordan_frame(state, i)
    if frame.degenerate:
        exact = round(frame.q)
        return SingleEstimate(float(exact), ApTranscript(np.empty(0, dtype=np.int8), degenerate=True), state, 0)
    n = ap_rounds(delta, eps_over_d, 1)
    mask = subsystem_mask(state.split, i)
    vec = state.amplitudes
    bits = np.empty(2 * n, dtype=np.int8)
    for k in range(n):
        bits[2 * k], vec = measure_subsystem_array(vec, mask, rng)
        bits[2 * k + 1], vec = oracle.measure_array(vec, rng)
    w1 = 2 * frame.q * (1 - frame.q)
    cap = math.ceil(RECOVERY_CAP_SCALE / max(w1, 1e-12))
    recovery: list[int] = []
    last = bits[-1]
    while last == 0:
        if len(recovery) // 2 >= cap:
            raise RecoveryCapError(f"alternating projections did not return to |psi> within {cap} steps")
        b, vec = measure_subsystem_array(vec, mask, rng)
        last, vec = oracle.measure_array(vec, rng)
        recovery += [b, last]
    transcript = ApTranscript(bits, np.array(recovery, dtype=np.int8))
    estimate = transcript.m / (2 * n - 1)
    return SingleEstimate(estimate, transcript, PureState(vec, state.split), oracle.call_count - start)


def qpe_amplitudes(phase: float, t: int) -> np.ndarray:
    """Ancilla amplitudes after ``t``-qubit phase estimation of eigenphase ``phase``.

    Entry ``y`` is ``2**-t sum_k exp(2 pi i k (phase - y / 2**t))``.
    """
    size = 2**t
    k = np.arange(size)
    return np.fft.fft(np.exp(2j * np.pi * k * phase)) / size


def qpe_distribution(phase: float, t: int) -> np.ndarray:
    return np.abs(qpe_amplitudes(phase, t)) ** 2


class _PhaseEstimator:
    """Exact phase estimation of ``W_i`` on its invariant plane.

    Eigenvectors ``phi_pm = (psi +- i psi_perp) / sqrt(2)`` carry eigenvalues
    ``exp(-+ 2 pi i phase)``, i.e. measured phases ``1 - phase`` and ``phase``.
    """

    def __init__(self, frame: JordanFrame, t: int):
        if frame.degenerate:
            raise ValueError("phase estimation needs 0 < q_i < 1")
        self.frame = frame
        self.t = t
        self.amp_plus = qpe_amplitudes((1 - frame.phase) % 1.0, t)
        self.amp_minus = qpe_amplitudes(frame.phase, t)

    def sample(self, coords: np.ndarray, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        c_psi, c_perp = coords
        a_plus = (c_psi - 1j * c_perp) / math.sqrt(2)
        a_minus = (c_psi + 1j * c_perp) / math.sqrt(2)
        joint_plus = a_plus * self.amp_plus
        joint_minus = a_minus * self.amp_minus
        probs = np.abs(joint_plus) ** 2 + np.abs(joint_minus) ** 2
        y = int(rng.choice(probs.size, p=probs / probs.sum()))
        post = np.array([joint_plus[y], joint_minus[y]])
        return y, post / np.linalg.norm(post)

    def stay_probability(self) -> float:
        """``Pr[psi -> psi]`` for one round of phase estimation then ``P``."""
        return float(np.sum(np.abs((self.amp_plus + self.amp_minus) / 2) ** 2))


def eigenbranch_to_coords(post: np.ndarray) -> np.ndarray:
    """Amplitudes on ``(phi_plus, phi_minus)`` to ``(psi, psi_perp)`` coordinates."""
    b_plus, b_minus = post
    return np.array([(b_plus + b_minus) / math.sqrt(2), 1j * (b_plus - b_minus) / math.sqrt(2)])


def qpe_sample(frame: JordanFrame, t: int, current, rng, oracle: VerifierOracle | None = None) -> tuple[int, np.ndarray]:
    """One phase-estimation run of ``W_i`` on a state in the frame.

    ``current`` is ``"psi"``, ``"psi_perp"`` or coordinates on
    ``(psi, psi_perp)``. Returns the measured ``y`` and the renormalized
    post-measurement amplitudes on ``(phi_plus, phi_minus)``. Charges
    ``oracle`` for the controlled-``W`` uses when given.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    if isinstance(current, str):
        current = {"psi": np.array([1, 0], complex), "psi_perp": np.array([0, 1], complex)}[current]
    est = _PhaseEstimator(frame, t)
    if oracle is not None:
        oracle.charge(oracle.qpe_cost(t))
    return est.sample(np.asarray(current, dtype=complex), as_generator(rng))


def estimate_pe_single(state: PureState, oracle: VerifierOracle, i: int, delta: float, eps_over_d: float, rng) -> SingleEstimate:
    """Median of ``r`` phase-estimation rounds, each followed by a ``P`` measurement."""
    rng = as_generator(rng)
    _require_target(state, oracle)
    start = oracle.call_count
    frame = build_jordan_frame(state, i)
    t = qpe_ancillas(delta)
    r = median_rounds(1, eps_over_d)
    if frame.degenerate:
        exact = float(round(frame.q))
        empty = np.empty(0)
        return SingleEstimate(exact, PeTranscript(t, r, empty, empty, empty, degenerate=True), state, 0)
    est = _PhaseEstimator(frame, t)
    qpe_cost = oracle.qpe_cost(t)
    cap = math.ceil(RECOVERY_CAP_SCALE / max(1 - est.stay_probability(), 1e-12))

    coords = np.array([1, 0], dtype=complex)
    vec = state.amplitudes

    def one_round():
        nonlocal coords, vec
        oracle.charge(qpe_cost)
        y, post = est.sample(coords, rng)
        bit, vec = oracle.measure_array(frame.embed(eigenbranch_to_coords(post)), rng)
        coords = frame.coordinates(vec)
        return y, bit

    outcomes = np.empty(r, dtype=np.int64)
    p_bits = []
    for j in range(r):
        outcomes[j], bit = one_round()
        p_bits.append(bit)
    recovery = 0
    while p_bits[-1] == 0:
        if recovery >= cap:
            raise RecoveryCapError(f"phase estimation walk did not return to |psi> within {cap} rounds")
        _, bit = one_round()
        p_bits.append(bit)
        recovery += 1
    estimates = np.cos(np.pi * outcomes / 2**t) ** 2
    transcript = PeTranscript(t, r, outcomes, estimates, np.array(p_bits, dtype=np.int8), recovery)
    return SingleEstimate(float(np.median(estimates)), transcript, PureState(vec, state.split), oracle.call_count - start)


_SINGLE = {Method.AP: estimate_ap_single, Method.PE: estimate_pe_single}


def estimate_all(
    state: PureState,
    oracle: VerifierOracle,
    method: Method | str,
    delta: float,
    epsilon: float,
    rng,
    basis: np.ndarray | None = None,
) -> EstimateReport:
    """Estimate every ``q_i`` to within ``delta`` with total failure probability ``epsilon``.

    ``basis`` (columns ``|b_i>``) selects another orthonormal basis of B; the
    held state is rotated so that ``|b_i>`` becomes ``|i>`` and rotated back
    afterwards.
    """
    method = Method(str(getattr(method, "value", method)).upper())
    rng = as_generator(rng)
    _require_target(state, oracle)
    dim_a, d = state.split
    _check_budget(delta, epsilon, d)
    if basis is not None:
        basis = np.asarray(basis, dtype=complex)
        if basis.shape != (d, d) or not np.allclose(basis.conj().T @ basis, np.eye(d), atol=1e-10):
            raise ValueError("basis must be a unitary d x d matrix")
        rotated = PureState(state.matrix() @ basis.conj(), state.split)
        inner = VerifierOracle(rotated, oracle.cost_model)
        report = estimate_all(rotated, inner, method, delta, epsilon, rng)
        oracle.absorb(inner)
        report.final_state = PureState(report.final_state.matrix() @ basis.T, state.split)
        report.extra["basis"] = "custom"
        return report
    if method is Method.SR:
        return estimate_sr(state, oracle, delta, epsilon, rng)

    single = _SINGLE[method]
    start = oracle.call_count
    held = state
    estimates = np.empty(d)
    transcripts = []
    for i in range(d):
        res = single(held, oracle, i, delta, epsilon / d, rng)
        estimates[i] = res.estimate
        transcripts.append(res.transcript)
        held = res.final_state
    if method is Method.AP:
        params = {"N": ap_rounds(delta, epsilon, d)}
    else:
        params = {"t": qpe_ancillas(delta), "r": median_rounds(d, epsilon)}
    return EstimateReport(method, delta, epsilon, params, estimates, oracle.call_count - start, transcripts, held)
