"""Verifier oracle: coherent measurement of ``P = |psi><psi|`` with call accounting.

Mixed states on A are simulated as pure-state trajectories (one sample of
the ensemble per run). The exact density-matrix picture is available through
:func:`f_map`, which never touches the counter.
"""
from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hilbert import DensityMatrix, PureState
from .seeding import as_generator

DEGENERATE_AMPLITUDE = 1e-14


class DegenerateMeasurementError(RuntimeError):
    """Sampled a branch whose amplitude is numerically zero."""


class CostModel(enum.Enum):
    """How oracle uses are charged.

    UNIT: every projective use of ``P`` (measurement or reflection) costs 1,
    and phase estimation with ``t`` ancillas is charged the ``2**t - 1``
    controlled reflections it contains.
    QPE_BLOCK: each phase-estimation invocation costs ``2**t`` and each
    measurement of ``P`` costs 1.
    """

    UNIT = "unit"
    QPE_BLOCK = "qpe_block"


class VerifierOracle:
    """Black box measuring ``P = |psi><psi|`` on a held state.

    The counter only increases and is guarded by a lock so that a shared
    oracle can be charged from several threads. For parallel trials prefer
    :meth:`fork` and :meth:`absorb`.
    """

    def __init__(self, target: PureState, cost_model: CostModel = CostModel.UNIT, record: bool = False):
        self.target = target
        self.cost_model = CostModel(cost_model)
        self._psi = target.amplitudes
        self._count = 0
        self._lock = threading.Lock()
        self.transcript: list[dict] | None = [] if record else None

    def __repr__(self):
        return f"VerifierOracle(split={self.target.split}, cost_model={self.cost_model.name}, calls={self._count})"

    @property
    def call_count(self) -> int:
        return self._count

    def charge(self, n: int) -> None:
        if n < 0:
            raise ValueError("oracle charges must be non-negative")
        with self._lock:
            self._count += int(n)

    def qpe_cost(self, t: int) -> int:
        if self.cost_model is CostModel.QPE_BLOCK:
            return 2**t
        return 2**t - 1

    def fork(self) -> VerifierOracle:
        """Fresh oracle for the same target with a zero counter."""
        return VerifierOracle(self.target, self.cost_model, record=self.transcript is not None)

    def absorb(self, *others: VerifierOracle) -> None:
        for other in others:
            self.charge(other.call_count)
            if self.transcript is not None and other.transcript:
                self.transcript.extend(other.transcript)

    def overlap(self, vec: np.ndarray) -> complex:
        return complex(np.vdot(self._psi, vec))

    def measure_array(self, vec: np.ndarray, rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """Measure ``P`` on a raw normalized vector; returns ``(bit, post)``."""
        amp = np.vdot(self._psi, vec)
        p1 = min(1.0, abs(amp) ** 2)
        self.charge(1)
        if rng.random() < p1:
            bit, post = 1, self._psi * (amp / abs(amp))
        else:
            rest = vec - amp * self._psi
            norm = np.linalg.norm(rest)
            if norm < DEGENERATE_AMPLITUDE:
                raise DegenerateMeasurementError(
                    "outcome 0 sampled on a state with no weight off the target; treat the state as |psi>"
                )
            bit, post = 0, rest / norm
        if self.transcript is not None:
            self.transcript.append({"call_count": self._count, "bit": bit})
        return bit, post

    def dump_transcript(self, path) -> None:
        """Write the recorded measurements as JSON lines."""
        if self.transcript is None:
            raise RuntimeError("oracle was created without record=True")
        with Path(path).open("w") as fh:
            for rec in self.transcript:
                fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class MeasurementOutcome:
    bit: int
    post_state: PureState


def _check_dims(state: PureState, target: PureState) -> None:
    if state.dim != target.dim:
        raise ValueError(f"state dimension {state.dim} does not match target {target.dim}")


def measure_verifier(state: PureState, oracle: VerifierOracle, rng) -> MeasurementOutcome:
    _check_dims(state, oracle.target)
    bit, post = oracle.measure_array(state.amplitudes, as_generator(rng))
    return MeasurementOutcome(bit, PureState(post, state.split))


def subsystem_mask(split: tuple[int, int], i: int) -> np.ndarray:
    dim_a, dim_b = split
    if not 0 <= i < dim_b:
        raise IndexError(f"basis index {i} out of range for dim_B={dim_b}")
    mask = np.zeros((dim_a, dim_b), dtype=bool)
    mask[:, i] = True
    return mask.ravel()


def measure_subsystem_array(vec: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Measure ``{Q_i, 1 - Q_i}`` where ``mask`` marks the support of ``Q_i``."""
    inside = np.where(mask, vec, 0)
    p1 = min(1.0, float(np.vdot(inside, inside).real))
    if rng.random() < p1:
        return 1, inside / np.sqrt(p1)
    outside = vec - inside
    norm = np.linalg.norm(outside)
    if norm < DEGENERATE_AMPLITUDE:
        raise DegenerateMeasurementError("outcome 0 sampled on a state fully inside Q_i")
    return 0, outside / norm


def measure_subsystem_projector(state: PureState, i: int, rng) -> MeasurementOutcome:
    """Born-rule sample of ``Q_i = |i><i|_B``. Does not touch any oracle."""
    mask = subsystem_mask(state.split, i)
    bit, post = measure_subsystem_array(state.amplitudes, mask, as_generator(rng))
    return MeasurementOutcome(bit, PureState(post, state.split))


def reflect_verifier(state: PureState, oracle: VerifierOracle) -> PureState:
    """``(2P - 1)|state>``; one oracle use."""
    _check_dims(state, oracle.target)
    psi = oracle.target.amplitudes
    oracle.charge(1)
    out = 2 * np.vdot(psi, state.amplitudes) * psi - state.amplitudes
    return PureState(out, state.split)


def reflect_subsystem(state: PureState, i: int) -> PureState:
    """``(2Q_i - 1)|state>``."""
    mask = subsystem_mask(state.split, i)
    return PureState(np.where(mask, state.amplitudes, -state.amplitudes), state.split)


def f_map(sigma, oracle: VerifierOracle | PureState, outcome: int) -> np.ndarray:
    """Unnormalized state on A after attaching ``1/d`` on B and measuring ``P``.

    ``F_b(sigma) = Tr_B[Pi_b (sigma (x) 1/d) Pi_b]`` with ``Pi_1 = P`` and
    ``Pi_0 = 1 - P``. Evaluated densely from the definition.
    """
    target = oracle.target if isinstance(oracle, VerifierOracle) else oracle
    sig = sigma.matrix if isinstance(sigma, DensityMatrix) else np.asarray(sigma, dtype=complex)
    dim_a, dim_b = target.split
    if sig.shape != (dim_a, dim_a):
        raise ValueError(f"sigma must be {dim_a}x{dim_a}, got {sig.shape}")
    psi = target.amplitudes
    proj = np.outer(psi, psi.conj())
    if outcome == 0:
        proj = np.eye(psi.size) - proj
    elif outcome != 1:
        raise ValueError("outcome must be 0 or 1")
    joint = np.kron(sig, np.eye(dim_b) / dim_b)
    out = (proj @ joint @ proj).reshape(dim_a, dim_b, dim_a, dim_b)
    return np.einsum("ibjb->ij", out)


def unravel_mixed_attach(sample: PureState, oracle: VerifierOracle, rng) -> PureState:
    """Append a uniformly random basis state ``|j>_B`` to an A-sample.

    Averaged over ``j`` this realizes ``sigma (x) 1/d`` exactly.
    """
    dim_a, dim_b = oracle.target.split
    vec = sample.amplitudes
    if vec.size != dim_a:
        raise ValueError(f"A-sample has dimension {vec.size}, expected {dim_a}")
    j = int(as_generator(rng).integers(dim_b)) if dim_b > 1 else 0
    out = np.zeros((dim_a, dim_b), dtype=complex)
    out[:, j] = vec
    return PureState(out.ravel(), (dim_a, dim_b))
