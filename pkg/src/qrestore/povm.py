"""General POVM statistics via dilation to a subsystem measurement.

``U (|phi>|1>) = sum_i (sqrt(E_i)|phi>)|i>`` turns ``<phi|E_i|phi>`` into the
B-register statistics of ``U|phi>|1>``. The ancilla's ``|1>`` is stored as
index 0 (outcome ``i`` is stored as index ``i - 1``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hilbert import PureState, fidelity
from .oracle import CostModel, VerifierOracle
from .seeding import as_generator
from .tomography import EstimateReport, Method, estimate_all

POVM_TOL = 1e-10
CLAMP_TOL = 1e-12


class PovmValidationError(ValueError):
    def __init__(self, message: str, worst: float):
        super().__init__(f"{message} (worst violation {worst:.3e})")
        self.worst = worst


@dataclass(frozen=True, eq=False)
class PovmSpec:
    operators: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(np.array(e, dtype=complex) for e in self.operators)
        if not ops:
            raise PovmValidationError("POVM has no operators", float("inf"))
        dim = ops[0].shape[0]
        for e in ops:
            if e.shape != (dim, dim):
                raise PovmValidationError(f"operator shape {e.shape} != ({dim}, {dim})", float("inf"))
        herm = max(float(np.max(np.abs(e - e.conj().T))) for e in ops)
        if herm > POVM_TOL:
            raise PovmValidationError("operator is not Hermitian", herm)
        neg = max(float(max(0.0, -np.linalg.eigvalsh(e).min())) for e in ops)
        if neg > POVM_TOL:
            raise PovmValidationError("operator is not positive semidefinite", neg)
        comp = float(np.max(np.abs(sum(ops) - np.eye(dim))))
        if comp > POVM_TOL:
            raise PovmValidationError("operators do not sum to the identity", comp)
        object.__setattr__(self, "operators", ops)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    @property
    def outcomes(self) -> int:
        return len(self.operators)

    def to_json(self) -> dict:
        """``{dim, operators}``; each operator is row-major ``[re, im]`` pairs."""
        return {
            "dim": self.dim,
            "operators": [[[float(z.real), float(z.imag)] for z in e.ravel()] for e in self.operators],
        }

    @classmethod
    def from_json(cls, doc: dict) -> PovmSpec:
        dim = int(doc["dim"])
        ops = []
        for raw in doc["operators"]:
            arr = np.asarray(raw, dtype=float)
            if arr.shape[-1] != 2 or arr.size != 2 * dim * dim:
                raise PovmValidationError(f"operator does not hold {dim}x{dim} complex entries", float("inf"))
            z = arr[..., 0] + 1j * arr[..., 1]
            ops.append(z.reshape(dim, dim))
        return cls(tuple(ops))

    @classmethod
    def load(cls, path) -> PovmSpec:
        return cls.from_json(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))


@dataclass(frozen=True, eq=False)
class DilationUnitary:
    matrix: np.ndarray
    povm: PovmSpec

    def apply(self, phi: PureState) -> PureState:
        """``U |phi>|1>`` as a state split ``(dim, outcomes)``."""
        anc = np.zeros(self.povm.outcomes, dtype=complex)
        anc[0] = 1
        return PureState(self.matrix @ np.kron(phi.amplitudes, anc), (self.povm.dim, self.povm.outcomes))

    def uncompute(self, psi: PureState) -> PureState:
        return PureState(self.matrix.conj().T @ psi.amplitudes, psi.split)


def psd_sqrt(e: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(e)
    if vals.min() < -CLAMP_TOL:
        raise PovmValidationError("cannot take the square root of a non-PSD operator", -vals.min())
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def trine_povm() -> PovmSpec:
    """``E_k = (2/3)|eta_k><eta_k|`` with real unit vectors at angles ``2 pi k / 3``."""
    ops = []
    for k in range(3):
        eta = np.array([np.cos(2 * np.pi * k / 3), np.sin(2 * np.pi * k / 3)])
        ops.append(2 / 3 * np.outer(eta, eta))
    return PovmSpec(tuple(ops))


def random_povm(dim: int, outcomes: int, rng) -> PovmSpec:
    """``E_i = S^{-1/2} G_i S^{-1/2}`` from random PSD ``G_i`` with ``S = sum G_i``."""
    rng = as_generator(rng)
    gs = []
    for _ in range(outcomes):
        a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        gs.append(a @ a.conj().T)
    inv_root = np.linalg.inv(psd_sqrt(sum(gs)))
    ops = [inv_root @ g @ inv_root for g in gs]
    ops = [(e + e.conj().T) / 2 for e in ops]
    return PovmSpec(tuple(ops))


def build_dilation(povm: PovmSpec) -> DilationUnitary:
    """Unitary on ``C^dim (x) C^d`` whose ancilla-``|1>`` columns are the isometry.

    The remaining columns are a Gram-Schmidt completion over the standard
    basis, taken in index order, so the result is deterministic.
    """
    dim, d = povm.dim, povm.outcomes
    n = dim * d
    roots = [psd_sqrt(e) for e in povm.operators]
    u = np.zeros((n, n), dtype=complex)
    fixed = [x * d for x in range(dim)]
    for x in range(dim):
        col = np.zeros((dim, d), dtype=complex)
        for i, root in enumerate(roots):
            col[:, i] = root[:, x]
        u[:, x * d] = col.ravel()
    iso = u[:, fixed]
    gram = iso.conj().T @ iso
    err = float(np.max(np.abs(gram - np.eye(dim))))
    if err > 1e-8:
        raise PovmValidationError("dilation columns are not orthonormal", err)

    basis = [u[:, c] for c in fixed]
    free = [c for c in range(n) if c % d != 0]
    filled = []
    for k in range(n):
        if len(filled) == len(free):
            break
        v = np.zeros(n, dtype=complex)
        v[k] = 1
        for _ in range(2):
            for b in basis:
                v = v - np.vdot(b, v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            v = v / norm
            basis.append(v)
            filled.append(v)
    if len(filled) != len(free):
        raise PovmValidationError("unitary completion failed", float(len(free) - len(filled)))
    for c, v in zip(free, filled):
        u[:, c] = v
    return DilationUnitary(u, povm)


def true_statistics(phi: PureState, povm: PovmSpec, dilation: DilationUnitary | None = None) -> np.ndarray:
    """``<phi|E_i|phi>`` by direct contraction, checked against the dilated state."""
    v = phi.amplitudes
    if v.size != povm.dim:
        raise ValueError(f"state dimension {v.size} does not match POVM dimension {povm.dim}")
    direct = np.array([np.vdot(v, e @ v).real for e in povm.operators])
    dilation = dilation or build_dilation(povm)
    m = dilation.apply(phi).matrix()
    via_b = np.einsum("ab,ab->b", m.conj(), m).real
    gap = float(np.max(np.abs(direct - via_b)))
    if gap > 1e-10:
        raise ArithmeticError(f"reduction identity violated by {gap:.3e}")
    return direct


def estimate_povm(phi: PureState, povm: PovmSpec, method: Method | str, delta: float, epsilon: float, rng,
                  cost_model: CostModel = CostModel.QPE_BLOCK) -> tuple[EstimateReport, PureState]:
    """Estimate every ``<phi|E_i|phi>`` on a single copy and hand ``phi`` back.

    Each use of ``P' = U P U^dagger`` costs one ``P`` call and two uses of
    ``U``; preparation and uncomputation add two more. Both counts are
    reported (``oracle_calls`` and ``unitary_calls`` in ``report.extra``).
    """
    dilation = build_dilation(povm)
    psi = dilation.apply(phi)
    oracle = VerifierOracle(psi, cost_model)
    report = estimate_all(psi, oracle, method, delta, epsilon, rng)
    back = dilation.uncompute(report.final_state).matrix()
    anc = back[:, 0]
    leak = float(np.linalg.norm(back[:, 1:]))
    if leak > 1e-8:
        raise ArithmeticError(f"ancilla did not return to |1> (leak {leak:.3e})")
    recovered = PureState(anc / np.linalg.norm(anc), (povm.dim, 1))
    report.extra.update({
        "oracle_calls": report.oracle_calls,
        "unitary_calls": 2 * report.oracle_calls + 2,
        "recovered_fidelity": fidelity(recovered, PureState(phi.amplitudes, (povm.dim, 1))),
    })
    return report, recovered
