"""Dense linear algebra for bipartite pure states.

Amplitudes are stored flat in row-major order, index ``a * dim_b + b``, so
``amplitudes.reshape(dim_a, dim_b)`` is the coefficient matrix of the state.
Practical ceiling is around 2**20 amplitudes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .seeding import as_generator

NORM_TOL = 1e-10
DEFAULT_SCHMIDT_TOL = 1e-12


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized state on ``C^dim_a (x) C^dim_b``."""

    amplitudes: np.ndarray
    split: tuple[int, int]

    def __post_init__(self):
        amps = _frozen(np.ravel(self.amplitudes))
        dim_a, dim_b = (int(x) for x in self.split)
        if dim_a < 1 or dim_b < 1:
            raise ValueError(f"split dimensions must be positive, got {self.split}")
        if amps.size == 0:
            raise ValueError("empty amplitude vector")
        if amps.size != dim_a * dim_b:
            raise ValueError(f"{amps.size} amplitudes do not fit split {dim_a}x{dim_b}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (norm {norm!r})")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "split", (dim_a, dim_b))

    @classmethod
    def from_vector(cls, vec, split: tuple[int, int] | None = None, normalize: bool = True) -> PureState:
        vec = np.asarray(vec, dtype=complex).ravel()
        if vec.size == 0:
            raise ValueError("empty amplitude vector")
        if normalize:
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise ValueError("zero vector cannot be normalized")
            vec = vec / norm
        return cls(vec, split if split is not None else (vec.size, 1))

    @property
    def dim_a(self) -> int:
        return self.split[0]

    @property
    def dim_b(self) -> int:
        return self.split[1]

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def matrix(self) -> np.ndarray:
        """Coefficient matrix ``M[a, b]``."""
        return self.amplitudes.reshape(self.split)

    def with_split(self, dim_a: int, dim_b: int) -> PureState:
        return PureState(self.amplitudes, (dim_a, dim_b))

    def to_json(self) -> dict:
        return {
            "dim_a": self.dim_a,
            "dim_b": self.dim_b,
            "amplitudes": [[float(z.real), float(z.imag)] for z in self.amplitudes],
        }

    @classmethod
    def from_json(cls, doc: dict) -> PureState:
        amps = np.array([complex(re, im) for re, im in doc["amplitudes"]], dtype=complex)
        return cls(amps, (int(doc["dim_a"]), int(doc["dim_b"])))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> PureState:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    dim: int = field(default=0)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > NORM_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > NORM_TOL:
            raise ValueError(f"density matrix trace is {np.trace(m).real!r}, expected 1")
        if np.linalg.eigvalsh(m).min() < -NORM_TOL:
            raise ValueError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", m.shape[0])


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    """``|psi> = sum_i sqrt(p_i) |u_i>|v_i>`` with ``p`` descending.

    ``basis_a[:, i]`` is ``u_i`` and ``basis_b[:, i]`` is ``v_i``.
    """

    coefficients: np.ndarray
    basis_a: np.ndarray
    basis_b: np.ndarray
    rank: int
    tolerance_used: float

    def reconstruct(self) -> np.ndarray:
        roots = np.sqrt(self.coefficients)
        return np.einsum("i,ai,bi->ab", roots, self.basis_a, self.basis_b).ravel()


def tensor(a, b) -> PureState:
    """Kronecker product ``a (x) b`` with split ``(dim a, dim b)``."""
    va = a.amplitudes if isinstance(a, PureState) else np.asarray(a, dtype=complex).ravel()
    vb = b.amplitudes if isinstance(b, PureState) else np.asarray(b, dtype=complex).ravel()
    if va.size == 0 or vb.size == 0:
        raise ValueError("tensor factors must be non-empty")
    return PureState(np.kron(va, vb), (va.size, vb.size))


def partial_trace(state: PureState, keep: Literal["A", "B"] = "A") -> DensityMatrix:
    m = state.matrix()
    if keep == "A":
        rho = m @ m.conj().T
    elif keep == "B":
        rho = m.T @ m.conj()
    else:
        raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")
    return DensityMatrix(rho)


def _phase_fix(vec: np.ndarray) -> complex:
    """Phase that makes the first non-negligible entry real and positive."""
    idx = int(np.argmax(np.abs(vec) > 1e-12 * np.max(np.abs(vec))))
    z = vec[idx]
    return np.conj(z) / abs(z)


def schmidt(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> SchmidtDecomposition:
    """SVD of the coefficient matrix.

    Squared singular values below ``tol`` times the largest are dropped; the
    retained ``p_i`` are renormalized to sum to one.
    """
    if not 0 < tol < 1:
        raise ValueError(f"tolerance must lie in (0, 1), got {tol}")
    try:
        u, s, vh = np.linalg.svd(state.matrix(), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"Schmidt decomposition failed: {exc}") from exc
    p = s**2
    keep = p >= tol * p[0]
    rank = int(keep.sum())
    p = p[keep] / p[keep].sum()
    basis_a = u[:, :rank].copy()
    basis_b = vh[:rank, :].T.copy()
    for i in range(rank):
        ph = _phase_fix(basis_a[:, i])
        basis_a[:, i] *= ph
        basis_b[:, i] /= ph
    return SchmidtDecomposition(p, basis_a, basis_b, rank, tol)


def fidelity(a: PureState, b: PureState) -> float:
    va = a.amplitudes if isinstance(a, PureState) else np.asarray(a)
    vb = b.amplitudes if isinstance(b, PureState) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    return float(min(1.0, abs(np.vdot(va, vb)) ** 2))


def random_pure_state(dim_a: int, dim_b: int, rng=None) -> PureState:
    """Haar-random state from normalized i.i.d. complex Gaussians."""
    rng = as_generator(rng)
    n = dim_a * dim_b
    vec = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return PureState(vec / np.linalg.norm(vec), (dim_a, dim_b))


def basis_state(dim: int, index: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=complex)
    vec[index] = 1.0
    return vec


def bell_state() -> PureState:
    return PureState(np.array([1, 0, 0, 1]) / np.sqrt(2), (2, 2))


def figure1_state(dim_b: int = 10, dim_a: int = 3) -> PureState:
    """``sqrt(1-1e-2-1e-4)|00> + sqrt(1e-2)|11> + sqrt(1e-4)|22>``."""
    if dim_a < 3 or dim_b < 3:
        raise ValueError("the three-term state needs dim_a, dim_b >= 3")
    m = np.zeros((dim_a, dim_b), dtype=complex)
    for i, p in enumerate((1 - 1e-2 - 1e-4, 1e-2, 1e-4)):
        m[i, i] = np.sqrt(p)
    return PureState(m.ravel(), (dim_a, dim_b))


def uniform_schmidt_state(rank: int, dim_a: int, dim_b: int) -> PureState:
    """Equal-weight Schmidt state ``sum_i |ii> / sqrt(rank)``."""
    if rank > min(dim_a, dim_b):
        raise ValueError("rank exceeds min(dim_a, dim_b)")
    m = np.zeros((dim_a, dim_b), dtype=complex)
    m[np.arange(rank), np.arange(rank)] = 1 / np.sqrt(rank)
    return PureState(m.ravel(), (dim_a, dim_b))


def collapse_b(state: PureState, rng, basis: np.ndarray | None = None) -> tuple[int, np.ndarray]:
    """Measure subsystem B and discard it.

    Returns the outcome index and the normalized conditional state on A.
    ``basis`` columns give the measurement basis (computational by default).
    """
    m = state.matrix()
    if basis is not None:
        m = m @ basis.conj()
    weights = np.einsum("ab,ab->b", m.conj(), m).real
    rng = as_generator(rng)
    k = int(rng.choice(weights.size, p=weights / weights.sum()))
    col = m[:, k]
    return k, col / np.linalg.norm(col)
