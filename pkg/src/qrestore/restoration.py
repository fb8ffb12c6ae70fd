"""State restoration: rebuild ``|psi>`` from its A part using the verifier.

Each iteration attaches a uniformly random ``|j>_B``, measures ``P`` and, on
failure, discards B by measuring it in the computational basis so the A part
stays a pure sample of the conditional ensemble.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hilbert import DEFAULT_SCHMIDT_TOL, DensityMatrix, PureState, partial_trace, schmidt
from .oracle import VerifierOracle
from .seeding import as_generator

# Per-run probability of hitting the default iteration cap is below this.
CAP_FAILURE_PROB = 1e-12
UNDERFLOW = 1e-300


class RestorationCapError(RuntimeError):
    """Restoration did not succeed within ``max_iters`` iterations."""

    def __init__(self, iterations: int, transcript: list[int] | None = None):
        super().__init__(f"state not restored after {iterations} iterations")
        self.iterations = iterations
        self.transcript = transcript or []


@dataclass(frozen=True)
class RestorationResult:
    recovered: PureState
    iterations: int
    oracle_calls: int


@dataclass(frozen=True)
class DiscardResult:
    """A-sample left after setting B aside, plus what was set aside."""

    sample: PureState
    index: int
    kept_b: np.ndarray
    rho_b: DensityMatrix


@dataclass(frozen=True)
class CloneResult:
    restored: PureState
    copy_b: np.ndarray
    index: int
    iterations: int


@dataclass
class TrajectoryReport:
    """Exact conditional success probabilities.

    ``conditional_success[k-1]`` is the chance iteration ``k`` succeeds given
    that iterations ``1..k-1`` failed; ``sigma_k_traces[k-1]`` is the
    probability of reaching iteration ``k`` at all.
    """

    conditional_success: np.ndarray
    sigma_k_traces: np.ndarray
    truncated: bool = False
    levels: np.ndarray = field(default_factory=lambda: np.empty(0))

    def plateaus(self, max_slope: float = 0.05, rel_tol: float = 0.01) -> list[tuple[int, float]]:
        """``(k, level)`` for each flat region of the curve on a log-k axis.

        A point is flat when ``|d log c / d log k|`` is minimal over
        ``[k/2, 2k]`` and below ``max_slope``; adjacent flat points with
        levels within ``rel_tol`` are one plateau, reported at its first ``k``.
        """
        c = self.conditional_success
        if c.size < 2:
            return [(1, float(c[0]))] if c.size else []
        slope = np.abs(np.diff(np.log(c))) * np.arange(1, c.size)
        found: list[tuple[int, float]] = []
        for k in range(slope.size):
            window = slope[k // 2: min(slope.size, 2 * k + 2)]
            if slope[k] <= window.min() + 1e-12 and slope[k] < max_slope:
                level = float(c[k])
                if found and abs(level - found[-1][1]) <= rel_tol * found[-1][1]:
                    continue
                found.append((k + 1, level))
        return found

    def to_csv(self) -> str:
        rows = ["k,conditional_success,sigma_trace"]
        for k, (c, s) in enumerate(zip(self.conditional_success, self.sigma_k_traces), start=1):
            rows.append(f"{k},{float(c)!r},{float(s)!r}")
        return "\n".join(rows) + "\n"


def default_max_iters(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> int:
    """``max(100 chi d, d ln(1/eta) / p_min)``.

    Every iteration succeeds with probability at least ``p_min / d``, so the
    second term bounds the cap-failure probability by ``eta``. The first term
    alone is not enough for skewed spectra, where the slow mode lives near
    ``p_min / d``.
    """
    sd = schmidt(state, tol)
    d = state.dim_b
    tail = d * math.log(1 / CAP_FAILURE_PROB) / float(sd.coefficients.min())
    return int(max(100 * sd.rank * d, math.ceil(tail)))


def discard_subsystem(state: PureState, rng, tol: float = DEFAULT_SCHMIDT_TOL) -> DiscardResult:
    """Set B aside by measuring it in the Schmidt basis ``{v_i}``.

    Leaves ``u_i`` on A with probability ``p_i``; ``kept_b`` is the matching
    ``v_i``.
    """
    sd = schmidt(state, tol)
    i = int(as_generator(rng).choice(sd.rank, p=sd.coefficients))
    sample = PureState(sd.basis_a[:, i], (state.dim_a, 1))
    return DiscardResult(sample, i, sd.basis_b[:, i].copy(), partial_trace(state, "B"))


def discard_many(state: PureState, n: int, rng, tol: float = DEFAULT_SCHMIDT_TOL) -> np.ndarray:
    """``n`` independent A-samples as rows of an ``(n, dim_a)`` array."""
    sd = schmidt(state, tol)
    idx = as_generator(rng).choice(sd.rank, size=n, p=sd.coefficients)
    return sd.basis_a.T[idx].copy()


def restore(initial_a_sample: PureState, oracle: VerifierOracle, rng, max_iters: int | None = None) -> RestorationResult:
    """Iterate attach-and-verify until the verifier accepts."""
    rng = as_generator(rng)
    target = oracle.target
    dim_a, dim_b = target.split
    a = np.asarray(initial_a_sample.amplitudes, dtype=complex)
    if a.size != dim_a:
        raise ValueError(f"A-sample has dimension {a.size}, expected {dim_a}")
    if max_iters is None:
        max_iters = default_max_iters(target)
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    start = oracle.call_count
    transcript: list[int] = []
    joint = np.zeros((dim_a, dim_b), dtype=complex)
    for it in range(1, max_iters + 1):
        j = int(rng.integers(dim_b))
        joint[:] = 0
        joint[:, j] = a
        bit, post = oracle.measure_array(joint.ravel(), rng)
        transcript.append(bit)
        if bit:
            return RestorationResult(PureState(post, target.split), it, oracle.call_count - start)
        m = post.reshape(dim_a, dim_b)
        weights = np.einsum("ab,ab->b", m.conj(), m).real
        k = int(rng.choice(dim_b, p=weights / weights.sum()))
        a = m[:, k] / np.linalg.norm(m[:, k])
    raise RestorationCapError(max_iters, transcript)


def simulate_iterations(target: PureState, samples: np.ndarray, rng, max_iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized restoration of many independent A-samples.

    Same process as :func:`restore`, stepped in lockstep for all samples.
    Returns ``(iterations, capped)``; capped runs report ``max_iters``.
    """
    rng = as_generator(rng)
    m = target.matrix()
    dim_a, dim_b = target.split
    mt = m.T.copy()
    colnorm2 = np.einsum("ba,ba->b", mt.conj(), mt).real
    safe = np.where(colnorm2 > 0, np.sqrt(colnorm2), 1.0)
    cols_unit = mt / safe[:, None]

    a = np.array(samples, dtype=complex).reshape(-1, dim_a)
    n = a.shape[0]
    iters = np.zeros(n, dtype=np.int64)
    capped = np.zeros(n, dtype=bool)
    active = np.arange(n)
    while active.size:
        iters[active] += 1
        aa = a[active]
        j = rng.integers(dim_b, size=active.size)
        c = np.einsum("ta,ta->t", mt[j].conj(), aa)
        p1 = np.minimum(np.abs(c) ** 2, 1.0)
        fail = rng.random(active.size) >= p1
        idx = active[fail]
        if idx.size:
            cf, jf = c[fail], j[fail]
            resid = aa[fail] - cf[:, None] * mt[jf]
            rnorm2 = np.einsum("ta,ta->t", resid.conj(), resid).real
            w = (np.abs(cf) ** 2)[:, None] * colnorm2[None, :]
            rows = np.arange(idx.size)
            w[rows, jf] = rnorm2
            cum = np.cumsum(w, axis=1)
            x = (1.0 - rng.random(idx.size)) * cum[:, -1]
            k = np.minimum((cum < x[:, None]).sum(axis=1), dim_b - 1)
            same = k == jf
            new = cols_unit[k]
            new[same] = resid[same] / np.sqrt(rnorm2[same])[:, None]
            a[idx] = new
        over = iters[idx] >= max_iters
        capped[idx[over]] = True
        active = idx[~over]
    return iters, capped


def restore_many(samples: np.ndarray, oracle: VerifierOracle, rng, max_iters: int | None = None) -> np.ndarray:
    """Restore each row of ``samples``; charges the oracle for every iteration."""
    if max_iters is None:
        max_iters = default_max_iters(oracle.target)
    iters, capped = simulate_iterations(oracle.target, samples, rng, max_iters)
    oracle.charge(int(iters.sum()))
    if capped.any():
        raise RestorationCapError(max_iters)
    return iters


def expected_iterations_analytic(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> float:
    """Closed form ``chi * d``."""
    return float(schmidt(state, tol).rank * state.dim_b)


def linear_system_solution(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> tuple[float, np.ndarray]:
    """Solve for ``T(rho_A)`` and the per-basis ``T(|u_i><u_i|)``.

    Unknowns ``x_i = T(|u_i><u_i|)`` and ``y = T(rho_A)`` satisfy
    ``2 p_i x_i - p_i y = d`` and ``y = sum_i p_i x_i``.
    """
    p = schmidt(state, tol).coefficients
    chi, d = p.size, state.dim_b
    a = np.zeros((chi + 1, chi + 1))
    a[np.arange(chi), np.arange(chi)] = 2 * p
    a[:chi, chi] = -p
    a[chi, :chi] = -p
    a[chi, chi] = 1.0
    rhs = np.zeros(chi + 1)
    rhs[:chi] = d
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"singular expected-runtime system: {exc}") from exc
    return float(sol[chi]), sol[:chi]


def expected_iterations_linear_system(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> float:
    return linear_system_solution(state, tol)[0]


def metastable_levels(state: PureState, tol: float = DEFAULT_SCHMIDT_TOL) -> np.ndarray:
    """Conditional success levels of the plateaus, descending.

    Starting from a state diagonal in the Schmidt basis, a failed iteration
    maps weights ``s`` to ``(1 - 2p/d) s + (p/d) <p, s>``; each eigenvector of
    that map is a plateau with success level ``1 - eigenvalue``.
    """
    p = schmidt(state, tol).coefficients
    d = state.dim_b
    step = np.diag(1 - 2 * p / d) + np.outer(p / d, p)
    return np.sort(1 - np.linalg.eigvals(step).real)[::-1]


def trajectory(state: PureState, k_max: int, tol: float = DEFAULT_SCHMIDT_TOL) -> TrajectoryReport:
    """Iterate ``sigma_k = F_0(sigma_{k-1})`` from ``rho_A`` on the Schmidt support.

    On ``span{u_i}`` the maps reduce to
    ``F_1(s) = Tr(rho s) rho / d`` and
    ``F_0(s) = s - (rho s + s rho) / d + Tr(rho s) rho / d``.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    p = schmidt(state, tol).coefficients
    d = state.dim_b
    rho = np.diag(p).astype(complex)
    sigma = rho.copy()
    success, traces = [], []
    truncated = False
    for _ in range(k_max):
        tr = float(np.trace(sigma).real)
        if tr < UNDERFLOW:
            truncated = True
            break
        overlap = float(np.trace(rho @ sigma).real)
        traces.append(tr)
        success.append(overlap / d / tr)
        rs = rho @ sigma
        sigma = sigma - (rs + rs.conj().T) / d + (overlap / d) * rho
    return TrajectoryReport(np.array(success), np.array(traces), truncated, metastable_levels(state, tol))


def clone_subsystem(state: PureState, oracle: VerifierOracle, rng, max_iters: int | None = None) -> CloneResult:
    """Set B aside, then restore ``|psi>`` from what is left on A."""
    rng = as_generator(rng)
    kept = discard_subsystem(state, rng)
    result = restore(kept.sample, oracle, rng, max_iters)
    return CloneResult(result.recovered, kept.kept_b, kept.index, result.iterations)
