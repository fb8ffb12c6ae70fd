"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import json
import math
import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from qrestore import cli
from qrestore.applications import forge, mint
from qrestore.hilbert import PureState, bell_state, figure1_state, random_pure_state, schmidt
from qrestore.oracle import CostModel, VerifierOracle, f_map
from qrestore.povm import build_dilation, estimate_povm, random_povm, true_statistics
from qrestore.restoration import (
    default_max_iters,
    discard_many,
    expected_iterations_analytic,
    expected_iterations_linear_system,
    simulate_iterations,
    trajectory,
)
from qrestore.seeding import stream
from qrestore.tomography import (
    Method,
    ap_rounds,
    build_jordan_frame,
    estimate_all,
    estimate_ap_single,
    hoeffding_n,
    median_rounds,
    qpe_ancillas,
    walk_transitions,
)

# Frozen from the independent diagonal recurrence of the three-term state.
FIG1_FIRST = 0.0980002
FIG1_MIDDLE = 0.001952842759578859
FIG1_THIRD = 1.0e-5
PLATEAU_TOL = 1e-6

REPS = 400
REQUIRED_SUCCESSES = math.ceil(0.95 * REPS - 3 * math.sqrt(REPS * 0.95 * 0.05))  # 367
POVM_PAIRS = 100
POVM_REQUIRED = math.ceil(0.95 * POVM_PAIRS - 3 * math.sqrt(POVM_PAIRS * 0.95 * 0.05))  # 89
DELTA, EPSILON = 0.1, 0.05


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def q_of(state):
    m = state.matrix()
    return np.einsum("ab,ab->b", m.conj(), m).real


@lru_cache(maxsize=None)
def estimator_runs(name: str, method: str, delta: float = DELTA, reps: int = REPS):
    state = bell_state() if name == "bell" else random_pure_state(4, 4, stream(2024, 0))
    q = q_of(state)
    errors, calls = [], []
    for rep in range(reps):
        oracle = VerifierOracle(state, CostModel.QPE_BLOCK)
        rng = stream(2024, 1, ("bell", "rand4x4").index(name), "SR AP PE".split().index(method), round(delta * 1000), rep)
        out = estimate_all(state, oracle, method, delta, EPSILON, rng)
        errors.append(float(np.max(np.abs(out.estimates - q))))
        calls.append(out.oracle_calls)
    return state, np.array(errors), np.array(calls)


def test_criterion_1_fig1_monte_carlo():
    start = time.perf_counter()
    record, code, _ = cli.run(["restore", "--figure1", "--trials", "100000", "--seed", "7", "--threads", "1"])
    elapsed = time.perf_counter() - start
    stats = record["aggregate"]["iterations"]
    z = (stats["mean"] - 30) / stats["stderr"]
    ok = abs(z) <= 3 and elapsed < 120 and code == 0
    report(1, ok, f"mean={stats['mean']:.3f} stderr={stats['stderr']:.3f} z={z:+.2f} "
                  f"caps={record['aggregate']['cap_failures']} time={elapsed:.1f}s")
    assert ok


def test_criterion_2_fig1_analytic():
    rep = trajectory(figure1_state(), 200_000)
    found = rep.plateaus()
    levels = [lvl for _, lvl in found]
    checks = []
    if len(found) == 3:
        checks = [abs(levels[0] - FIG1_FIRST), abs(levels[1] - FIG1_MIDDLE), abs(levels[2] - FIG1_THIRD)]
    ok = len(found) == 3 and all(c <= PLATEAU_TOL for c in checks)
    report(2, ok, f"plateaus (k, level)={[(k, f'{lvl:.10g}') for k, lvl in found]} "
                  f"expected=({FIG1_FIRST}, {FIG1_MIDDLE:.10g}, {FIG1_THIRD}) deviations={[f'{c:.2e}' for c in checks]}")
    assert ok


def test_criterion_3_chi_d_law():
    rng = stream(3, 0)
    dims = [(8, 8), (1, 8), (8, 1), (2, 2)] + [tuple(int(x) for x in rng.integers(1, 9, size=2)) for _ in range(8)]
    worst_exact, worst_z, rows = 0.0, 0.0, []
    for k, (da, db) in enumerate(dims):
        state = random_pure_state(da, db, stream(3, 1, k))
        chi_d = expected_iterations_analytic(state)
        worst_exact = max(worst_exact, abs(expected_iterations_linear_system(state) - chi_d))
        g = stream(3, 2, k)
        iters, capped = simulate_iterations(state, discard_many(state, 10_000, g), g, default_max_iters(state))
        assert not capped.any()
        se = iters.std(ddof=1) / math.sqrt(iters.size)
        z = (iters.mean() - chi_d) / se if se > 0 else 0.0
        worst_z = max(worst_z, abs(z))
        rows.append(f"{da}x{db}:{iters.mean():.2f}/{chi_d:g}")
    ok = worst_exact <= 1e-9 and worst_z <= 3
    report(3, ok, f"{len(dims)} states, max|T-chi*d|={worst_exact:.1e}, max|z|={worst_z:.2f} [{' '.join(rows)}]")
    assert ok


def test_criterion_4_estimator_guarantees():
    parts, ok = [], True
    for name in ("bell", "rand4x4"):
        for method in ("SR", "AP", "PE"):
            _, errors, _ = estimator_runs(name, method)
            good = int((errors < DELTA).sum())
            ok &= good >= REQUIRED_SUCCESSES
            parts.append(f"{name}/{method}={good}/{REPS}")
    report(4, ok, f"need >= {REQUIRED_SUCCESSES}/{REPS}: " + " ".join(parts))
    assert ok


def test_criterion_5_cost_bounds():
    state, _, sr_calls = estimator_runs("rand4x4", "SR")
    _, _, ap_calls = estimator_runs("rand4x4", "AP")
    _, _, pe_calls = estimator_runs("rand4x4", "PE")
    d = state.dim_b
    chi = schmidt(state).rank
    n_sr = hoeffding_n(DELTA, EPSILON, d)
    sr_target = chi * d * n_sr
    sr_ok = abs(sr_calls.mean() / sr_target - 1) <= 0.10
    n_ap = ap_rounds(DELTA, EPSILON, d)
    ap_ok = ap_calls.mean() / d <= 2 * n_ap
    t, r = qpe_ancillas(DELTA), median_rounds(d, EPSILON)
    pe_ok = pe_calls.mean() / d < 2 * r * (2**t + 1)

    # Relative ordering as delta shrinks to 0.02 at d = 4, eps = 0.05.
    low = {m: estimator_runs("rand4x4", m, 0.02, 10)[2].mean() for m in ("SR", "AP", "PE")}
    order_ok = low["PE"] < low["AP"] < low["SR"]
    ok = sr_ok and ap_ok and pe_ok and order_ok
    report(5, ok, f"SR mean={sr_calls.mean():.0f} vs chi*d*N={sr_target} ({sr_ok}); "
                  f"AP per i={ap_calls.mean() / d:.1f} <= 2N={2 * n_ap} ({ap_ok}); "
                  f"PE per i={pe_calls.mean() / d:.0f} < 2r(2^t+1)={2 * r * (2**t + 1)} ({pe_ok}); "
                  f"delta=0.02 means SR={low['SR']:.0f} AP={low['AP']:.0f} PE={low['PE']:.0f}, "
                  f"PE<AP<SR ({order_ok})")
    assert ok


def test_criterion_6_parameter_formulas():
    expected = {
        "N": math.ceil(math.log(2 * 4 / 0.05) / (2 * 0.1**2)),
        "t": math.ceil(math.log2(3 * math.pi / 0.1)) + 2,
        "r": math.ceil(math.log2(2 / (2 * 0.01)) / math.log2(2 / math.sqrt(3))),
    }
    got = {"N": hoeffding_n(0.1, 0.05, 4), "t": qpe_ancillas(0.1), "r": median_rounds(2, 0.01)}
    ok = got == expected == {"N": 254, "t": 9, "r": 33}
    report(6, ok, f"got={got} independent={expected}")
    assert ok


def test_criterion_7_povm_reduction():
    worst_gap, worst_fid, good = 0.0, 1.0, 0
    for k in range(POVM_PAIRS):
        g = stream(7, k)
        dim = int(g.integers(2, 4))
        phi = random_pure_state(dim, 1, g)
        povm = random_povm(dim, 3, g)
        dil = build_dilation(povm)
        m = dil.apply(phi).matrix()
        direct = np.array([np.vdot(phi.amplitudes, e @ phi.amplitudes).real for e in povm.operators])
        worst_gap = max(worst_gap, float(np.max(np.abs(direct - np.einsum("ab,ab->b", m.conj(), m).real))))
        truth = true_statistics(phi, povm, dil)
        out, recovered = estimate_povm(phi, povm, Method.PE, DELTA, EPSILON, g)
        good += bool(np.all(np.abs(out.estimates - truth) < DELTA))
        worst_fid = min(worst_fid, out.extra["recovered_fidelity"])
    ok = worst_gap <= 1e-10 and good >= POVM_REQUIRED and worst_fid >= 1 - 1e-10
    report(7, ok, f"max reduction gap={worst_gap:.1e}, PE within delta {good}/{POVM_PAIRS} (need {POVM_REQUIRED}), "
                  f"min fidelity={worst_fid:.15f}")
    assert ok


def test_criterion_8_money_attack():
    sizes = [4, 8, 16, 32]
    trials = 170  # 60 qubits per round of sizes, >= 10^4 qubit-trials
    means, per_qubit, worst_fid = [], [], 1.0
    for n in sizes:
        totals = []
        for trial in range(trials):
            g = stream(8, n, trial)
            money = mint(n, g)
            res = forge(money, g)
            worst_fid = min(worst_fid, res.clone.fidelity(res.original), res.clone.fidelity(money.state))
            totals.append(res.oracle_calls)
            per_qubit.extend(res.per_qubit_calls)
        means.append(np.mean(totals))
    per_qubit = np.array(per_qubit)
    se = per_qubit.std(ddof=1) / math.sqrt(per_qubit.size)
    z = (per_qubit.mean() - 2) / se
    slope = np.polyfit(sizes, means, 1)[0]
    ok = worst_fid >= 1 - 1e-10 and abs(z) <= 3 and 1.8 <= slope <= 2.2
    report(8, ok, f"min fidelity={worst_fid:.15f}, calls/qubit={per_qubit.mean():.4f} over {per_qubit.size} "
                  f"(z={z:+.2f}), slope={slope:.3f}")
    assert ok


def test_criterion_9_property_suites(tmp_path):
    results = {}
    g = stream(9, 0)
    trace_err = support_err = rot_err = 0.0
    for k in range(30):
        da, db = (int(x) for x in g.integers(1, 6, size=2))
        s = random_pure_state(da, db, g)
        a = g.standard_normal((da, da)) + 1j * g.standard_normal((da, da))
        sigma = a @ a.conj().T
        sigma /= np.trace(sigma)
        trace_err = max(trace_err, abs(np.trace(f_map(sigma, s, 0) + f_map(sigma, s, 1)) - 1))
        # Rank-deficient target so the Schmidt support is a proper subspace.
        m = s.matrix().copy()
        m[0, :] = 0
        if np.linalg.norm(m) > 1e-6:
            t = PureState.from_vector(m.ravel(), (da, db))
            sd = schmidt(t)
            proj = sd.basis_a @ sd.basis_a.conj().T
            sig = proj @ sigma @ proj
            sig /= np.trace(sig)
            for _ in range(5):
                sig = f_map(sig, t, 0)
                support_err = max(support_err, float(np.max(np.abs(proj @ sig @ proj - sig))))
        if db > 1:
            i = int(g.integers(db))
            frame = build_jordan_frame(s, i)
            if not frame.degenerate:
                psi = s.amplitudes
                signs = np.where(np.arange(psi.size) % db == i, 1.0, -1.0)
                w = (2 * np.outer(psi, psi.conj()) - np.eye(psi.size)) * signs[None, :]
                basis = np.stack([frame.psi, frame.psi_perp], axis=1)
                rot_err = max(rot_err, float(np.max(np.abs(basis.conj().T @ w @ basis - frame.w_matrix()))))
    results["trace"] = trace_err <= 1e-10
    results["support"] = support_err <= 1e-9
    results["rotation"] = rot_err <= 1e-10

    s = random_pure_state(2, 2, stream(9, 1))
    q = q_of(s)[0]
    counts = dict.fromkeys(("psi->psi", "psi->perp", "perp->psi", "perp->perp"), 0)
    for rep in range(30):
        out = estimate_ap_single(s, VerifierOracle(s), 0, 0.02, 0.01, stream(9, 2, rep))
        for key, v in walk_transitions(out.transcript.p_outcomes()).items():
            counts[key] += v
    n_psi = counts["psi->psi"] + counts["psi->perp"]
    n_perp = counts["perp->psi"] + counts["perp->perp"]
    flip = 2 * q * (1 - q)
    walk_z = (counts["psi->perp"] / n_psi - counts["perp->psi"] / n_perp) / math.sqrt(
        flip * (1 - flip) * (1 / n_psi + 1 / n_perp))
    results["walk"] = abs(walk_z) <= 3

    texts = []
    for threads in ("1", "2", "3"):
        out = tmp_path / f"{threads}.json"
        cli.main(["restore", "--figure1", "--trials", str(2 * cli.RESTORE_BLOCK + 17), "--seed", "99",
                  "--threads", threads, "--out", str(out)])
        doc = json.loads(out.read_text())
        doc.pop("timestamp")
        texts.append(json.dumps(doc, sort_keys=True))
    results["determinism"] = len(set(texts)) == 1

    ok = all(results.values())
    report(9, ok, f"trace err={trace_err:.1e}, support err={support_err:.1e}, rotation err={rot_err:.1e}, "
                  f"walk z={walk_z:+.2f}, thread-count determinism={results['determinism']}")
    assert ok
