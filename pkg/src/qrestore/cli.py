"""Command-line experiment runner.

Every subcommand builds a run record (JSON) or delimited table (CSV). Trials
are grouped into fixed-size blocks, each with its own random stream keyed by
``(seed, block)``, so output does not depend on ``--threads``.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import functools
import itertools
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .applications import ForgeryCapError, forge, mint
from .hilbert import PureState, bell_state, figure1_state, random_pure_state, uniform_schmidt_state
from .oracle import CostModel, VerifierOracle
from .povm import PovmSpec, PovmValidationError, estimate_povm, true_statistics
from .restoration import (
    RestorationCapError,
    default_max_iters,
    discard_many,
    expected_iterations_analytic,
    expected_iterations_linear_system,
    simulate_iterations,
    trajectory,
)
from .hilbert import schmidt
from .seeding import stream
from .tomography import (
    Method,
    RecoveryCapError,
    ap_rounds,
    estimate_all,
    hoeffding_n,
    median_rounds,
    qpe_ancillas,
)

RESTORE_BLOCK = 32768
STATE_KEY = 0x5EED
EXIT_CONFIG = 2
EXIT_CAP = 3


class ConfigError(ValueError):
    pass


@functools.lru_cache(maxsize=1)
def build_id() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"qrestore {__version__}" + (f" ({desc})" if desc else "")


def summarize(values) -> dict:
    arr = np.asarray(values, dtype=float)
    n = arr.size
    std = float(arr.std(ddof=1)) if n > 1 else 0.0
    return {"n": n, "mean": float(arr.mean()), "std": std, "stderr": std / math.sqrt(n) if n else float("nan")}


def run_blocks(fn, tasks: list, threads: int) -> list:
    """Evaluate ``fn`` over ``tasks`` in order, optionally in worker processes."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def parse_dims(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"dims must look like AxB, got {text!r}") from exc
    if a < 1 or b < 1:
        raise ConfigError("dims must be positive")
    return a, b


def parse_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"not a number list: {text!r}") from exc


def check_config(args) -> None:
    for name in ("delta", "epsilon"):
        for v in getattr(args, name + "_values", []):
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
    if getattr(args, "trials", 1) < 1:
        raise ConfigError("trials must be at least 1")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned value")


def resolve_state(args, dims_text: str | None, index: int = 0) -> PureState:
    if getattr(args, "state_file", None):
        return PureState.load(args.state_file)
    if getattr(args, "figure1", False):
        return figure1_state()
    if getattr(args, "bell", False):
        return bell_state()
    dims = parse_dims(dims_text or "2x2")
    return random_pure_state(*dims, stream(args.seed, STATE_KEY, index))


def make_record(command: str, args, trials: list, aggregate: dict, **extra) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in {"func", "out", "threads"} and not k.endswith("_values")}
    record = {
        "command": command,
        "config": config,
        "build": build_id(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "trials": trials,
        "aggregate": aggregate,
    }
    record.update(extra)
    return record


def emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def dump_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, indent=1) + "\n"


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(repr(float(row[c])) if isinstance(row[c], float) else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


# restore -------------------------------------------------------------------

def _restore_block(task):
    amps, split, seed, block, n, max_iters = task
    state = PureState(np.array(amps), split)
    rng = stream(seed, block)
    samples = discard_many(state, n, rng)
    iters, capped = simulate_iterations(state, samples, rng, max_iters)
    return iters.tolist(), capped.tolist()


def cmd_restore(args) -> tuple[dict, int]:
    state = resolve_state(args, args.dims)
    max_iters = args.max_iters or default_max_iters(state)
    blocks = []
    for b, start in enumerate(range(0, args.trials, RESTORE_BLOCK)):
        n = min(RESTORE_BLOCK, args.trials - start)
        blocks.append((state.amplitudes.tolist(), state.split, args.seed, b, n, max_iters))
    results = run_blocks(_restore_block, blocks, args.threads)
    iters = list(itertools.chain.from_iterable(r[0] for r in results))
    capped = list(itertools.chain.from_iterable(r[1] for r in results))
    stats = summarize(iters)
    analytic = expected_iterations_analytic(state)
    cap_failures = int(sum(capped))
    aggregate = {
        "iterations": stats,
        "schmidt_rank": schmidt(state).rank,
        "dim_b": state.dim_b,
        "expected_analytic": analytic,
        "expected_linear_system": expected_iterations_linear_system(state),
        "z_score": (stats["mean"] - analytic) / stats["stderr"] if stats["stderr"] > 0 else 0.0,
        "max_iters": max_iters,
        "cap_failures": cap_failures,
        "cap_failure_rate": cap_failures / args.trials,
    }
    trials = [{"trial": k, "iterations": it, "capped": bool(c)} for k, (it, c) in enumerate(zip(iters, capped))]
    record = make_record("restore", args, trials, aggregate)
    code = EXIT_CAP if aggregate["cap_failure_rate"] > args.max_cap_failure_rate else 0
    return record, code


# fig1 ----------------------------------------------------------------------

def cmd_fig1(args) -> tuple[dict, int]:
    if args.uniform:
        state = uniform_schmidt_state(3, 3, args.dim_b)
    else:
        state = figure1_state(args.dim_b)
    report = trajectory(state, args.k_max)
    trials = [
        {"k": k, "conditional_success": float(c), "sigma_trace": float(s)}
        for k, (c, s) in enumerate(zip(report.conditional_success, report.sigma_k_traces), start=1)
    ]
    aggregate = {
        "first": float(report.conditional_success[0]),
        "last": float(report.conditional_success[-1]),
        "plateaus": [{"k": k, "level": lvl} for k, lvl in report.plateaus()],
        "plateau_levels": [float(x) for x in report.levels],
        "truncated": report.truncated,
        "expected_iterations": expected_iterations_analytic(state),
    }
    return make_record("fig1", args, trials, aggregate), 0


# tomography ----------------------------------------------------------------

def expected_cost(method: Method, state: PureState, delta: float, epsilon: float) -> float:
    """Expected-call formula (SR) or upper bound (AP, PE) for all ``d`` outcomes."""
    d = state.dim_b
    if method is Method.SR:
        return expected_iterations_analytic(state) * hoeffding_n(delta, epsilon, d)
    if method is Method.AP:
        return 2 * d * ap_rounds(delta, epsilon, d)
    return 2 * d * median_rounds(d, epsilon) * (2 ** qpe_ancillas(delta) + 1)


def _tomography_task(task):
    amps, split, method, delta, epsilon, seed, row, rep = task
    state = PureState(np.array(amps), split)
    m = state.matrix()
    q = np.einsum("ab,ab->b", m.conj(), m).real
    oracle = VerifierOracle(state, CostModel.QPE_BLOCK)
    try:
        report = estimate_all(state, oracle, method, delta, epsilon, stream(seed, row, rep))
    except (RestorationCapError, RecoveryCapError):
        return {"rep": rep, "oracle_calls": oracle.call_count, "max_error": None, "success": False, "capped": True}
    err = float(np.max(np.abs(report.estimates - q)))
    return {"rep": rep, "oracle_calls": int(report.oracle_calls), "max_error": err, "success": err < delta, "capped": False}


def cmd_tomography(args) -> tuple[dict, int]:
    methods = list(Method) if args.method == "all" else [Method(args.method.upper())]
    dims_list = [d.strip() for d in args.dims.split(",")] if args.dims else [None]
    rows, tasks = [], []
    for di, dims in enumerate(dims_list):
        state = resolve_state(args, dims, di)
        for delta, eps, method in itertools.product(args.delta_values, args.epsilon_values, methods):
            row = len(rows)
            rows.append({"state": state, "method": method, "delta": delta, "epsilon": eps, "dims": f"{state.dim_a}x{state.dim_b}"})
            for rep in range(args.trials):
                tasks.append((state.amplitudes.tolist(), state.split, method.value, delta, eps, args.seed, row, rep))
    results = run_blocks(_tomography_task, tasks, args.threads)
    trials, table = [], []
    capped_total = 0
    for row_idx, row in enumerate(rows):
        reps = [r for t, r in zip(tasks, results) if t[6] == row_idx]
        for r in reps:
            trials.append({"row": row_idx, **r})
        calls = summarize([r["oracle_calls"] for r in reps])
        capped_total += sum(r["capped"] for r in reps)
        table.append({
            "method": row["method"].value,
            "dims": row["dims"],
            "d": row["state"].dim_b,
            "delta": row["delta"],
            "epsilon": row["epsilon"],
            "mean_calls": calls["mean"],
            "stderr_calls": calls["stderr"],
            "cost_formula": float(expected_cost(row["method"], row["state"], row["delta"], row["epsilon"])),
            "failure_rate": sum(not r["success"] for r in reps) / len(reps),
        })
    record = make_record("tomography", args, trials, {"table": table, "cap_failures": capped_total})
    code = EXIT_CAP if capped_total / len(tasks) > args.max_cap_failure_rate else 0
    return record, code


# povm ----------------------------------------------------------------------

def _povm_task(task):
    povm_doc, amps, method, delta, epsilon, seed, rep = task
    povm = PovmSpec.from_json(povm_doc)
    phi = PureState(np.array(amps), (povm.dim, 1))
    truth = true_statistics(phi, povm)
    try:
        report, recovered = estimate_povm(phi, povm, method, delta, epsilon, stream(seed, rep))
    except (RestorationCapError, RecoveryCapError):
        return {"rep": rep, "capped": True, "success": False}
    err = float(np.max(np.abs(report.estimates - truth)))
    return {
        "rep": rep,
        "capped": False,
        "estimates": [float(x) for x in report.estimates],
        "max_error": err,
        "success": err < delta,
        "oracle_calls": int(report.oracle_calls),
        "unitary_calls": int(report.extra["unitary_calls"]),
        "fidelity": float(report.extra["recovered_fidelity"]),
    }


def cmd_povm(args) -> tuple[dict, int]:
    try:
        povm = PovmSpec.load(args.povm_file)
    except PovmValidationError as exc:
        raise ConfigError(f"invalid POVM: {exc}") from exc
    if args.state_file:
        phi = PureState.load(args.state_file)
        if phi.dim != povm.dim:
            raise ConfigError("state and POVM dimensions differ")
    else:
        phi = random_pure_state(povm.dim, 1, stream(args.seed, STATE_KEY))
    delta, eps = args.delta_values[0], args.epsilon_values[0]
    tasks = [(povm.to_json(), phi.amplitudes.tolist(), args.method.upper(), delta, eps, args.seed, rep) for rep in range(args.trials)]
    results = run_blocks(_povm_task, tasks, args.threads)
    ok = [r for r in results if not r["capped"]]
    capped = len(results) - len(ok)
    aggregate = {
        "true_statistics": [float(x) for x in true_statistics(phi, povm)],
        "failure_rate": sum(not r["success"] for r in results) / len(results),
        "oracle_calls": summarize([r["oracle_calls"] for r in ok]) if ok else None,
        "unitary_calls": summarize([r["unitary_calls"] for r in ok]) if ok else None,
        "min_fidelity": min((r["fidelity"] for r in ok), default=None),
        "cap_failures": capped,
    }
    record = make_record("povm", args, results, aggregate)
    return record, EXIT_CAP if capped / len(results) > args.max_cap_failure_rate else 0


# money-attack --------------------------------------------------------------

def _money_task(task):
    n, seed, trial, cap = task
    rng = stream(seed, trial)
    money = mint(n, rng)
    try:
        res = forge(money, rng, cap)
    except ForgeryCapError:
        return {"trial": trial, "capped": True}
    return {
        "trial": trial,
        "capped": False,
        "oracle_calls": res.oracle_calls,
        "per_qubit_calls": res.per_qubit_calls,
        "fidelity": res.clone.fidelity(res.original),
    }


def cmd_money(args) -> tuple[dict, int]:
    if args.qubits < 1:
        raise ConfigError("--qubits must be at least 1")
    tasks = [(args.qubits, args.seed, t, args.max_iters_per_qubit) for t in range(args.trials)]
    results = run_blocks(_money_task, tasks, args.threads)
    ok = [r for r in results if not r["capped"]]
    per_qubit = list(itertools.chain.from_iterable(r["per_qubit_calls"] for r in ok))
    hist: dict[str, int] = {}
    for c in sorted(per_qubit):
        hist[str(c)] = hist.get(str(c), 0) + 1
    calls = summarize([r["oracle_calls"] for r in ok]) if ok else None
    aggregate = {
        "calls": calls,
        "per_qubit_calls": summarize(per_qubit) if per_qubit else None,
        "cap_failures": len(results) - len(ok),
    }
    record = make_record(
        "money-attack", args, results, aggregate,
        mean_calls=calls["mean"] if calls else None,
        per_qubit_calls_histogram=hist,
        fidelities=[r["fidelity"] for r in ok],
    )
    return record, EXIT_CAP if aggregate["cap_failures"] / len(results) > args.max_cap_failure_rate else 0


# entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrestore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_format="json"):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trials", type=int, default=1000)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--out", default=None, help="output path (default: stdout)")
        p.add_argument("--format", choices=["json", "csv"], default=default_format)
        p.add_argument("--max-cap-failure-rate", type=float, default=0.0)

    def state_args(p):
        p.add_argument("--dims", default=None, help="AxB for a seeded random state; comma list for sweeps")
        p.add_argument("--state-file", default=None)
        p.add_argument("--figure1", action="store_true")
        p.add_argument("--bell", action="store_true")

    def budget_args(p, default_method):
        p.add_argument("--method", default=default_method)
        p.add_argument("--delta", default="0.1", help="precision; comma list for sweeps")
        p.add_argument("--epsilon", default="0.05", help="failure probability; comma list for sweeps")

    p = sub.add_parser("restore", help="Monte Carlo state restoration vs chi*d")
    state_args(p)
    common(p)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("fig1", help="exact conditional success curve")
    common(p, default_format="csv")
    p.add_argument("--k-max", type=int, default=200_000)
    p.add_argument("--dim-b", type=int, default=10)
    p.add_argument("--uniform", action="store_true", help="equal-weight rank-3 control state")
    p.set_defaults(func=cmd_fig1)

    p = sub.add_parser("tomography", help="SR/AP/PE estimators and cost table")
    state_args(p)
    common(p)
    budget_args(p, "all")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("povm", help="POVM statistics on a single copy")
    common(p)
    budget_args(p, "pe")
    p.add_argument("--povm-file", required=True)
    p.add_argument("--state-file", default=None)
    p.set_defaults(func=cmd_povm)

    p = sub.add_parser("money-attack", help="clone product-state money")
    common(p)
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--max-iters-per-qubit", type=int, default=200)
    p.set_defaults(func=cmd_money)
    return parser


def run(argv=None) -> tuple[dict, int, argparse.Namespace]:
    """Parse and execute; returns ``(record, exit_code, args)``."""
    args = build_parser().parse_args(argv)
    if hasattr(args, "delta"):
        args.delta_values = parse_floats(args.delta)
        args.epsilon_values = parse_floats(args.epsilon)
        valid = {"sr", "ap", "pe", "all"} if args.command == "tomography" else {"sr", "ap", "pe"}
        if args.method.lower() not in valid:
            raise ConfigError(f"--method must be one of {sorted(valid)}")
    check_config(args)
    record, code = args.func(args)
    return record, code, args


def render(record: dict, fmt: str) -> str:
    if fmt == "json":
        return dump_json(record)
    if record["command"] == "tomography":
        return to_csv(record["aggregate"]["table"])
    if record["command"] == "povm":
        return to_csv([{k: v for k, v in r.items() if k != "estimates"} for r in record["trials"]])
    if record["command"] == "money-attack":
        return to_csv([{k: v for k, v in r.items() if k != "per_qubit_calls"} for r in record["trials"]])
    return to_csv(record["trials"])


def main(argv=None) -> int:
    try:
        record, code, args = run(argv)
    except (ConfigError, FileNotFoundError, PovmValidationError) as exc:
        print(f"qrestore: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    emit(render(record, args.format), args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
