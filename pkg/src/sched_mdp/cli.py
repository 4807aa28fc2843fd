"""Command-line entry point: ``sched-mdp <command> --config <path> [options]``.

Exit codes: 0 success, 1 other package error, 2 invalid configuration,
3 non-convergence, 4 holding-time cap too tight, 5 structure violation.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import NonConvergence, SchedMdpError, TruncationTooTight, ValidationError
from .estimation import steady_state
from .export import fmt_float, label_action, write_csv, write_json
from .mdp import enumerate_reachable
from .simulation import monte_carlo_validate, rollout
from .solver import evaluate_policy, min_mean_cycle_oracle, solve
from .structure import analyze, check_threshold

log = logging.getLogger("sched_mdp")

COMMANDS = ("steady-state", "solve", "verify", "boundary", "simulate", "validate-mc")
EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_NONCONVERGENCE, EXIT_TRUNCATION, EXIT_VIOLATION = 0, 1, 2, 3, 4, 5
ORACLE_MAX_STATES = 20_000


def _steady(rc):
    return [steady_state(mod, rc.system.tau_max) for mod in rc.system.models]


def _solved(rc, steady=None):
    steady = steady or _steady(rc)
    mdp = enumerate_reachable(rc.system, [s.cost_table for s in steady])
    log.info("enumerated %d states, %d actions", mdp.n_states, len(mdp.actions))
    sol = solve(mdp, rc.solver)
    log.info("%s: rho*=%.12g after %d iterations", sol.mode, sol.rho_star, sol.iterations)
    rho_cycle, cycle = evaluate_policy(mdp, sol.policy)
    return steady, mdp, sol, rho_cycle, cycle


def cmd_steady_state(rc, out, args):
    steady = _steady(rc)
    doc = {"sensors": [
        {"name": mod.name, "d": mod.d, "spectral_radius": fmt_float(mod.spectral_radius),
         "Pbar": s.Pbar, "cost_table": s.cost_table}
        for mod, s in zip(rc.system.models, steady)]}
    return EXIT_OK, [write_json(out / "steady_state.json", doc)]


def _policy_rows(mdp, sol):
    for s in range(mdp.n_states):
        yield mdp.states[s].tolist() + [label_action(mdp.actions[sol.policy[s]]), sol.V[s],
                                        bool(mdp.clamped[s])]


def _state_header(n):
    return [f"tau{i + 1}" for i in range(n)] + [f"nu{i + 1}" for i in range(n)]


def cmd_solve(rc, out, args):
    _, mdp, sol, rho_cycle, cycle = _solved(rc)
    doc = sol.to_dict(mdp)
    doc["optimal_cycle"] = {
        "average_cost": fmt_float(rho_cycle),
        "states": [mdp.states[s].tolist() for s in cycle],
        "actions": [label_action(mdp.actions[sol.policy[s]]) for s in cycle]}
    files = [write_json(out / "solution.json", doc),
             write_csv(out / "policy.csv", _state_header(mdp.n) + ["action", "V", "clamped"],
                       _policy_rows(mdp, sol))]
    if args.dump_mdp:
        files.append(write_json(out / "mdp.json", mdp.to_dict()))
    return EXIT_OK, files


def cmd_verify(rc, out, args):
    _, mdp, sol, rho_cycle, _ = _solved(rc)
    report = analyze(mdp, sol)
    doc = report.to_dict(mdp)
    doc["rho_star"] = fmt_float(sol.rho_star)
    doc["policy_cycle_average"] = fmt_float(rho_cycle)
    if mdp.n_states <= ORACLE_MAX_STATES:
        rho_k, _ = min_mean_cycle_oracle(mdp)
        doc["oracle"] = {"min_mean_cycle": fmt_float(rho_k),
                         "relative_gap": fmt_float(abs(sol.rho_star - rho_k) / abs(rho_k))}
    else:
        doc["oracle"] = None
    files = [write_json(out / "structure.json", doc)]
    if not report.ok:
        log.error("structure violations: %d consistency, %d threshold, %d monotonicity, %d staircase",
                  len(report.consistency_violations), len(report.threshold_violations),
                  len(report.monotonicity_violations), len(report.staircase_violations))
        return EXIT_VIOLATION, files
    return EXIT_OK, files


def cmd_boundary(rc, out, args):
    _, mdp, sol, _, _ = _solved(rc)
    _, thresholds, boundary = check_threshold(mdp, sol.policy)
    if boundary is not None:
        rows = sorted(boundary.items())
        return EXIT_OK, [write_csv(out / "boundary.csv", ["tau2", "min_tau1_for_action_1"], rows)]
    rows = [(i + 1, " ".join(map(str, others)), phi) for (i, others), phi in sorted(thresholds.items())]
    return EXIT_OK, [write_csv(out / "thresholds.csv", ["sensor", "other_taus", "phi"], rows)]


def cmd_simulate(rc, out, args):
    _, mdp, sol, _, _ = _solved(rc)
    trace = rollout(mdp, sol.policy, horizon=rc.simulation.rollout_horizon)
    path = out / "trace.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.write_csv(path)
    avg = float(trace.running_average[-1])
    log.info("running average after %d steps: %.12g (rho*=%.12g)", trace.horizon, avg, sol.rho_star)
    return EXIT_OK, [path]


def cmd_validate_mc(rc, out, args):
    steady, mdp, sol, _, _ = _solved(rc)
    res = monte_carlo_validate(mdp, sol.policy, rc.simulation, steady=steady)
    path = out / "mc_summary.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    res.write_csv(path)
    b = res.burn_in
    doc = {"runs": res.runs, "burn_in": b, "horizon": res.horizon,
           "within_3_stderr": bool(res.consistent()),
           "max_abs_z": [fmt_float(z) for z in res.max_abs_z()],
           "local_cov_deviation_at_burn_in": [fmt_float(p[b]) for p in res.local_P_dev],
           "age_mismatches": res.age_mismatches}
    return EXIT_OK, [path, write_json(out / "mc_summary.json", doc)]


HANDLERS = {
    "steady-state": cmd_steady_state, "solve": cmd_solve, "verify": cmd_verify,
    "boundary": cmd_boundary, "simulate": cmd_simulate, "validate-mc": cmd_validate_mc,
}


def build_parser():
    p = argparse.ArgumentParser(prog="sched-mdp", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True,
                   help="JSON config file, or the name of a bundled one (paper_example.json, identical_sensors.json)")
    p.add_argument("--out", help="output directory (default: output_dir from the config)")
    p.add_argument("--seed", type=int, help="Monte Carlo seed (unsigned 64-bit)")
    p.add_argument("--tau-max", type=int, help="override the holding-time cap")
    p.add_argument("--alpha", type=float, help="solve the discounted problem with this factor")
    p.add_argument("--dump-mdp", action="store_true", help="also write the enumerated MDP (solve)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _overrides(args):
    ov = {}
    if args.tau_max is not None:
        ov["system.tau_max"] = args.tau_max
    if args.seed is not None:
        ov["simulation.seed"] = args.seed
    if args.alpha is not None:
        ov["solver.alpha"] = args.alpha
        ov["solver.mode"] = "discounted_vi"
    return ov


def _manifest(out, command, rc, files):
    doc = {
        "command": command,
        "config": rc.to_dict(),
        "config_sha256": rc.digest(),
        "seed": rc.simulation.seed,
        "versions": {"sched_mdp": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "outputs": sorted(Path(f).name for f in files),
    }
    return write_json(out / "manifest.json", doc)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = load_config(args.config, _overrides(args))
        out = Path(args.out or rc.output_dir)
        code, files = HANDLERS[args.command](rc, out, args)
        _manifest(out, args.command, rc, files)
        return code
    except ValidationError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except TruncationTooTight as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except SchedMdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
