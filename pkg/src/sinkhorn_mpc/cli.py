"""Command-line front end.

Subcommands: ``simulate`` (closed-loop runs, sweeps, artifact emission),
``sinkhorn`` (entropic coupling of a cost-matrix CSV), ``assign`` (exact
assignment of a cost-matrix CSV), ``gramian`` (gain/conditioning report
for an agent and horizon).  Exit codes: 0 success, 2 configuration error,
3 numeric failure.  ``SMPC_LOG`` controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ExperimentConfig, build_instance
from .entropic_ot import exact_assignment, gibbs_kernel, sinkhorn_solve
from .errors import InvalidArgumentError, SinkhornMpcError
from .lti import (
    ContinuousAgent,
    build_target_set,
    continuous_gramian,
    reachability_gramian,
    zoh_discretize,
)
from .sim import (
    accumulated_cost,
    simulate_continuous,
    simulate_sinkhorn_mpc,
    simulate_unregularized_mpc,
    stationarity_residual,
    ultimate_bound_certificate,
)

log = logging.getLogger("sinkhorn_mpc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _setup_logging():
    level = os.environ.get("SMPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_cost_csv(path) -> np.ndarray:
    try:
        C = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InvalidArgumentError(f"could not parse cost matrix {path}: {exc}") from exc
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InvalidArgumentError(
            f"cost matrix must be square, got shape {C.shape} from {path}"
        )
    return C


def _apply_overrides(cfg_data: dict, args) -> dict:
    flag_map = {
        "mode": args.mode,
        "preset": args.preset,
        "n_agents": args.n,
        "epsilon": args.epsilon,
        "horizon": args.tau if args.tau is not None else args.horizon,
        "sampling_period": args.h,
        "rk4_step": args.rk4_step,
        "n_steps": args.steps,
        "seed": args.seed,
        "sinkhorn_tol": args.tol,
        "out_dir": args.out,
    }
    for key, val in flag_map.items():
        if val is not None:
            cfg_data[key] = val
    if args.svg:
        cfg_data["emit_svg"] = True
    if args.no_csv:
        cfg_data["emit_csv"] = False
    if args.no_summary:
        cfg_data["emit_summary"] = False
    return cfg_data


def _run_one(cfg: ExperimentConfig, variant, out_dir: Path) -> dict:
    """Run one simulation variant; returns its summary dict."""
    inst = build_instance(cfg)
    sim_cfg = inst.sim
    if variant == "baseline":
        if cfg.mode != "discrete":
            raise InvalidArgumentError("the unregularized baseline is a discrete-mode run")
        traj = simulate_unregularized_mpc(inst.agents, inst.targets, inst.x0, sim_cfg)
        s_label = "baseline"
    else:
        if cfg.mode == "discrete":
            traj = simulate_sinkhorn_mpc(inst.agents, inst.targets, inst.x0, sim_cfg)
        else:
            traj = simulate_continuous(inst.agents, inst.targets, inst.x0, sim_cfg)
        s_label = "conv" if sim_cfg.S is None else sim_cfg.S

    summary = {
        "mode": cfg.mode,
        "n_agents": cfg.n_agents,
        "n_steps": cfg.n_steps,
        "dt": traj.dt,
        "epsilon": cfg.epsilon,
        "horizon": cfg.horizon,
        "s_iterations": s_label,
        "seed": cfg.seed,
        "accumulated_cost": accumulated_cost(traj),
        "sinkhorn_iterations_total": int(traj.iterations.sum()),
        "sinkhorn_iterations_max": int(traj.iterations.max()),
    }
    if cfg.mode == "discrete":
        gains = [reachability_gramian(a, int(cfg.horizon)) for a in inst.agents]
        tset = build_target_set(inst.agents, inst.targets)
        nu = np.array([cfg.nu_fraction * (1.0 - g.rho) for g in gains])
        cert = ultimate_bound_certificate(gains, tset, nu, cfg.delta)
        tau = cert.verify(traj)
        summary.update(
            ultimate_bound_holds=tau is not None,
            ultimate_bound_settle_step=tau,
            ultimate_bound_max=float(cert.bounds.max()),
            rho_max=float(cert.rho.max()),
        )
    else:
        base = inst.agents[0]
        gains = [continuous_gramian(a, float(cfg.horizon)) for a in inst.agents]
        tset = build_target_set(inst.agents, inst.targets)
        res = stationarity_residual(
            traj.final_states, tset, gains, cfg.epsilon,
            tol=sim_cfg.sinkhorn_tol, max_iter=sim_cfg.sinkhorn_max_iter,
        )
        summary.update(
            final_residual_max=float(res.max()),
            energy_initial=float(traj.energy[0]),
            energy_final=float(traj.energy[-1]),
            lyapunov_max_violation=float(np.diff(traj.energy).max()),
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.emit_csv:
        artifacts.write_trajectory_csv(traj, out_dir / "trajectory.csv")
    if cfg.emit_summary:
        artifacts.write_summary_json(summary, out_dir / "summary.json")
    if cfg.emit_svg:
        artifacts.write_trajectory_svg(traj, inst.targets, out_dir / "trajectory.svg")
    log.info("variant %s: accumulated cost %.6f -> %s", s_label, summary["accumulated_cost"], out_dir)
    return summary


def cmd_simulate(args) -> int:
    cfg_data = {}
    if args.config:
        cfg_data = ExperimentConfig.from_file(args.config).to_dict()
    cfg_data = _apply_overrides(cfg_data, args)
    s_values = args.s if args.s else [cfg_data.get("s_iterations", "conv")]
    s_values = ["conv" if v == "conv" else int(v) for v in s_values]

    cfg = ExperimentConfig.from_dict({**cfg_data, "s_iterations": s_values[0]})
    if args.dump_config:
        cfg.dump(args.dump_config)
        log.info("wrote resolved config to %s", args.dump_config)

    variants = list(s_values)
    if args.baseline:
        variants.append("baseline")
    out_root = Path(cfg.out_dir)

    summaries = []
    for variant in variants:
        label = "baseline" if variant == "baseline" else (
            "sconv" if variant == "conv" else f"s{variant}"
        )
        out_dir = out_root if len(variants) == 1 else out_root / label
        run_cfg = ExperimentConfig.from_dict(
            {**cfg.to_dict(), "s_iterations": "conv" if variant in ("baseline", "conv") else variant}
        )
        summaries.append((label, _run_one(run_cfg, variant, out_dir)))

    if len(summaries) > 1:
        table = {label: s["accumulated_cost"] for label, s in summaries}
        artifacts.write_summary_json(table, out_root / "sweep_summary.json")
        print(f"{'variant':>10}  accumulated_cost")
        for label, s in summaries:
            print(f"{label:>10}  {s['accumulated_cost']:.6f}")
    else:
        s = summaries[0][1]
        print(f"accumulated_cost {s['accumulated_cost']:.6f}")
        if "final_residual_max" in s:
            print(f"final_residual_max {s['final_residual_max']:.3e}")
        if "ultimate_bound_holds" in s:
            print(f"ultimate_bound_holds {s['ultimate_bound_holds']} "
                  f"(settle step {s['ultimate_bound_settle_step']})")
    return EXIT_OK


def cmd_sinkhorn(args) -> int:
    C = _load_cost_csv(args.cost)
    if args.epsilon == 0.0:
        # documented aliasing: zero regularization is the exact assignment
        assignment = exact_assignment(C)
        P = np.zeros_like(C)
        P[np.arange(C.shape[0]), assignment.sigma] = 1.0 / C.shape[0]
        np.savetxt(args.out, P, delimiter=",")
        print(f"epsilon=0: exact assignment, cost {assignment.cost:.12g}")
        print("sigma:", " ".join(map(str, assignment.sigma)))
        return EXIT_OK
    kernel = gibbs_kernel(C, args.epsilon)
    result = sinkhorn_solve(kernel, tol=args.tol, max_iter=args.max_iter)
    np.savetxt(args.out, result.coupling, delimiter=",")
    from .entropic_ot import marginal_violation

    print(f"iterations {result.iterations}")
    print(f"marginal_violation {marginal_violation(result.coupling):.3e}")
    print(f"coupling -> {args.out}")
    return EXIT_OK


def cmd_assign(args) -> int:
    C = _load_cost_csv(args.cost)
    assignment = exact_assignment(C)
    print("sigma:", " ".join(map(str, assignment.sigma)))
    print(f"cost: {assignment.cost:.12g}")
    return EXIT_OK


def _parse_matrix(text: str, name: str) -> np.ndarray:
    try:
        return np.asarray(json.loads(text), dtype=float)
    except (json.JSONDecodeError, ValueError) as exc:
        raise InvalidArgumentError(f"--{name} must be a JSON matrix: {exc}") from exc


def cmd_gramian(args) -> int:
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise InvalidArgumentError("--a and --b must be given together")
        agent = ContinuousAgent(A=_parse_matrix(args.a, "a"), B=_parse_matrix(args.b, "b"))
    else:
        from .config import PRESET_DYNAMICS

        preset = args.preset or "double-integrator"
        if preset not in PRESET_DYNAMICS:
            raise InvalidArgumentError(f"unknown preset {preset!r}")
        A, B = PRESET_DYNAMICS[preset]
        agent = ContinuousAgent(A=np.asarray(A, float), B=np.asarray(B, float))

    np.set_printoptions(precision=10, suppress=False)
    if args.mode == "continuous":
        gains = continuous_gramian(agent, args.horizon)
        print("W (controllability Gramian):")
        print(gains.W)
    else:
        disc = zoh_discretize(agent, args.h)
        print(f"ZOH A_d:\n{disc.A}\nZOH B_d:\n{disc.B}")
        gains = reachability_gramian(disc, int(args.tau))
        print("G (reachability Gramian):")
        print(gains.W)
    print("G_weight (transport cost weight):")
    print(gains.G_weight)
    print(f"cond(W) = {np.linalg.cond(gains.W):.6e}")
    if args.mode == "continuous":
        margin = np.linalg.eigvals(gains.A_cl).real.max()
        print(f"closed-loop max Re(eig) = {margin:.12g} (Hurwitz)")
    else:
        print(f"closed-loop spectral radius = {gains.rho:.12g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sinkhorn-mpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="run a closed-loop experiment")
    ps.add_argument("--config", help="JSON config file")
    ps.add_argument("--preset", help="named dynamics preset (double-integrator)")
    ps.add_argument("--mode", choices=["discrete", "continuous"])
    ps.add_argument("--n", type=int, help="number of agents")
    ps.add_argument("--epsilon", type=float)
    ps.add_argument("--tau", type=int, help="discrete prediction horizon (steps)")
    ps.add_argument("--horizon", type=float, help="continuous prediction horizon (time)")
    ps.add_argument("--h", type=float, help="sampling period for ZOH/discrete runs")
    ps.add_argument("--rk4-step", type=float, help="integration step for continuous runs")
    ps.add_argument("--steps", type=int, help="number of closed-loop steps")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--tol", type=float, help="Sinkhorn marginal tolerance")
    ps.add_argument("--s", action="append",
                    help="Sinkhorn iterations per step (int or 'conv'); repeat to sweep")
    ps.add_argument("--baseline", action="store_true",
                    help="also run the unregularized assignment baseline")
    ps.add_argument("--out", help="output directory")
    ps.add_argument("--svg", action="store_true", help="emit trajectory.svg")
    ps.add_argument("--no-csv", action="store_true")
    ps.add_argument("--no-summary", action="store_true")
    ps.add_argument("--dump-config", help="write the resolved config JSON here")
    ps.set_defaults(func=cmd_simulate)

    pk = sub.add_parser("sinkhorn", help="entropic coupling of a cost CSV")
    pk.add_argument("cost", help="square cost matrix CSV")
    pk.add_argument("--epsilon", type=float, required=True)
    pk.add_argument("--tol", type=float, default=1e-9)
    pk.add_argument("--max-iter", type=int, default=100_000)
    pk.add_argument("--out", default="coupling.csv")
    pk.set_defaults(func=cmd_sinkhorn)

    pa = sub.add_parser("assign", help="exact assignment of a cost CSV")
    pa.add_argument("cost", help="square cost matrix CSV")
    pa.set_defaults(func=cmd_assign)

    pg = sub.add_parser("gramian", help="gain and conditioning report")
    pg.add_argument("--preset", help="named dynamics preset")
    pg.add_argument("--a", help="state matrix as JSON (continuous time)")
    pg.add_argument("--b", help="input matrix as JSON")
    pg.add_argument("--mode", choices=["discrete", "continuous"], required=True)
    pg.add_argument("--horizon", type=float, default=1.0, help="continuous horizon")
    pg.add_argument("--tau", type=int, default=50, help="discrete horizon (steps)")
    pg.add_argument("--h", type=float, default=0.02, help="ZOH sampling period")
    pg.set_defaults(func=cmd_gramian)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SinkhornMpcError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
