"""Command-line front end.

Subcommands:

- ``simulate``: run the configured policy, write summary.csv (and trace.csv
  when tracing is on);
- ``solve``: run the discounted solver (or the cost-capped search), write
  value.csv / policy.csv and a result.txt, and warn on truncation clamps in
  a validation run;
- ``audit``: evaluate the dominance predicate and marginal sandwiches for a
  stored policy against a stored value table; nonzero exit on any dominance
  violation;
- ``sweep``: run the config's [sweep] axis point by point into sweep.csv.

Identical config + seed yields byte-identical output files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import fileio
from .conditions import audit_policy
from .config import ConfigError, ExperimentConfig, build_policy, load_config
from .constrained import solve_constrained
from .mdp import solve_discounted
from .simulate import run as run_sim

__all__ = ["main"]


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", required=True, help="experiment config file")
    sp.add_argument("--out-dir", default="evsched-out", help="output directory")
    sp.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="config override, repeatable",
    )
    sp.add_argument("--seed", type=int, default=None, help="override simulate seed")
    sp.add_argument(
        "--horizon", type=int, default=None, help="override simulate horizon"
    )


def _load(args) -> ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"simulate.seed={args.seed}")
    if args.horizon is not None:
        overrides.append(f"simulate.horizon={args.horizon}")
    return load_config(args.config, tuple(overrides))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _simulate_rows(cfg: ExperimentConfig, record_trace: bool):
    """One run per replication (replication i uses seed + i)."""
    rows, traces = [], []
    for i in range(cfg.sim_replications):
        policy = build_policy(cfg)
        res = run_sim(
            cfg.params,
            cfg.chains,
            cfg.batch_law,
            policy,
            cfg.sim_horizon,
            cfg.sim_seed + i,
            initial_queue=cfg.initial_queue,
            initial_battery=cfg.initial_battery,
            record_trace=record_trace,
            warmup_fraction=cfg.warmup_fraction,
        )
        rows.append(
            {
                "config_hash": cfg.config_hash,
                "seed": res.seed,
                "avg_cost": res.avg_cost,
                "avg_queue_ev": res.avg_queue_ev,
                "avg_queue_demand": res.avg_queue_demand,
                "clamp_events": res.clamp_events,
            }
        )
        traces.append(res)
    return rows, traces


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    record = cfg.record_trace or args.trace
    rows, results = _simulate_rows(cfg, record)
    fileio.write_summary_csv(out / "summary.csv", rows)
    if record:
        fileio.write_trace_csv(out / "trace.csv", results[0].trace or [])
    for row in rows:
        print(
            f"seed={row['seed']} avg_cost={row['avg_cost']:.6g} "
            f"avg_queue_ev={row['avg_queue_ev']:.6g} "
            f"avg_queue_demand={row['avg_queue_demand']:.6g} "
            f"clamps={row['clamp_events']}"
        )
    return 0


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    if cfg.solver_mode == "constrained":
        res = solve_constrained(
            cfg.params,
            cfg.chains,
            cfg.batch_law,
            cost_cap=cfg.params.cost_cap,
            alpha_schedule=cfg.alpha_schedule,
            vi_tol=cfg.solver_tol,
            horizon=cfg.solver_horizon,
            replications=cfg.solver_replications,
            seed=cfg.sim_seed,
            initial_queue=cfg.initial_queue,
            initial_battery=cfg.initial_battery,
        )
        fileio.save_policy_table(res.policy, out / "policy.csv")
        fileio.write_beta_history_csv(out / "beta_history.csv", res.history)
        kv = {
            "beta_star": res.beta_star,
            "avg_cost": res.avg_cost,
            "avg_delay": res.avg_delay,
            "cost_halfwidth": res.cost_halfwidth,
            "clamp_events": res.clamp_events,
            "mixture": int(res.mixture is not None),
        }
        if res.mixture is not None:
            kv["mixture_beta_low"] = res.mixture.beta_low
            kv["mixture_weight_low"] = res.mixture.weight_low
            kv["mixture_attained_cost"] = res.mixture.attained_cost
        fileio.write_result_kv(out / "result.txt", kv)
        if res.clamp_events:
            print(
                f"warning: {res.clamp_events} truncation clamp events during "
                "policy evaluation",
                file=sys.stderr,
            )
        print(f"beta_star={res.beta_star:.6g} avg_cost={res.avg_cost:.6g}")
        return 0

    vt, pt, iterations = solve_discounted(
        cfg.params, cfg.chains, tol=cfg.solver_tol, max_iters=cfg.solver_max_iters
    )
    fileio.save_value_table(vt, out / "value.csv")
    fileio.save_policy_table(pt, out / "policy.csv")
    from .policies import TablePolicy

    check = run_sim(
        cfg.params,
        cfg.chains,
        cfg.batch_law,
        TablePolicy(pt),
        min(cfg.sim_horizon, 20_000),
        cfg.sim_seed,
        initial_queue=cfg.initial_queue,
        initial_battery=cfg.initial_battery,
    )
    fileio.write_result_kv(
        out / "result.txt",
        {
            "iterations": iterations,
            "alpha": cfg.params.alpha,
            "beta": cfg.params.beta,
            "validation_avg_cost": check.avg_cost,
            "validation_avg_queue": check.avg_queue_demand,
            "validation_clamp_events": check.clamp_events,
        },
    )
    if check.clamp_events:
        print(
            f"warning: {check.clamp_events} truncation clamp events in the "
            f"validation run; results may carry truncation bias",
            file=sys.stderr,
        )
    print(f"converged in {iterations} sweeps; tables in {out}")
    return 0


def cmd_audit(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    vt = fileio.load_value_table(args.value, cfg.params, cfg.chains)
    pt = fileio.load_policy_table(args.policy, cfg.params, cfg.chains)
    audit = audit_policy(vt, pt)
    fileio.write_audit_csv(out / "audit.csv", audit)
    print(
        f"states={audit.n_states} dominated={audit.n_dominated} "
        f"sandwich_violations={audit.n_condition_violations}"
    )
    return 1 if audit.n_dominated else 0


def cmd_sweep(args) -> int:
    cfg0 = _load(args)
    if cfg0.sweep is None:
        print("config has no [sweep] section", file=sys.stderr)
        return 2
    out = _out_dir(args)
    rows = []
    base_overrides = tuple(args.override) + tuple(
        ov
        for ov in (
            f"simulate.seed={args.seed}" if args.seed is not None else None,
            f"simulate.horizon={args.horizon}" if args.horizon is not None else None,
        )
        if ov
    )
    for value in cfg0.sweep.values:
        cfg = load_config(
            args.config, base_overrides + (f"{cfg0.sweep.key}={value}",)
        )
        point_rows, results = _simulate_rows(cfg, False)
        costs = [r["avg_cost"] for r in point_rows]
        qevs = [r["avg_queue_ev"] for r in point_rows]
        qes = [r["avg_queue_demand"] for r in point_rows]
        if len(results) >= 2:
            import math as _math

            import numpy as _np

            cost_hw = (
                1.959963984540054
                * float(_np.std(costs, ddof=1))
                / _math.sqrt(len(costs))
            )
            queue_hw = (
                1.959963984540054 * float(_np.std(qes, ddof=1)) / _math.sqrt(len(qes))
            )
        else:
            cost_hw = results[0].cost_halfwidth
            queue_hw = results[0].queue_demand_halfwidth
        rows.append(
            {
                "key": cfg0.sweep.key,
                "value": value,
                "avg_cost": sum(costs) / len(costs),
                "cost_halfwidth": cost_hw,
                "avg_queue_ev": sum(qevs) / len(qevs),
                "avg_queue_demand": sum(qes) / len(qes),
                "queue_halfwidth": queue_hw,
                "clamp_events": sum(r["clamp_events"] for r in point_rows),
                "max_period_cost": max(r.max_period_cost for r in results),
                "seed": cfg.sim_seed,
            }
        )
        print(f"{cfg0.sweep.key}={value}: avg_cost={rows[-1]['avg_cost']:.6g}")
    fileio.write_sweep_csv(out / "sweep.csv", rows)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="evsched",
        description="EV charging scheduling: solver, simulator, and audits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run the configured policy")
    _add_common(sp)
    sp.add_argument("--trace", action="store_true", help="also write trace.csv")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("solve", help="solve for tables (or the cost-capped search)")
    _add_common(sp)
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("audit", help="audit a stored policy against a value table")
    _add_common(sp)
    sp.add_argument("--value", required=True, help="value table file")
    sp.add_argument("--policy", required=True, help="policy table file")
    sp.set_defaults(fn=cmd_audit)

    sp = sub.add_parser("sweep", help="run the [sweep] axis into sweep.csv")
    _add_common(sp)
    sp.set_defaults(fn=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
