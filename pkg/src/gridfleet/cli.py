"""Command-line surface: solve | baseline | opf | mdp | synth.

Every command writes CSV artifacts plus a JSON run manifest into the output
directory.  Exit status 0 means the requested computation converged; solver
failures exit nonzero after writing whatever traces exist.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .anderson import AANonConvergenceError, ELO_PRESET, EQN_PRESET
from .dcopf import OpfError, OpfInstance, build_structure, kkt_diagnostics, solve_opf_horizon
from .equilibrium import baseline_lmp, solve_equilibrium
from .pumdp import (KIND_NAMES, assemble_rewards, build_state_space,
                    propagate_flows, solve_values)
from .report import (fmt, write_csv, write_equilibrium_artifacts, write_manifest,
                     write_trace_csv)
from .scenario import Params, ScenarioError, load_scenario, save_scenario, synth_scenario

__all__ = ["main"]


def _add_common(p: argparse.ArgumentParser, scenario_required: bool = True):
    p.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory (created if absent)")
    p.add_argument("--workers", type=int, default=None, help="parallel workers for per-step dispatch")


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--fleet", type=float, default=None, help="override the fleet size")
    p.add_argument("--tol-inner", type=float, default=None, help="override the reward fixed-point tolerance")
    p.add_argument("--tol-outer", type=float, default=None, help="override the price fixed-point tolerance")
    p.add_argument("--seed", type=int, default=None, help="recorded in the manifest for provenance")
    p.add_argument("--dump-mdp", action="store_true", help="dump the solved schedule table")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridfleet",
                                 description="fleet/grid pricing equilibrium solver")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the integrated equilibrium")
    _add_common(p)
    _add_solver_flags(p)

    p = sub.add_parser("baseline", help="grid prices without charging")
    _add_common(p)

    p = sub.add_parser("opf", help="single-step dispatch")
    _add_common(p)
    p.add_argument("--t", type=int, default=0, help="time step to solve")

    p = sub.add_parser("mdp", help="solve the fleet schedule for given rewards")
    _add_common(p)
    p.add_argument("--rewards", default=None,
                   help="CSV of delivery rewards with columns t,zone,reward")
    p.add_argument("--prices", default=None,
                   help="optional lmp.csv whose equilibrium prices set charging costs")
    p.add_argument("--fleet", type=float, default=None)

    p = sub.add_parser("synth", help="generate a synthetic scenario file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--zones", type=int, required=True)
    p.add_argument("--buses", type=int, required=True)
    p.add_argument("--out", required=True, help="output scenario JSON path")
    p.add_argument("--fleet", type=float, default=None)
    p.add_argument("--horizon", type=int, default=None, help="override the step count")
    return ap


def _load(args) -> tuple:
    scenario = load_scenario(args.scenario)
    if getattr(args, "fleet", None) is not None:
        scenario = scenario.with_fleet(args.fleet)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    return scenario, outdir


def _dump_mdp(space, table, flow, path: Path):
    rows = []
    for row in range(space.n_rows):
        s = space.state_tuple(int(space.sa_state[row]))
        a = space.action_of_row(row)
        rows.append((s[0], s[1], s[2], s[3], s[4],
                     KIND_NAMES[a.kind], a.target or "", a.amount,
                     table.values[space.sa_state[row]], table.q_values[row],
                     table.policy[row], flow.flows[row]))
    write_csv(path, ["t", "zone", "soc", "deliveries_left", "charging_left",
                     "action", "target", "amount", "V", "Q", "pi", "flow"], rows)


def cmd_solve(args) -> int:
    scenario, outdir = _load(args)
    inner_cfg = ELO_PRESET if args.tol_inner is None else replace(ELO_PRESET, tol=args.tol_inner)
    outer_cfg = EQN_PRESET if args.tol_outer is None else replace(EQN_PRESET, tol=args.tol_outer)
    config = {
        "scenario": str(args.scenario),
        "fleet": scenario.params.Q,
        "tol_inner": inner_cfg.tol,
        "tol_outer": outer_cfg.tol,
        "seed": args.seed,
        "workers": args.workers,
    }
    t0 = time.perf_counter()
    try:
        result = solve_equilibrium(scenario, aa_elo=inner_cfg, aa_eqn=outer_cfg,
                                   workers=args.workers)
    except AANonConvergenceError as exc:
        write_trace_csv(outdir / "trace_outer.csv", exc.trace)
        write_manifest(outdir, command="solve", config=config, converged=False,
                       residuals={"outer": exc.trace.final_residual},
                       wall_time_s=time.perf_counter() - t0)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OpfError as exc:
        write_manifest(outdir, command="solve", config=config, converged=False,
                       residuals={}, wall_time_s=time.perf_counter() - t0)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    files = write_equilibrium_artifacts(result, outdir)
    if args.dump_mdp:
        _dump_mdp(result.space, result.inner.values, result.inner.flow,
                  outdir / "mdp_dump.csv")
    write_manifest(
        outdir, command="solve", config=config, converged=True,
        residuals={
            "outer": result.outer_residual,
            "inner_final": result.inner.trace.final_residual,
        },
        wall_time_s=time.perf_counter() - t0,
        extra={
            "outer_iterations": result.outer_trace.iterations,
            "generation_cost": result.generation_cost,
            "baseline_generation_cost": result.baseline_generation_cost,
            "min_delivery_price": float(
                np.min(_delivery_prices(result)) if result.space.n_delivery_zones else 0.0),
        },
    )
    if result.space.n_delivery_zones and np.min(_delivery_prices(result)) < 0:
        print("warning: some equilibrium delivery prices are negative", file=sys.stderr)
    print(f"converged in {result.outer_trace.iterations} outer iterations; "
          f"artifacts in {outdir}")
    return 0


def _delivery_prices(result) -> np.ndarray:
    from .reward_design import demand_model, inverse_demand
    model = demand_model(result.space)
    return inverse_demand(model, result.inner.window_demand)


def cmd_baseline(args) -> int:
    scenario, outdir = _load(args)
    t0 = time.perf_counter()
    solutions, prices = baseline_lmp(scenario, workers=args.workers)
    T = scenario.params.T
    write_csv(outdir / "lmp_baseline.csv", ["t", "bus", "price"],
              ((t, prices.bus_ids[j], prices.values[t, j])
               for t in range(T) for j in range(len(prices.bus_ids))))
    write_manifest(outdir, command="baseline",
                   config={"scenario": str(args.scenario)},
                   converged=True,
                   residuals={"max_kkt_gap": max(s.comp_gap for s in solutions)},
                   wall_time_s=time.perf_counter() - t0)
    print(f"baseline prices written to {outdir}")
    return 0


def cmd_opf(args) -> int:
    scenario, outdir = _load(args)
    t = args.t
    if not (0 <= t < scenario.params.T):
        print(f"error: --t must be in [0, {scenario.params.T})", file=sys.stderr)
        return 2
    structure = build_structure(scenario.power)
    t0 = time.perf_counter()
    solutions, prices = solve_opf_horizon(
        scenario.power, np.asarray(scenario.power.base_load)[t:t + 1],
        structure=structure)
    sol = solutions[0]
    report = kkt_diagnostics(OpfInstance(structure, np.asarray(scenario.power.base_load)[t]), sol)
    gen_at_bus = {b: 0.0 for b in scenario.power.bus_ids}
    for g, gen in zip(sol.g, scenario.power.generators):
        gen_at_bus[gen.bus] += float(g)
    lmp_of = dict(zip(prices.bus_ids, prices.values[0]))
    binding_at = {b: [] for b in scenario.power.bus_ids}
    for name in ("g_max", "g_min"):
        for idx in report.binding[name]:
            binding_at[scenario.power.generators[idx].bus].append(f"{name}[{idx}]")
    for name in ("f_max", "f_min"):
        for idx in report.binding[name]:
            br = scenario.power.branches[idx]
            binding_at[br.from_bus].append(f"{name}[{idx}]")
            binding_at[br.to_bus].append(f"{name}[{idx}]")
    write_csv(outdir / f"opf_t{t}.csv",
              ["bus", "kind", "g", "theta", "lmp", "binding"],
              ((b, k, gen_at_bus[b], sol.theta[i],
                lmp_of.get(b, ""), ";".join(binding_at[b]))
               for i, (b, k) in enumerate(zip(scenario.power.bus_ids,
                                              scenario.power.bus_kinds))))
    write_csv(outdir / f"opf_t{t}_binding.csv", ["constraint", "index"],
              ((name, idx) for name, idxs in report.binding.items() for idx in idxs))
    write_manifest(outdir, command="opf",
                   config={"scenario": str(args.scenario), "t": t},
                   converged=True,
                   residuals={"kkt": report.max_residual},
                   wall_time_s=time.perf_counter() - t0,
                   extra={"licq_ok": report.licq_ok})
    print(f"dispatch for step {t} written to {outdir}")
    return 0


def _read_delivery_rewards(path: str, scenario) -> np.ndarray:
    grid = np.zeros((scenario.params.T, len(scenario.logistics.delivery_zones)))
    col = {z: j for j, z in enumerate(scenario.logistics.delivery_zones)}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            grid[int(rec["t"]), col[rec["zone"]]] = float(rec["reward"])
    return grid


def _read_prices(path: str, scenario) -> np.ndarray:
    prices = np.zeros((scenario.params.T, len(scenario.power.load_bus_ids)))
    col = scenario.power.load_bus_index
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            key = "price_equilibrium" if "price_equilibrium" in rec else "price"
            prices[int(rec["t"]), col[rec["bus"]]] = float(rec[key])
    return prices


def cmd_mdp(args) -> int:
    scenario, outdir = _load(args)
    t0 = time.perf_counter()
    space = build_state_space(scenario)
    delivery = (np.zeros((scenario.params.T, space.n_delivery_zones))
                if args.rewards is None
                else _read_delivery_rewards(args.rewards, scenario))
    charging = None
    if args.prices is not None:
        from .pumdp import charging_rewards_from_prices
        charging = charging_rewards_from_prices(space, _read_prices(args.prices, scenario))
    u = assemble_rewards(space, delivery, charging)
    table = solve_values(space, u)
    flow = propagate_flows(table)
    _dump_mdp(space, table, flow, outdir / "mdp_dump.csv")
    write_manifest(outdir, command="mdp",
                   config={"scenario": str(args.scenario),
                           "rewards": args.rewards, "prices": args.prices,
                           "fleet": scenario.params.Q},
                   converged=True,
                   residuals={"bellman": table.bellman_residual(),
                              "conservation": flow.conservation_residual()},
                   wall_time_s=time.perf_counter() - t0,
                   extra={"value_at_start": float(table.values[space.initial_state])})
    print(f"V(s0) = {fmt(table.values[space.initial_state])}")
    print(f"schedule dump written to {outdir / 'mdp_dump.csv'}")
    return 0


def cmd_synth(args) -> int:
    params = Params()
    if args.fleet is not None:
        params = replace(params, Q=float(args.fleet))
    if args.horizon is not None:
        params = replace(params, T=int(args.horizon))
    scenario = synth_scenario(args.seed, args.zones, args.buses, params=params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out)
    print(f"scenario written to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "baseline":
            return cmd_baseline(args)
        if args.command == "opf":
            return cmd_opf(args)
        if args.command == "mdp":
            return cmd_mdp(args)
        if args.command == "synth":
            return cmd_synth(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
