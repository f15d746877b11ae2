"""Market equilibrium between the fleet operator and the grid operator.

The coupling is a fixed point in price space: candidate electricity prices
induce optimal delivery rewards and a fleet schedule; the schedule's charging
load enters the grid dispatch; the dispatch produces new locational prices.
The outer loop accelerates that map starting from the no-charging prices.
Every outer evaluation fully converges the inner reward fixed point
(warm-started from the previous outer iterate).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .anderson import AAConfig, AATrace, ELO_PRESET, EQN_PRESET, aa_solve
from .dcopf import (
    GridStructure,
    OpfInfeasibleError,
    OpfSolution,
    PriceField,
    build_structure,
    solve_opf_horizon,
)
from .pumdp import StateSpace, build_state_space, charging_flows, charging_load
from .reward_design import InnerSolve, solve_reward_fixed_point
from .scenario import Scenario

__all__ = ["EquilibriumResult", "baseline_lmp", "solve_equilibrium", "max_price_bound"]


@dataclass
class EquilibriumResult:
    scenario: Scenario
    space: StateSpace
    prices: PriceField               # equilibrium charging prices
    baseline: PriceField             # prices without any charging
    inner: InnerSolve                # reward solve at the equilibrium prices
    opf: list[OpfSolution]           # per-step dispatch at the equilibrium load
    total_load: np.ndarray           # base load + charging load
    outer_trace: AATrace
    inner_traces: list[AATrace] = field(default_factory=list)
    baseline_opf: list[OpfSolution] = field(default_factory=list)

    @property
    def outer_residual(self) -> float:
        return self.outer_trace.final_residual

    @property
    def charging_load(self) -> np.ndarray:
        return self.total_load - np.asarray(self.scenario.power.base_load)

    @property
    def generation_cost(self) -> float:
        return float(sum(sol.objective for sol in self.opf))

    @property
    def baseline_generation_cost(self) -> float:
        return float(sum(sol.objective for sol in self.baseline_opf))


def baseline_lmp(scenario: Scenario, structure: GridStructure | None = None,
                 workers: int | None = None
                 ) -> tuple[list[OpfSolution], PriceField]:
    """Dispatch and prices for the base load alone."""
    return solve_opf_horizon(scenario.power, np.asarray(scenario.power.base_load),
                             workers=workers, structure=structure)


def max_price_bound(scenario: Scenario) -> float:
    """Upper edge of the plausible price box: 10x the priciest marginal cost."""
    worst = max(2.0 * g.c2 * max(g.g_max, 0.0) + g.c1 for g in scenario.power.generators)
    return 10.0 * worst


def _precheck_extremes(scenario: Scenario, structure: GridStructure,
                       workers: int | None) -> None:
    """Fail fast when some reachable charging pattern cannot be dispatched.

    Per time step the charging load lives in the convex hull of `no charging'
    and `whole fleet at one bus'; checking the extreme placements therefore
    covers every reachable load.
    """
    base = np.asarray(scenario.power.base_load)
    burst = scenario.params.Q * scenario.charge_step_energy_pu
    cols = sorted({scenario.zone_load_bus[z] for z in scenario.logistics.charging_zones})
    for col in cols:
        stressed = base.copy()
        stressed[:, col] += burst
        try:
            solve_opf_horizon(scenario.power, stressed, workers=workers,
                              structure=structure)
        except OpfInfeasibleError as exc:
            bus = scenario.power.load_bus_ids[col]
            raise OpfInfeasibleError(
                f"grid cannot absorb the whole fleet charging at bus {bus}: {exc}"
            ) from exc


def solve_equilibrium(scenario: Scenario,
                      aa_elo: AAConfig | None = None,
                      aa_eqn: AAConfig | None = None,
                      workers: int | None = None,
                      precheck: bool = True,
                      space: StateSpace | None = None) -> EquilibriumResult:
    """Run the nested fixed-point scheme to an equilibrium price field.

    Raises the accelerator's non-convergence error (with traces) if either
    loop hits its cap, and :class:`OpfInfeasibleError` (naming the time step
    and bus) if a dispatch fails.
    """
    cfg_inner = aa_elo or ELO_PRESET
    cfg_outer = aa_eqn or EQN_PRESET
    sp = space if space is not None else build_state_space(scenario)
    structure = build_structure(scenario.power)

    base = np.asarray(scenario.power.base_load)
    baseline_opf, baseline = baseline_lmp(scenario, structure=structure, workers=workers)
    if precheck:
        _precheck_extremes(scenario, structure, workers)

    T, L = base.shape
    p_cap = max_price_bound(scenario)
    inner_traces: list[AATrace] = []
    last: dict = {}
    warm: dict = {"mu": None}

    def h(p_flat: np.ndarray) -> np.ndarray:
        p = p_flat.reshape(T, L)
        if np.any(p < -1e-9) or np.any(p > p_cap):
            warnings.warn("price iterate left the box [0, 10x max marginal cost]",
                          RuntimeWarning, stacklevel=2)
        inner = solve_reward_fixed_point(p, sp, config=cfg_inner, mu0=warm["mu"])
        warm["mu"] = inner.rewards.delivery
        inner_traces.append(inner.trace)
        load = base + charging_load(sp, charging_flows(inner.flow))
        opf, prices = solve_opf_horizon(scenario.power, load, workers=workers,
                                        structure=structure)
        last.update(inner=inner, opf=opf, load=load, prices=prices,
                    input=p_flat.copy())
        return prices.values.ravel()

    p_star_flat, outer_trace = aa_solve(h, baseline.values.ravel(), cfg_outer)
    if not np.array_equal(last["input"], p_star_flat):
        h(p_star_flat)

    return EquilibriumResult(
        scenario=scenario,
        space=sp,
        prices=PriceField(values=p_star_flat.reshape(T, L),
                          bus_ids=baseline.bus_ids),
        baseline=baseline,
        inner=last["inner"],
        opf=last["opf"],
        total_load=last["load"],
        outer_trace=outer_trace,
        inner_traces=inner_traces,
        baseline_opf=baseline_opf,
    )
