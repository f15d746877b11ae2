"""Operator-side reward design: the delivery-reward fixed point and profit.

Customers book one of K delivery windows per zone; the inverse demand
``a - b*exp(z/zeta_v)`` maps window demand to the delivery price.  The
profit-maximizing delivery rewards solve a fixed point: the reward equals the
marginal revenue of the window demand induced by that same reward.  Charging
rewards need no iteration; every charging truck-step is charged the
locational electricity price of the energy it draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anderson import AAConfig, AATrace, ELO_PRESET, aa_solve
from .pumdp import (
    FlowVector,
    StateSpace,
    ValueTable,
    assemble_rewards,
    charging_flows,
    charging_rewards_from_prices,
    delivery_flows,
    flow_entropy,
    propagate_flows,
    solve_values,
    teleport_flows,
)

__all__ = [
    "DemandModel", "RewardPair", "InnerSolve",
    "demand_model", "inverse_demand", "inverse_demand_slope", "marginal_revenue",
    "revenue_curvature", "window_demand", "expand_windows",
    "elo_reward_map", "solve_reward_fixed_point", "elo_profit",
]


@dataclass(frozen=True)
class DemandModel:
    """Inverse demand a - b*exp(z/zeta) per (window, delivery zone)."""
    a: float
    b: float
    zeta: np.ndarray  # per delivery zone
    windows: int


def demand_model(space: StateSpace) -> DemandModel:
    sc = space.scenario
    zeta = np.array([sc.logistics.population[z] for z in sc.logistics.delivery_zones])
    return DemandModel(a=sc.params.demand_a, b=sc.params.demand_b,
                       zeta=zeta, windows=sc.params.K)


def inverse_demand(model: DemandModel, z: np.ndarray) -> np.ndarray:
    """Price clearing demand z; rows are windows, columns delivery zones."""
    z = np.asarray(z, dtype=float)
    return model.a - model.b * np.exp(z / model.zeta)


def inverse_demand_slope(model: DemandModel, z: np.ndarray) -> np.ndarray:
    """Diagonal of the inverse-demand Jacobian."""
    z = np.asarray(z, dtype=float)
    return -(model.b / model.zeta) * np.exp(z / model.zeta)


def marginal_revenue(model: DemandModel, z: np.ndarray) -> np.ndarray:
    """d/dz of z * price(z): slope(z)*z + price(z)."""
    return inverse_demand_slope(model, z) * z + inverse_demand(model, z)


def revenue_curvature(model: DemandModel, z: np.ndarray) -> np.ndarray:
    """Second derivative of window revenue; <= 0 guards fixed-point uniqueness."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z / model.zeta)
    return -(model.b / model.zeta) * e * (2.0 + z / model.zeta)


def window_demand(space: StateSpace, delivery_grid: np.ndarray) -> np.ndarray:
    """Aggregate (T x zones) delivery flows into (K x zones) window demand."""
    sc = space.scenario
    z = np.zeros((sc.params.K, space.n_delivery_zones))
    np.add.at(z, sc.window_of_step, delivery_grid)
    return z


def expand_windows(space: StateSpace, per_window: np.ndarray) -> np.ndarray:
    """Replicate (K x zones) values onto the (T x zones) grid."""
    return np.asarray(per_window, dtype=float)[space.scenario.window_of_step]


@dataclass
class RewardPair:
    """Delivery rewards on the (T x delivery zones) grid (constant within each
    window) and per-charge-row charging rewards."""
    delivery: np.ndarray
    charging: np.ndarray


@dataclass
class InnerSolve:
    rewards: RewardPair
    flow: FlowVector
    values: ValueTable
    window_demand: np.ndarray
    trace: AATrace
    curvature_ok: bool


def elo_reward_map(delivery_rewards: np.ndarray, prices: np.ndarray,
                   space: StateSpace) -> tuple[np.ndarray, InnerSolve]:
    """One application of the reward fixed-point map.

    Schedules the fleet under the given rewards, aggregates the induced
    delivery demand per window, and returns the marginal revenue at that
    demand expanded back onto the time grid (plus the full intermediate
    solve for callers that need flows).
    """
    model = demand_model(space)
    charging = charging_rewards_from_prices(space, prices)
    u = assemble_rewards(space, delivery_rewards, charging)
    table = solve_values(space, u)
    flow = propagate_flows(table)
    z = window_demand(space, delivery_flows(flow))
    mu_next = expand_windows(space, marginal_revenue(model, z))
    aux = InnerSolve(
        rewards=RewardPair(delivery=delivery_rewards.copy(), charging=charging),
        flow=flow,
        values=table,
        window_demand=z,
        trace=AATrace(),
        curvature_ok=bool(np.all(revenue_curvature(model, z) <= 1e-12)),
    )
    return mu_next, aux


def default_delivery_rewards(space: StateSpace) -> np.ndarray:
    """Marginal revenue at zero demand: the standard warm start."""
    model = demand_model(space)
    z0 = np.zeros((model.windows, space.n_delivery_zones))
    return expand_windows(space, marginal_revenue(model, z0))


def solve_reward_fixed_point(prices: np.ndarray, space: StateSpace,
                             config: AAConfig | None = None,
                             mu0: np.ndarray | None = None) -> InnerSolve:
    """Solve the delivery-reward fixed point at fixed electricity prices.

    The iteration runs on the (T x delivery zones) reward grid; charging
    rewards are closed-form in the prices and excluded from the residual.
    Raises the accelerator's non-convergence error (with trace) at the cap.
    """
    cfg = config or ELO_PRESET
    T = space.scenario.params.T
    dz = space.n_delivery_zones
    if dz == 0:
        # no delivery market: rewards are empty, a single schedule suffices
        mu_empty = np.zeros((T, 0))
        _, aux = elo_reward_map(mu_empty, prices, space)
        aux.trace.converged = True
        aux.trace.residuals.append(0.0)
        aux.trace.kinds.append("final")
        aux.trace.checked.append(False)
        aux.trace.bounds.append(float("nan"))
        aux.trace.memory_sizes.append(0)
        return aux

    last: dict = {}

    def f(mu_flat: np.ndarray) -> np.ndarray:
        mu_next, aux = elo_reward_map(mu_flat.reshape(T, dz), prices, space)
        last["aux"] = aux
        last["input"] = mu_flat.copy()
        return mu_next.ravel()

    x0 = (mu0.ravel() if mu0 is not None else default_delivery_rewards(space).ravel())
    mu_star_flat, trace = aa_solve(f, x0, cfg)
    aux = last["aux"]
    if not np.array_equal(last["input"], mu_star_flat):
        # the final f evaluation is always at the returned iterate; re-solve
        # defensively if an accelerator change ever breaks that assumption
        _, aux = elo_reward_map(mu_star_flat.reshape(T, dz), prices, space)
    aux.rewards = RewardPair(delivery=mu_star_flat.reshape(T, dz),
                             charging=aux.rewards.charging)
    aux.trace = trace
    return aux


def elo_profit(flow: FlowVector, prices: np.ndarray, space: StateSpace,
               delivery_prices: np.ndarray | None = None) -> float:
    """Operator profit of a flow at given electricity prices.

    Revenue prices clear the delivery market (price = inverse demand at the
    flown quantity) unless explicit per-window delivery prices are supplied.
    """
    model = demand_model(space)
    z = window_demand(space, delivery_flows(flow))
    p_D = inverse_demand(model, z) if delivery_prices is None else np.asarray(delivery_prices, dtype=float)
    revenue = float(np.sum(p_D * z))
    energy = space.scenario.charge_step_energy_pu
    prices = np.asarray(prices, dtype=float)
    x_c = charging_flows(flow)
    charge_cost = float(np.sum(
        energy * prices[space.charge_row_step, space.charge_row_bus] * x_c))
    penalty = space.scenario.params.rho * float(np.sum(teleport_flows(flow)))
    return revenue - charge_cost - penalty - flow_entropy(space, flow.flows)
