"""Finite-horizon fleet MDP with entropy-perturbed policies.

A truck's state is (t, zone, soc, deliveries_left, charge_steps_left).  Every
truck starts at the depot fully charged and must be back, fully charged, at
the end of the horizon; a heavily penalized teleport action mops up trucks
that cannot terminate cleanly.  The per-state policy perturbation
pi^T (ln pi - 1) gives the closed-form layer update

    V(s) = logsumexp_a Q(s, a) + 1,      pi(.|s) = softmax(Q(s, .)),

computed backwards one time layer at a time; fleet flows then propagate
forwards through the deterministic transitions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .scenario import Scenario

__all__ = [
    "IDLE", "DELIVER", "CHARGE", "MOVE", "TELEPORT", "KIND_NAMES",
    "Action", "InfeasibleActionError", "StateSpaceLimitError",
    "StateSpace", "ValueTable", "FlowVector",
    "feasible_actions", "transition", "build_state_space",
    "assemble_rewards", "charging_rewards_from_prices",
    "solve_values", "propagate_flows",
    "delivery_flows", "charging_flows", "teleport_flows", "charging_load",
    "flow_entropy",
]

IDLE, DELIVER, CHARGE, MOVE, TELEPORT = 0, 1, 2, 3, 4
KIND_NAMES = ("idle", "deliver", "charge", "move", "teleport")


class Action(NamedTuple):
    """One feasible action; ``target`` for moves, ``amount``/``duration`` for charges."""
    kind: int
    target: str | None = None
    amount: int = 0
    duration: int = 0


class InfeasibleActionError(ValueError):
    pass


class StateSpaceLimitError(RuntimeError):
    pass


def feasible_actions(scenario: Scenario, state: tuple) -> list[Action]:
    """Feasible action set of a state (t, zone, soc, deliveries_left, charging_left)."""
    t, v, r, n, tau = state
    p = scenario.params
    if t >= p.T:
        return []
    if t == p.T - 1:
        if v == scenario.logistics.depot and r == p.r_max:
            return [Action(IDLE)]
        return [Action(TELEPORT)]
    if tau > 0:
        return [Action(IDLE)]

    acts = [Action(IDLE)]
    phi = scenario.coupling.phi_soc

    def charges() -> Iterable[Action]:
        max_d = min((p.r_max - r) // phi, (p.T - 1) - t)
        for d in range(1, max_d + 1):
            yield Action(CHARGE, amount=d * phi, duration=d)

    if r == 0:
        if v in scenario.charging_zone_set:
            acts.extend(charges())
        return acts
    if n > 0 and v in scenario.delivery_zone_set:
        acts.append(Action(DELIVER))
    if v in scenario.charging_zone_set:
        acts.extend(charges())
    acts.extend(Action(MOVE, target=w) for w in scenario.adjacency[v])
    return acts


def _apply(scenario: Scenario, state: tuple, action: Action) -> tuple:
    t, v, r, n, tau = state
    p = scenario.params
    depot = scenario.logistics.depot
    if action.kind == CHARGE:
        return (t + 1, v, r + action.amount, n, action.duration - 1)
    if action.kind == IDLE:
        if tau > 0:
            return (t + 1, v, r, n, tau - 1)
        return (t + 1, v, r, n, 0)
    if action.kind == DELIVER:
        return (t + 1, v, r - 1, n - 1, tau)
    if action.kind == MOVE:
        if action.target == depot:
            # Arriving at the depot starts a fresh shift.
            return (t + 1, depot, r - 1, p.n_max, tau)
        return (t + 1, action.target, r - 1, n, tau)
    if action.kind == TELEPORT:
        return (t + 1, depot, p.r_max, p.n_max, 0)
    raise InfeasibleActionError(f"unknown action kind {action.kind}")


def transition(scenario: Scenario, state: tuple, action: Action) -> tuple:
    """Deterministic next state; raises if the action is infeasible in ``state``."""
    if action not in feasible_actions(scenario, state):
        raise InfeasibleActionError(f"action {action} infeasible in state {state}")
    return _apply(scenario, state, action)


@dataclass
class StateSpace:
    """Reachable states and their feasible actions, flattened for array sweeps.

    States are ordered by time layer; state-action rows are grouped by state.
    ``charge_rows`` lists the rows that draw electricity (charge starts plus
    in-charging idles), in row order; parallel arrays give the time step and
    load-bus column of each such row.
    """

    scenario: Scenario
    # per state
    t: np.ndarray
    zone: np.ndarray          # zone index
    soc: np.ndarray
    deliveries: np.ndarray
    charging_left: np.ndarray
    layer_ptr: np.ndarray     # states of layer t: layer_ptr[t]:layer_ptr[t+1]
    # per state-action row
    sa_state: np.ndarray
    sa_next: np.ndarray
    sa_kind: np.ndarray
    sa_amount: np.ndarray     # charge amount, 0 otherwise
    sa_target: np.ndarray     # move target zone index, -1 otherwise
    state_ptr: np.ndarray     # rows of state s: state_ptr[s]:state_ptr[s+1]
    sa_layer_ptr: np.ndarray  # rows of layer t

    def __post_init__(self):
        sc = self.scenario
        self.n_states = len(self.t)
        self.n_rows = len(self.sa_state)
        self.initial_state = 0
        self.deliver_rows = np.flatnonzero(self.sa_kind == DELIVER)
        self.teleport_rows = np.flatnonzero(self.sa_kind == TELEPORT)
        in_charging = (self.sa_kind == IDLE) & (self.charging_left[self.sa_state] > 0)
        self.charge_rows = np.flatnonzero((self.sa_kind == CHARGE) | in_charging)
        # electricity bookkeeping for charge rows
        zone_bus = np.full(len(sc.logistics.zones), -1, dtype=np.int32)
        for z, col in sc.zone_load_bus.items():
            zone_bus[sc.zone_index[z]] = col
        st = self.sa_state[self.charge_rows]
        self.charge_row_step = self.t[st].astype(np.int64)
        self.charge_row_bus = zone_bus[self.zone[st]].astype(np.int64)
        if np.any(self.charge_row_bus < 0):
            raise AssertionError("charging row in a zone with no load bus")
        # delivery bookkeeping
        dz_col = np.full(len(sc.logistics.zones), -1, dtype=np.int32)
        for z, col in sc.delivery_zone_index.items():
            dz_col[sc.zone_index[z]] = col
        dst = self.sa_state[self.deliver_rows]
        self.deliver_row_step = self.t[dst].astype(np.int64)
        self.deliver_row_zone = dz_col[self.zone[dst]].astype(np.int64)
        self.terminal_mask = self.t == sc.params.T

    @property
    def n_load_buses(self) -> int:
        return len(self.scenario.power.load_bus_ids)

    @property
    def n_delivery_zones(self) -> int:
        return len(self.scenario.logistics.delivery_zones)

    def state_tuple(self, idx: int) -> tuple:
        return (int(self.t[idx]),
                self.scenario.logistics.zones[self.zone[idx]],
                int(self.soc[idx]), int(self.deliveries[idx]),
                int(self.charging_left[idx]))

    def action_of_row(self, row: int) -> Action:
        kind = int(self.sa_kind[row])
        if kind == CHARGE:
            amt = int(self.sa_amount[row])
            return Action(CHARGE, amount=amt, duration=amt // self.scenario.coupling.phi_soc)
        if kind == MOVE:
            return Action(MOVE, target=self.scenario.logistics.zones[self.sa_target[row]])
        return Action(kind)


def build_state_space(scenario: Scenario, max_states: int = 5_000_000) -> StateSpace:
    """Breadth-first enumeration of the states reachable from the initial state."""
    p = scenario.params
    zones = scenario.logistics.zones
    zidx = scenario.zone_index

    s0 = (0, scenario.logistics.depot, p.r_max, p.n_max, 0)
    t_l, v_l, r_l, n_l, tau_l = [], [], [], [], []
    sa_state, sa_next, sa_kind, sa_amount, sa_target = [], [], [], [], []
    layer_ptr = [0]
    sa_layer_ptr = [0]
    state_ptr = [0]

    def push_state(s: tuple) -> int:
        t_l.append(s[0]); v_l.append(zidx[s[1]]); r_l.append(s[2])
        n_l.append(s[3]); tau_l.append(s[4])
        return len(t_l) - 1

    frontier: dict[tuple, int] = {s0: push_state(s0)}
    order: list[tuple] = [s0]
    for t in range(p.T + 1):
        layer_ptr.append(len(t_l))
        nxt: dict[tuple, int] = {}
        for s in order:
            si = frontier[s]
            for a in feasible_actions(scenario, s):
                s2 = _apply(scenario, s, a)
                j = nxt.get(s2)
                if j is None:
                    if len(t_l) >= max_states:
                        raise StateSpaceLimitError(
                            f"state space exceeds the cap of {max_states} states")
                    j = push_state(s2)
                    nxt[s2] = j
                sa_state.append(si)
                sa_next.append(j)
                sa_kind.append(a.kind)
                sa_amount.append(a.amount)
                sa_target.append(zidx[a.target] if a.kind == MOVE else -1)
            state_ptr.append(len(sa_state))
        sa_layer_ptr.append(len(sa_state))
        frontier = nxt
        order = list(nxt.keys())
    # terminal layer: states exist, no actions
    state_ptr.extend([len(sa_state)] * len(order))

    return StateSpace(
        scenario=scenario,
        t=np.array(t_l, dtype=np.int32),
        zone=np.array(v_l, dtype=np.int32),
        soc=np.array(r_l, dtype=np.int32),
        deliveries=np.array(n_l, dtype=np.int32),
        charging_left=np.array(tau_l, dtype=np.int32),
        layer_ptr=np.array(layer_ptr, dtype=np.int64),
        sa_state=np.array(sa_state, dtype=np.int64),
        sa_next=np.array(sa_next, dtype=np.int64),
        sa_kind=np.array(sa_kind, dtype=np.int8),
        sa_amount=np.array(sa_amount, dtype=np.int16),
        sa_target=np.array(sa_target, dtype=np.int32),
        state_ptr=np.array(state_ptr, dtype=np.int64),
        sa_layer_ptr=np.array(sa_layer_ptr, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# rewards


def assemble_rewards(space: StateSpace, delivery_rewards: np.ndarray,
                     charging_rewards: np.ndarray | None = None,
                     rho: float | None = None) -> np.ndarray:
    """Per-row reward vector from delivery rewards (T x delivery zones),
    per-charge-row rewards, and the teleport penalty."""
    sc = space.scenario
    T, dz = sc.params.T, space.n_delivery_zones
    delivery_rewards = np.asarray(delivery_rewards, dtype=float)
    if delivery_rewards.shape != (T, dz):
        raise ValueError(f"delivery rewards must have shape ({T}, {dz}), "
                         f"got {delivery_rewards.shape}")
    u = np.zeros(space.n_rows)
    u[space.deliver_rows] = delivery_rewards[space.deliver_row_step,
                                             space.deliver_row_zone]
    if charging_rewards is not None:
        charging_rewards = np.asarray(charging_rewards, dtype=float)
        if charging_rewards.shape != (len(space.charge_rows),):
            raise ValueError(
                f"charging rewards must have shape ({len(space.charge_rows)},), "
                f"got {charging_rewards.shape}")
        u[space.charge_rows] = charging_rewards
    u[space.teleport_rows] = -(sc.params.rho if rho is None else rho)
    return u


def charging_rewards_from_prices(space: StateSpace, prices: np.ndarray) -> np.ndarray:
    """Per-charge-row reward -energy * price at the row's (step, bus).

    Each occupied charging step pays the locational price of the electricity
    it draws, so reward and grid load stay time-consistent.
    """
    sc = space.scenario
    prices = np.asarray(prices, dtype=float)
    expect = (sc.params.T, space.n_load_buses)
    if prices.shape != expect:
        raise ValueError(f"price field must have shape {expect}, got {prices.shape}")
    e = sc.charge_step_energy_pu
    return -e * prices[space.charge_row_step, space.charge_row_bus]


# ---------------------------------------------------------------------------
# backward values / forward flows


@dataclass
class ValueTable:
    space: StateSpace
    rewards: np.ndarray
    values: np.ndarray      # V per state
    q_values: np.ndarray    # per row
    policy: np.ndarray      # per row

    def bellman_residual(self) -> float:
        """Max deviation of V from the layer update recomputed off q_values."""
        sp = self.space
        worst = 0.0
        for t in range(sp.scenario.params.T):
            rows = slice(sp.sa_layer_ptr[t], sp.sa_layer_ptr[t + 1])
            s_lo, s_hi = sp.layer_ptr[t], sp.layer_ptr[t + 1]
            starts = sp.state_ptr[s_lo:s_hi]
            q = self.q_values[rows]
            m = np.maximum.reduceat(q, starts - starts[0])
            lse = m + np.log(np.add.reduceat(
                np.exp(q - np.repeat(m, np.diff(np.append(starts, rows.stop)))),
                starts - starts[0]))
            worst = max(worst, float(np.max(np.abs(self.values[s_lo:s_hi] - (lse + 1.0)))))
        return worst


def solve_values(space: StateSpace, rewards: np.ndarray) -> ValueTable:
    """Backward sweep; terminal values are zero."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != (space.n_rows,):
        raise ValueError(f"rewards must have shape ({space.n_rows},)")
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    V = np.zeros(space.n_states)
    Q = np.empty(space.n_rows)
    pi = np.empty(space.n_rows)
    T = space.scenario.params.T
    for t in range(T - 1, -1, -1):
        lo, hi = space.sa_layer_ptr[t], space.sa_layer_ptr[t + 1]
        s_lo, s_hi = space.layer_ptr[t], space.layer_ptr[t + 1]
        q = rewards[lo:hi] + V[space.sa_next[lo:hi]]
        starts = space.state_ptr[s_lo:s_hi] - lo
        counts = np.diff(np.append(starts, hi - lo))
        m = np.maximum.reduceat(q, starts)
        shifted = np.exp(q - np.repeat(m, counts))
        total = np.add.reduceat(shifted, starts)
        V[s_lo:s_hi] = m + np.log(total) + 1.0
        # normalizing the shifted exponentials directly keeps row sums exact
        # even when q sits many orders of magnitude below zero
        pi[lo:hi] = shifted / np.repeat(total, counts)
        Q[lo:hi] = q
    return ValueTable(space=space, rewards=rewards, values=V, q_values=Q, policy=pi)


@dataclass
class FlowVector:
    space: StateSpace
    flows: np.ndarray       # per row
    occupancy: np.ndarray   # per state

    def conservation_residual(self) -> float:
        """Max violation of outflow - inflow = injection over non-terminal states."""
        sp = self.space
        out = np.zeros(sp.n_states)
        np.add.at(out, sp.sa_state, self.flows)
        inflow = np.zeros(sp.n_states)
        np.add.at(inflow, sp.sa_next, self.flows)
        q = np.zeros(sp.n_states)
        q[sp.initial_state] = sp.scenario.params.Q
        resid = out - inflow - q
        return float(np.max(np.abs(resid[~sp.terminal_mask]), initial=0.0))


def propagate_flows(table: ValueTable, fleet_size: float | None = None) -> FlowVector:
    """Forward pass: the fleet mass splits along the policy at every state."""
    space = table.space
    Q = space.scenario.params.Q if fleet_size is None else float(fleet_size)
    occ = np.zeros(space.n_states)
    occ[space.initial_state] = Q
    x = np.zeros(space.n_rows)
    for t in range(space.scenario.params.T):
        lo, hi = space.sa_layer_ptr[t], space.sa_layer_ptr[t + 1]
        x[lo:hi] = occ[space.sa_state[lo:hi]] * table.policy[lo:hi]
        np.add.at(occ, space.sa_next[lo:hi], x[lo:hi])
    return FlowVector(space=space, flows=x, occupancy=occ)


# ---------------------------------------------------------------------------
# flow slices and grid coupling


def delivery_flows(flow: FlowVector) -> np.ndarray:
    """Delivery flow aggregated onto the (time step, delivery zone) grid."""
    sp = flow.space
    grid = np.zeros((sp.scenario.params.T, sp.n_delivery_zones))
    np.add.at(grid, (sp.deliver_row_step, sp.deliver_row_zone),
              flow.flows[sp.deliver_rows])
    return grid


def charging_flows(flow: FlowVector) -> np.ndarray:
    """Truck-step charging occupancies, one entry per charge row."""
    return flow.flows[flow.space.charge_rows]


def teleport_flows(flow: FlowVector) -> np.ndarray:
    return flow.flows[flow.space.teleport_rows]


def charging_load(space: StateSpace, charge_occupancy: np.ndarray) -> np.ndarray:
    """Per-unit electrical load (T x load buses) added by charging trucks."""
    charge_occupancy = np.asarray(charge_occupancy, dtype=float)
    if charge_occupancy.shape != (len(space.charge_rows),):
        raise ValueError("occupancy vector must align with charge rows")
    load = np.zeros((space.scenario.params.T, space.n_load_buses))
    np.add.at(load, (space.charge_row_step, space.charge_row_bus),
              space.scenario.charge_step_energy_pu * charge_occupancy)
    return load


def flow_entropy(space: StateSpace, flows: np.ndarray) -> float:
    """Perturbation cost of a flow: sum_s X_s * F(x(.|s)/X_s) with F = pi^T(ln pi - 1).

    Empty states contribute zero (0 * F(0/0) = 0 convention).
    """
    flows = np.asarray(flows, dtype=float)
    X = np.zeros(space.n_states)
    np.add.at(X, space.sa_state, flows)
    Xr = X[space.sa_state]
    pos = flows > 0
    h = np.zeros(space.n_rows)
    h[pos] = flows[pos] * (np.log(flows[pos] / Xr[pos]) - 1.0)
    return float(np.sum(h))
