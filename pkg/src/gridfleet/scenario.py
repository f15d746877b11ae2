"""Problem instances: logistics network, power grid, coupling, and parameters.

A scenario is a single JSON document.  Top-level keys:

``logistics``
    ``zones`` [id], ``edges`` [[id, id]], ``depot``, ``charging_zones`` [id],
    ``delivery_zones`` [id], ``population`` {id: float}
``power``
    ``buses`` [{id, kind: "gen"|"load"}], ``slack_bus``,
    ``branches`` [{from, to, b, fmin, fmax}],
    ``generators`` [{bus, c2, c1, gmin, gmax}],
    ``base_load`` T rows of |load buses| nonnegative per-unit values
``coupling``
    ``zone_to_bus`` {zone: load bus}, ``phi_soc``, ``phi_kw``, ``energy_base_kw``
``params``
    ``Q``, ``n_max``, ``r_max``, ``T``, ``K``, ``delta_h``, ``rho``,
    ``eps1``, ``eps2``, ``demand_a``, ``demand_b``

All ids are strings.  Scenarios are immutable after construction and safe to
share across workers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "ScenarioError",
    "LogisticsNetwork",
    "Branch",
    "Generator",
    "PowerGrid",
    "Coupling",
    "Params",
    "Scenario",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "synth_scenario",
    "bundled_scenario_path",
]


class ScenarioError(ValueError):
    """Validation failure; names the offending field and the violated constraint."""

    def __init__(self, fieldname: str, constraint: str):
        super().__init__(f"{fieldname}: {constraint}")
        self.fieldname = fieldname
        self.constraint = constraint


@dataclass(frozen=True)
class LogisticsNetwork:
    zones: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    depot: str
    charging_zones: tuple[str, ...]
    delivery_zones: tuple[str, ...]
    population: dict[str, float]


@dataclass(frozen=True)
class Branch:
    from_bus: str
    to_bus: str
    susceptance: float
    flow_min: float
    flow_max: float


@dataclass(frozen=True)
class Generator:
    bus: str
    c2: float
    c1: float
    g_min: float
    g_max: float


@dataclass(frozen=True)
class PowerGrid:
    bus_ids: tuple[str, ...]
    bus_kinds: tuple[str, ...]  # "gen" | "load", aligned with bus_ids
    slack_bus: str
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    base_load: np.ndarray  # (T, n_load_buses), read-only

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @cached_property
    def load_bus_ids(self) -> tuple[str, ...]:
        return tuple(b for b, k in zip(self.bus_ids, self.bus_kinds) if k == "load")

    @cached_property
    def gen_bus_ids(self) -> tuple[str, ...]:
        return tuple(b for b, k in zip(self.bus_ids, self.bus_kinds) if k == "gen")

    @cached_property
    def load_bus_index(self) -> dict[str, int]:
        return {b: i for i, b in enumerate(self.load_bus_ids)}


@dataclass(frozen=True)
class Coupling:
    zone_to_bus: dict[str, str]
    phi_soc: int
    phi_kw: float
    energy_base_kw: float


@dataclass(frozen=True)
class Params:
    Q: float = 1000.0
    n_max: int = 10
    r_max: int = 12
    T: int = 32
    K: int = 4
    delta_h: float = 0.25
    rho: float = 1e5
    eps1: float = 1e-6
    eps2: float = 1e-4
    demand_a: float = 10.0
    demand_b: float = 5.0


@dataclass(frozen=True)
class Scenario:
    logistics: LogisticsNetwork
    power: PowerGrid
    coupling: Coupling
    params: Params

    # ---- derived indexing (cached, read-only) ----

    @cached_property
    def zone_index(self) -> dict[str, int]:
        return {z: i for i, z in enumerate(self.logistics.zones)}

    @cached_property
    def adjacency(self) -> dict[str, tuple[str, ...]]:
        nbrs: dict[str, list[str]] = {z: [] for z in self.logistics.zones}
        for u, v in self.logistics.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return {z: tuple(sorted(set(n))) for z, n in nbrs.items()}

    @cached_property
    def delivery_zone_index(self) -> dict[str, int]:
        return {z: i for i, z in enumerate(self.logistics.delivery_zones)}

    @cached_property
    def charging_zone_set(self) -> frozenset[str]:
        return frozenset(self.logistics.charging_zones)

    @cached_property
    def delivery_zone_set(self) -> frozenset[str]:
        return frozenset(self.logistics.delivery_zones)

    @cached_property
    def zone_load_bus(self) -> dict[str, int]:
        """Charging zone -> column index into load-bus arrays."""
        lbi = self.power.load_bus_index
        return {z: lbi[b] for z, b in self.coupling.zone_to_bus.items()}

    @cached_property
    def window_of_step(self) -> np.ndarray:
        """Delivery window index per time step, tiling the horizon into K slots."""
        p = self.params
        w = np.minimum((np.arange(p.T) * p.K) // p.T, p.K - 1)
        w.setflags(write=False)
        return w

    @property
    def charge_step_energy_pu(self) -> float:
        """Per-unit electrical load of one truck-step of charging."""
        c = self.coupling
        return c.phi_kw * self.params.delta_h / c.energy_base_kw

    def with_fleet(self, fleet_size: float) -> "Scenario":
        """Copy of this scenario with a different fleet size."""
        return Scenario(self.logistics, self.power, self.coupling,
                        replace(self.params, Q=float(fleet_size)))


# ---------------------------------------------------------------------------
# validation


def _connected(nodes: tuple[str, ...], pairs) -> bool:
    if not nodes:
        return False
    adj: dict[str, set[str]] = {n: set() for n in nodes}
    for u, v in pairs:
        adj[u].add(v)
        adj[v].add(u)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(nodes)


def _validate(s: Scenario) -> Scenario:
    lg, pw, cp, pr = s.logistics, s.power, s.coupling, s.params

    # logistics
    if len(set(lg.zones)) != len(lg.zones):
        raise ScenarioError("logistics.zones", "zone ids must be unique")
    zset = set(lg.zones)
    if lg.depot not in zset:
        raise ScenarioError("logistics.depot", "depot must be one of the zones")
    for name, sub in (("charging_zones", lg.charging_zones),
                      ("delivery_zones", lg.delivery_zones)):
        if not set(sub) <= zset:
            raise ScenarioError(f"logistics.{name}", "must be a subset of zones")
    if lg.depot not in lg.charging_zones:
        raise ScenarioError("logistics.charging_zones",
                            "charging must be available at the depot")
    for u, v in lg.edges:
        if u not in zset or v not in zset:
            raise ScenarioError("logistics.edges", f"edge ({u},{v}) references unknown zone")
        if u == v:
            raise ScenarioError("logistics.edges", f"self-loop on zone {u}")
    if not _connected(lg.zones, lg.edges):
        raise ScenarioError("logistics.edges", "logistics graph must be connected")
    for z in lg.delivery_zones:
        if z not in lg.population:
            raise ScenarioError("logistics.population", f"missing population for delivery zone {z}")
        if not lg.population[z] > 0:
            raise ScenarioError("logistics.population",
                                f"population must be > 0 for delivery zone {z}")

    # power grid
    if len(set(pw.bus_ids)) != len(pw.bus_ids):
        raise ScenarioError("power.buses", "bus ids must be unique")
    if len(pw.bus_kinds) != len(pw.bus_ids):
        raise ScenarioError("power.buses", "every bus needs a kind")
    for k in pw.bus_kinds:
        if k not in ("gen", "load"):
            raise ScenarioError("power.buses", f"unknown bus kind {k!r}")
    bset = set(pw.bus_ids)
    if pw.slack_bus not in bset:
        raise ScenarioError("power.slack_bus", "slack bus must exist")
    if pw.bus_kinds[pw.bus_index[pw.slack_bus]] != "gen":
        raise ScenarioError("power.slack_bus", "slack bus must be a generator bus")
    if not pw.generators:
        raise ScenarioError("power.generators", "at least one generator is required")
    for br in pw.branches:
        if br.from_bus not in bset or br.to_bus not in bset:
            raise ScenarioError("power.branches", f"branch ({br.from_bus},{br.to_bus}) references unknown bus")
        if not br.susceptance > 0:
            raise ScenarioError("power.branches", "susceptance must be > 0")
        if not (br.flow_min <= 0.0 <= br.flow_max):
            raise ScenarioError("power.branches", "flow limits must straddle zero (fmin <= 0 <= fmax)")
    if not _connected(pw.bus_ids, [(b.from_bus, b.to_bus) for b in pw.branches]):
        raise ScenarioError("power.branches", "power grid must be connected")
    for g in pw.generators:
        if g.bus not in bset:
            raise ScenarioError("power.generators", f"generator references unknown bus {g.bus}")
        if not g.c2 > 0:
            raise ScenarioError("power.generators", "c2 must be > 0 (strict convexity)")
        if not g.c1 > 0:
            raise ScenarioError("power.generators", "c1 must be > 0")
        if g.g_min > g.g_max:
            raise ScenarioError("power.generators", "gmin must be <= gmax")
    n_load = len(pw.load_bus_ids)
    if pw.base_load.shape != (pr.T, n_load):
        raise ScenarioError("power.base_load",
                            f"shape must be (T, n_load_buses) = ({pr.T}, {n_load}), "
                            f"got {pw.base_load.shape}")
    if np.any(pw.base_load < 0):
        raise ScenarioError("power.base_load", "base load must be nonnegative")

    # coupling
    load_set = set(pw.load_bus_ids)
    for z, b in cp.zone_to_bus.items():
        if z not in zset:
            raise ScenarioError("coupling.zone_to_bus", f"unknown zone {z}")
        if b not in load_set:
            raise ScenarioError("coupling.zone_to_bus", f"zone {z} must map to a load bus, got {b}")
    for z in lg.charging_zones:
        if z not in cp.zone_to_bus:
            raise ScenarioError("coupling.zone_to_bus", f"charging zone {z} has no load bus")
    if not (isinstance(cp.phi_soc, int) and cp.phi_soc >= 1):
        raise ScenarioError("coupling.phi_soc", "must be an integer >= 1")
    if not cp.phi_kw > 0:
        raise ScenarioError("coupling.phi_kw", "must be > 0")
    if not cp.energy_base_kw > 0:
        raise ScenarioError("coupling.energy_base_kw", "must be > 0")

    # params
    for name in ("n_max", "r_max", "T", "K"):
        v = getattr(pr, name)
        if not (isinstance(v, int) and v >= 1):
            raise ScenarioError(f"params.{name}", "must be an integer >= 1")
    if pr.Q < 0:
        raise ScenarioError("params.Q", "fleet size must be >= 0")
    if not pr.rho > 0:
        raise ScenarioError("params.rho", "must be > 0")
    for name in ("eps1", "eps2", "delta_h", "demand_b"):
        if not getattr(pr, name) > 0:
            raise ScenarioError(f"params.{name}", "must be > 0")
    return s


# ---------------------------------------------------------------------------
# (de)serialization


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}.{key}", "required key missing")
    return d[key]


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        lg = _require(doc, "logistics", "scenario")
        pw = _require(doc, "power", "scenario")
        cp = _require(doc, "coupling", "scenario")
        pr = _require(doc, "params", "scenario")

        logistics = LogisticsNetwork(
            zones=tuple(str(z) for z in _require(lg, "zones", "logistics")),
            edges=tuple((str(u), str(v)) for u, v in _require(lg, "edges", "logistics")),
            depot=str(_require(lg, "depot", "logistics")),
            charging_zones=tuple(str(z) for z in _require(lg, "charging_zones", "logistics")),
            delivery_zones=tuple(str(z) for z in _require(lg, "delivery_zones", "logistics")),
            population={str(k): float(v) for k, v in _require(lg, "population", "logistics").items()},
        )
        buses = _require(pw, "buses", "power")
        base_load = np.array(_require(pw, "base_load", "power"), dtype=float)
        if base_load.ndim != 2:
            raise ScenarioError("power.base_load", "must be a rectangular 2-D array")
        base_load.setflags(write=False)
        power = PowerGrid(
            bus_ids=tuple(str(b["id"]) for b in buses),
            bus_kinds=tuple(str(b["kind"]) for b in buses),
            slack_bus=str(_require(pw, "slack_bus", "power")),
            branches=tuple(
                Branch(str(b["from"]), str(b["to"]), float(b["b"]),
                       float(b["fmin"]), float(b["fmax"]))
                for b in _require(pw, "branches", "power")
            ),
            generators=tuple(
                Generator(str(g["bus"]), float(g["c2"]), float(g["c1"]),
                          float(g["gmin"]), float(g["gmax"]))
                for g in _require(pw, "generators", "power")
            ),
            base_load=base_load,
        )
        coupling = Coupling(
            zone_to_bus={str(k): str(v) for k, v in _require(cp, "zone_to_bus", "coupling").items()},
            phi_soc=int(_require(cp, "phi_soc", "coupling")),
            phi_kw=float(_require(cp, "phi_kw", "coupling")),
            energy_base_kw=float(_require(cp, "energy_base_kw", "coupling")),
        )
        params = Params(
            Q=float(_require(pr, "Q", "params")),
            n_max=int(_require(pr, "n_max", "params")),
            r_max=int(_require(pr, "r_max", "params")),
            T=int(_require(pr, "T", "params")),
            K=int(_require(pr, "K", "params")),
            delta_h=float(_require(pr, "delta_h", "params")),
            rho=float(_require(pr, "rho", "params")),
            eps1=float(_require(pr, "eps1", "params")),
            eps2=float(_require(pr, "eps2", "params")),
            demand_a=float(_require(pr, "demand_a", "params")),
            demand_b=float(_require(pr, "demand_b", "params")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError("scenario", f"malformed document: {exc}") from exc
    return _validate(Scenario(logistics, power, coupling, params))


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "logistics": {
            "zones": list(s.logistics.zones),
            "edges": [list(e) for e in s.logistics.edges],
            "depot": s.logistics.depot,
            "charging_zones": list(s.logistics.charging_zones),
            "delivery_zones": list(s.logistics.delivery_zones),
            "population": dict(s.logistics.population),
        },
        "power": {
            "buses": [{"id": b, "kind": k} for b, k in zip(s.power.bus_ids, s.power.bus_kinds)],
            "slack_bus": s.power.slack_bus,
            "branches": [
                {"from": b.from_bus, "to": b.to_bus, "b": b.susceptance,
                 "fmin": b.flow_min, "fmax": b.flow_max}
                for b in s.power.branches
            ],
            "generators": [
                {"bus": g.bus, "c2": g.c2, "c1": g.c1, "gmin": g.g_min, "gmax": g.g_max}
                for g in s.power.generators
            ],
            "base_load": [[float(x) for x in row] for row in s.power.base_load],
        },
        "coupling": {
            "zone_to_bus": dict(s.coupling.zone_to_bus),
            "phi_soc": s.coupling.phi_soc,
            "phi_kw": s.coupling.phi_kw,
            "energy_base_kw": s.coupling.energy_base_kw,
        },
        "params": asdict(s.params),
    }


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError("scenario", f"not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def save_scenario(s: Scenario, path: str | Path) -> None:
    """Write a scenario as canonical JSON (sorted keys, 2-space indent, LF)."""
    text = json.dumps(scenario_to_dict(s), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package ("hawaii_like" or "small")."""
    p = Path(__file__).parent / "data" / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return p


# ---------------------------------------------------------------------------
# synthetic instances


def _random_connected(rng: np.random.Generator, ids: list[str], extra_frac: float
                      ) -> list[tuple[str, str]]:
    """Spanning tree plus a deterministic sprinkle of redundant edges."""
    n = len(ids)
    edges: list[tuple[str, str]] = []
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.append((ids[j], ids[i]))
    seen = {tuple(sorted(e)) for e in edges}
    n_extra = int(round(extra_frac * n))
    attempts = 0
    while n_extra > 0 and attempts < 50 * n:
        attempts += 1
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        key = tuple(sorted((ids[int(i)], ids[int(j)])))
        if key in seen:
            continue
        seen.add(key)
        edges.append((ids[int(i)], ids[int(j)]))
        n_extra -= 1
    return edges


def synth_scenario(seed: int, n_zones: int, n_buses: int,
                   params: Params | None = None) -> Scenario:
    """Generate a deterministic-in-seed scenario.

    ``n_buses`` counts load buses; generator buses are added on top (one per
    generator, scaled ~45/37 relative to load buses).  Costs come from the two
    generator classes; the base load carries a mild midday peak.  Sizing keeps
    the grid feasible even with the whole fleet charging at a single bus.
    """
    if n_zones < 1:
        raise ScenarioError("synth.n_zones", "must be >= 1")
    if n_buses < 1:
        raise ScenarioError("synth.n_buses", "must be >= 1")
    p = params or Params()
    rng = np.random.default_rng(seed)

    # logistics -------------------------------------------------------------
    zones = [str(i) for i in range(1, n_zones + 1)]
    depot = zones[0]
    z_edges = _random_connected(rng, zones, extra_frac=0.35) if n_zones > 1 else []
    n_charge = max(1, (n_zones + 2) // 3)
    others = [z for z in zones if z != depot]
    rng.shuffle(others)
    charging_zones = sorted([depot] + others[: n_charge - 1], key=lambda z: int(z))
    delivery_zones = [z for z in zones if z != depot]
    # Populations scale with the deliverable volume; the factor keeps the
    # marginal-revenue slope gentle relative to the fleet's reallocation
    # sensitivity, which the reward fixed point needs to stay stable.
    pop_scale = 100.0 * p.Q * p.n_max / max(1, p.K * max(1, len(delivery_zones))) + 1.0
    population = {z: float(round(pop_scale * rng.uniform(0.6, 1.6), 3)) for z in zones}

    # power grid ------------------------------------------------------------
    load_buses = [str(i) for i in range(1, n_buses + 1)]
    n_gens = max(1, int(round(n_buses * 45.0 / 37.0)))
    gen_buses = [f"g{i}" for i in range(1, n_gens + 1)]
    mesh = _random_connected(rng, load_buses, extra_frac=0.45) if n_buses > 1 else []
    mesh_b = rng.uniform(6.0, 18.0, size=len(mesh))

    gen_host = [load_buses[int(rng.integers(0, n_buses))] for _ in gen_buses]
    classes = rng.integers(0, 2, size=n_gens)  # 0: wood, 1: diesel/fuel/oil
    if n_gens >= 2:
        # keep both cost classes represented so the merit order has a step
        classes[0] = 0
        classes[-1] = 1
    gen_cost = [(0.002, 114.4) if c == 0 else (0.004, 116.5) for c in classes]

    # Load level per bus, shaped with a midday bump over the horizon.
    fleet_burst = p.Q * 150.0 * p.delta_h / 10_000.0  # one fleet charging at one bus, p.u.
    per_bus = rng.uniform(0.45, 1.1, size=n_buses)
    t_axis = np.arange(p.T)
    bump = 1.0 + 0.30 * np.exp(-((t_axis - 0.55 * p.T) / (0.22 * p.T + 1e-9)) ** 2)
    base_load = np.round(np.outer(bump, per_bus), 6)
    peak_total = float(base_load.sum(axis=1).max())

    # Generation capacity: wood covers the off-peak load plus part of the
    # charging burst; diesel tops up the rest.  Weights are normalized so the
    # installed total lands exactly on the headroom target.
    total_cap = 1.25 * (peak_total + fleet_burst) + 0.5
    wood_share = 0.62
    n_wood = max(1, int(np.sum(classes == 0)))
    n_diesel = max(1, int(np.sum(classes == 1)))
    weights = np.array([
        (wood_share / n_wood if c == 0 else (1 - wood_share) / n_diesel)
        * rng.uniform(0.75, 1.3)
        for c in classes
    ])
    caps = total_cap * weights / weights.sum()
    gens = [
        Generator(bus=gen_buses[i], c2=c2, c1=c1, g_min=0.0,
                  g_max=float(round(caps[i], 6)))
        for i, (c2, c1) in enumerate(gen_cost)
    ]

    # Branch limits: size each mesh line off the worst DC flow seen across
    # peak load plus a whole-fleet charging burst at any single load bus, so
    # the stress placements checked before an equilibrium solve stay feasible.
    bus_ids = gen_buses + load_buses
    kinds = ["gen"] * n_gens + ["load"] * n_buses
    branches: list[Branch] = []
    lead_caps = [max(1.1 * g.g_max, 0.5) + 0.05 for g in gens]
    for gb, host, cap in zip(gen_buses, gen_host, lead_caps):
        branches.append(Branch(gb, host, 25.0, -round(cap, 6), round(cap, 6)))
    if mesh:
        flows = _stress_flows(bus_ids, branches, mesh, mesh_b, gens,
                              base_load, load_buses, fleet_burst)
        for (u, v), b, f in zip(mesh, mesh_b, flows):
            cap = round(2.0 * f + 0.3, 6)
            branches.append(Branch(u, v, float(round(b, 6)), -cap, cap))

    power = PowerGrid(
        bus_ids=tuple(bus_ids),
        bus_kinds=tuple(kinds),
        slack_bus=gen_buses[0],
        branches=tuple(branches),
        generators=tuple(gens),
        base_load=base_load,
    )

    # coupling --------------------------------------------------------------
    zone_to_bus = {}
    for i, z in enumerate(charging_zones):
        zone_to_bus[z] = load_buses[int(rng.integers(0, n_buses))]
    coupling = Coupling(zone_to_bus=zone_to_bus, phi_soc=1, phi_kw=150.0,
                        energy_base_kw=10_000.0)

    base_load.setflags(write=False)
    return _validate(Scenario(LogisticsNetwork(
        zones=tuple(zones),
        edges=tuple(z_edges),
        depot=depot,
        charging_zones=tuple(charging_zones),
        delivery_zones=tuple(delivery_zones),
        population=population,
    ), power, coupling, p))


def _stress_flows(bus_ids, lead_branches, mesh, mesh_b, gens, base_load,
                  load_buses, fleet_burst) -> np.ndarray:
    """Per mesh line, the largest |DC flow| over stress load cases.

    Cases: peak base load, and peak plus the whole-fleet charging burst at
    each load bus in turn, dispatched proportionally to generator capacity.
    """
    idx = {b: i for i, b in enumerate(bus_ids)}
    n = len(bus_ids)
    all_edges = [(idx[b.from_bus], idx[b.to_bus], b.susceptance) for b in lead_branches]
    all_edges += [(idx[u], idx[v], float(b)) for (u, v), b in zip(mesh, mesh_b)]
    Z = np.zeros((n, n))
    for i, j, b in all_edges:
        Z[i, i] += b
        Z[j, j] += b
        Z[i, j] -= b
        Z[j, i] -= b
    peak_row = base_load[np.argmax(base_load.sum(axis=1))]
    load_idx = np.array([idx[lb] for lb in load_buses])
    gen_idx = np.array([idx[g.bus] for g in gens])
    gen_share = np.array([g.g_max for g in gens])
    gen_share = gen_share / gen_share.sum()
    n_lead = len(lead_branches)
    edge_i = np.array([i for i, _, _ in all_edges[n_lead:]])
    edge_j = np.array([j for _, j, _ in all_edges[n_lead:]])
    edge_b = np.array([b for _, _, b in all_edges[n_lead:]])

    worst = np.zeros(len(mesh))
    for extra_at in [None, *range(len(load_buses))]:
        load = peak_row.copy()
        if extra_at is not None:
            load[extra_at] += fleet_burst
        inj = np.zeros(n)
        np.subtract.at(inj, load_idx, load)
        np.add.at(inj, gen_idx, load.sum() * gen_share)
        theta = np.linalg.lstsq(Z, inj, rcond=None)[0]
        worst = np.maximum(worst, np.abs(edge_b * (theta[edge_i] - theta[edge_j])))
    return worst
