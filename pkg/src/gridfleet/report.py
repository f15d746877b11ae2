"""Deterministic CSV and manifest emission.

All CSVs use header rows, ``.`` decimals, UTF-8, LF line endings, and 17
significant digits for reals so that doubles round-trip exactly and repeated
runs produce byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import EquilibriumResult
from .pumdp import charging_flows, charging_load, delivery_flows
from .reward_design import demand_model, inverse_demand, window_demand

__all__ = [
    "fmt", "write_csv", "write_trace_csv", "write_equilibrium_artifacts",
    "write_manifest", "config_hash",
]


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def write_trace_csv(path: str | Path, trace) -> Path:
    return write_csv(path, ["iter", "residual", "kind", "checked", "bound"],
                     trace.rows())


def write_equilibrium_artifacts(result: EquilibriumResult, outdir: str | Path) -> dict[str, Path]:
    """Emit lmp/charging/delivery CSVs plus the outer and inner traces."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sc = result.scenario
    sp = result.space
    files: dict[str, Path] = {}

    T = sc.params.T
    bus_ids = result.prices.bus_ids
    files["lmp"] = write_csv(
        outdir / "lmp.csv",
        ["t", "bus", "price_baseline", "price_equilibrium"],
        ((t, bus_ids[j], result.baseline.values[t, j], result.prices.values[t, j])
         for t in range(T) for j in range(len(bus_ids))),
    )

    occupancy = np.zeros((T, len(sc.logistics.zones)))
    x_c = charging_flows(result.inner.flow)
    zrows = sp.zone[sp.sa_state[sp.charge_rows]]
    np.add.at(occupancy, (sp.charge_row_step, zrows), x_c)
    load = charging_load(sp, x_c)
    charge_zones = [z for z in sc.logistics.zones if z in sc.charging_zone_set]
    files["charging"] = write_csv(
        outdir / "charging.csv",
        ["t", "zone", "bus", "truck_steps", "load_pu"],
        ((t, z,
          bus_ids[sc.zone_load_bus[z]],
          occupancy[t, sc.zone_index[z]],
          occupancy[t, sc.zone_index[z]] * sc.charge_step_energy_pu)
         for t in range(T) for z in charge_zones),
    )
    assert np.isclose(load.sum(), (occupancy * sc.charge_step_energy_pu).sum())

    model = demand_model(sp)
    z = window_demand(sp, delivery_flows(result.inner.flow))
    p_d = inverse_demand(model, z)
    files["delivery"] = write_csv(
        outdir / "delivery.csv",
        ["window", "zone", "demand", "price"],
        ((k, zone, z[k, j], p_d[k, j])
         for k in range(sc.params.K)
         for j, zone in enumerate(sc.logistics.delivery_zones)),
    )

    files["trace_outer"] = write_trace_csv(outdir / "trace_outer.csv", result.outer_trace)
    for i, tr in enumerate(result.inner_traces):
        files[f"trace_inner_{i}"] = write_trace_csv(outdir / f"trace_inner_{i}.csv", tr)
    return files


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(outdir: str | Path, *, command: str, config: dict,
                   converged: bool, residuals: dict, wall_time_s: float,
                   extra: dict | None = None) -> Path:
    doc = {
        "tool": "gridfleet",
        "version": __version__,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "converged": converged,
        "residuals": residuals,
        "wall_time_s": wall_time_s,
    }
    if extra:
        doc.update(extra)
    path = Path(outdir) / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
