"""Render solver CSV artifacts into figures plus tidy data side-files.

Figures display solver output only; nothing is recomputed.  Cell values pass
through as the exact strings found in the input CSVs, so the tidy side-file
of a figure is byte-stable and golden-testable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGURE_KINDS = ("lmp-compare", "lmp-spatial", "charging-vs-lmp")


class RenderError(ValueError):
    pass


@dataclass
class FigureSpec:
    input_dir: Path
    kind: str
    output: Path
    buses: list[str] = field(default_factory=list)
    zones: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output = Path(self.output)
        if self.kind not in FIGURE_KINDS:
            raise RenderError(
                f"unknown figure kind {self.kind!r}; expected one of {', '.join(FIGURE_KINDS)}")


def _read_csv(path: Path, required: list[str]) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise RenderError(f"missing input file {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RenderError(f"{path} is empty")
        missing = [c for c in required if c not in header]
        if missing:
            raise RenderError(f"{path} lacks required columns: {', '.join(missing)}")
        rows = [row for row in reader if row]
    return header, rows


def _write_tidy(path: Path, header: list[str], rows: list[list[str]]) -> Path:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return path


def _col(header: list[str], name: str) -> int:
    return header.index(name)


def tidy_path_for(output: Path) -> Path:
    return output.with_suffix(".csv")


def render(spec: FigureSpec) -> tuple[Path, Path]:
    """Render one figure; returns (image path, tidy CSV path)."""
    if spec.kind == "lmp-compare":
        return _render_lmp_compare(spec)
    if spec.kind == "lmp-spatial":
        return _render_lmp_spatial(spec)
    return _render_charging_vs_lmp(spec)


def _select(rows: list[list[str]], col: int, wanted: list[str], what: str,
            path: Path) -> list[list[str]]:
    available = sorted({row[col] for row in rows}, key=_natural)
    if not wanted:
        raise RenderError(
            f"no {what} selected; available in {path.name}: {', '.join(available)}")
    unknown = [w for w in wanted if w not in available]
    if unknown:
        raise RenderError(
            f"unknown {what} {', '.join(unknown)}; available in {path.name}: "
            f"{', '.join(available)}")
    keep = set(wanted)
    return [row for row in rows if row[col] in keep]


def _natural(s: str):
    return (0, int(s)) if s.isdigit() else (1, s)


def _render_lmp_compare(spec: FigureSpec) -> tuple[Path, Path]:
    path = spec.input_dir / "lmp.csv"
    header, rows = _read_csv(path, ["t", "bus", "price_baseline",
                                    "price_equilibrium"])
    i_t, i_bus = _col(header, "t"), _col(header, "bus")
    i_pb, i_pe = _col(header, "price_baseline"), _col(header, "price_equilibrium")
    selected = _select(rows, i_bus, spec.buses, "buses", path)

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for n, bus in enumerate(spec.buses):
        mine = [row for row in selected if row[i_bus] == bus]
        t = np.array([int(row[i_t]) for row in mine])
        order = np.argsort(t, kind="stable")
        pb = np.array([float(mine[j][i_pb]) for j in order])
        pe = np.array([float(mine[j][i_pe]) for j in order])
        c = colors[n % len(colors)]
        ax.plot(t[order], pb, linestyle="--", color=c, label=f"bus {bus} (no charging)")
        ax.plot(t[order], pe, linestyle="-", color=c, label=f"bus {bus} (equilibrium)")
    ax.set_xlabel("time step")
    ax.set_ylabel("price [$/p.u.]")
    ax.set_title("Charging impact on locational prices")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)
    tidy = _write_tidy(tidy_path_for(spec.output), header, selected)
    return spec.output, tidy


def _render_lmp_spatial(spec: FigureSpec) -> tuple[Path, Path]:
    path = spec.input_dir / "lmp.csv"
    header, rows = _read_csv(path, ["t", "bus", "price_equilibrium"])
    i_t, i_bus = _col(header, "t"), _col(header, "bus")
    i_pe = _col(header, "price_equilibrium")
    buses = spec.buses or sorted({row[i_bus] for row in rows}, key=_natural)
    selected = _select(rows, i_bus, buses, "buses", path)

    t_vals = sorted({int(row[i_t]) for row in selected})
    grid = np.full((len(t_vals), len(buses)), np.nan)
    t_index = {t: i for i, t in enumerate(t_vals)}
    b_index = {b: j for j, b in enumerate(buses)}
    for row in selected:
        grid[t_index[int(row[i_t])], b_index[row[i_bus]]] = float(row[i_pe])

    fig, (ax0, ax1) = plt.subplots(
        1, 2, figsize=(9.5, 4.0), gridspec_kw={"width_ratios": [1, 2]})
    ax0.bar(range(len(buses)), grid[0], color="tab:blue")
    ax0.set_xticks(range(len(buses)))
    ax0.set_xticklabels(buses, rotation=90, fontsize=6)
    ax0.set_xlabel("bus")
    ax0.set_ylabel("price [$/p.u.]")
    lo, hi = np.nanmin(grid), np.nanmax(grid)
    pad = 0.05 * (hi - lo) if hi > lo else 1.0
    ax0.set_ylim(lo - pad, hi + pad)
    ax0.set_title("prices at the first step")
    im = ax1.imshow(grid.T, aspect="auto", origin="lower", cmap="viridis",
                    extent=(t_vals[0], t_vals[-1], -0.5, len(buses) - 0.5))
    ax1.set_xlabel("time step")
    ax1.set_ylabel("bus index")
    ax1.set_title("price evolution")
    fig.colorbar(im, ax=ax1, label="price [$/p.u.]")
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)

    tidy_header = [header[i_t], header[i_bus], header[i_pe]]
    tidy_rows = [[row[i_t], row[i_bus], row[i_pe]] for row in selected]
    tidy = _write_tidy(tidy_path_for(spec.output), tidy_header, tidy_rows)
    return spec.output, tidy


def _render_charging_vs_lmp(spec: FigureSpec) -> tuple[Path, Path]:
    cpath = spec.input_dir / "charging.csv"
    lpath = spec.input_dir / "lmp.csv"
    cheader, crows = _read_csv(cpath, ["t", "zone", "bus", "truck_steps"])
    lheader, lrows = _read_csv(lpath, ["t", "bus", "price_equilibrium"])
    ci_t, ci_zone = _col(cheader, "t"), _col(cheader, "zone")
    ci_bus, ci_steps = _col(cheader, "bus"), _col(cheader, "truck_steps")
    li_t, li_bus = _col(lheader, "t"), _col(lheader, "bus")
    li_pe = _col(lheader, "price_equilibrium")

    selected = _select(crows, ci_zone, spec.zones, "zones", cpath)
    price_at = {(row[li_t], row[li_bus]): row[li_pe] for row in lrows}
    joined = []
    for row in selected:
        key = (row[ci_t], row[ci_bus])
        if key not in price_at:
            raise RenderError(
                f"no price for t={key[0]} bus={key[1]} in {lpath.name}")
        joined.append([row[ci_t], row[ci_zone], row[ci_bus], row[ci_steps],
                       price_at[key]])

    fig, axes = plt.subplots(len(spec.zones), 1,
                             figsize=(7.0, 2.8 * len(spec.zones)),
                             squeeze=False)
    for n, zone in enumerate(spec.zones):
        ax = axes[n][0]
        mine = [row for row in joined if row[1] == zone]
        t = np.array([int(row[0]) for row in mine])
        order = np.argsort(t, kind="stable")
        steps = np.array([float(mine[j][3]) for j in order])
        price = np.array([float(mine[j][4]) for j in order])
        ax.bar(t[order], steps, color="tab:gray", label="charging truck-steps")
        ax.set_ylabel(f"zone {zone}\ntruck-steps")
        twin = ax.twinx()
        twin.plot(t[order], price, color="tab:red", label="price")
        twin.set_ylabel("price [$/p.u.]")
        if n == 0:
            ax.legend(loc="upper left", fontsize=8)
            twin.legend(loc="upper right", fontsize=8)
    axes[-1][0].set_xlabel("time step")
    fig.suptitle("Charging demand against locational prices")
    fig.tight_layout()
    fig.savefig(spec.output, dpi=150)
    plt.close(fig)

    tidy = _write_tidy(tidy_path_for(spec.output),
                       ["t", "zone", "bus", "truck_steps", "price_equilibrium"],
                       joined)
    return spec.output, tidy
