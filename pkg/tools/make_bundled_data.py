"""Regenerate the scenario files shipped in src/gridfleet/data/.

Run from the repository root:  python3 tools/make_bundled_data.py
"""
from __future__ import annotations

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from gridfleet.equilibrium import solve_equilibrium  # noqa: E402
from gridfleet.scenario import Params, save_scenario, synth_scenario  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "gridfleet" / "data"


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)

    small = synth_scenario(0, 4, 3, params=Params(Q=50.0, n_max=2, r_max=4, T=8, K=4))
    save_scenario(small, DATA / "small.json")
    print("small.json written")

    hawaii = synth_scenario(0, 36, 37, params=Params())
    save_scenario(hawaii, DATA / "hawaii_like.json")
    print("hawaii_like.json written")

    # prove both instances solve end to end before freezing them
    for name, scenario in (("small", small), ("hawaii_like", hawaii)):
        t0 = time.perf_counter()
        res = solve_equilibrium(scenario)
        print(f"{name}: outer iters {res.outer_trace.iterations}, "
              f"residual {res.outer_residual:.2e}, "
              f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
