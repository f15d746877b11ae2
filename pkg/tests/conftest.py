import numpy as np
import pytest

from gridfleet import bundled_scenario_path, load_scenario, synth_scenario
from gridfleet.pumdp import build_state_space
from gridfleet.scenario import Params


@pytest.fixture(scope="session")
def small_scenario():
    return load_scenario(bundled_scenario_path("small"))


@pytest.fixture(scope="session")
def small_space(small_scenario):
    return build_state_space(small_scenario)


@pytest.fixture(scope="session")
def tiny_scenario():
    """3 zones, T=6, r_max=3, n_max=2: the desk-scale oracle instance.

    A full recharge must fit into one step here (charge rate = battery size),
    otherwise no delivery tour can end fully charged at the depot in 6 steps.
    """
    from gridfleet.scenario import scenario_from_dict, scenario_to_dict
    base = synth_scenario(2, 3, 2, params=Params(Q=25.0, n_max=2, r_max=3, T=6, K=2))
    doc = scenario_to_dict(base)
    doc["coupling"]["phi_soc"] = 3
    return scenario_from_dict(doc)


@pytest.fixture(scope="session")
def tiny_space(tiny_scenario):
    return build_state_space(tiny_scenario)


@pytest.fixture(scope="session")
def tiny_rewards(tiny_space):
    """A fixed, mildly heterogeneous reward vector for the tiny instance."""
    rng = np.random.default_rng(7)
    sp = tiny_space
    delivery = 3.0 + rng.uniform(-0.5, 0.5, size=(sp.scenario.params.T,
                                                  sp.n_delivery_zones))
    charging = rng.uniform(-0.2, 0.0, size=len(sp.charge_rows))
    from gridfleet.pumdp import assemble_rewards
    return assemble_rewards(sp, delivery, charging)
