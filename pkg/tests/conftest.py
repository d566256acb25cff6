import numpy as np
import pytest

from canyon_rtk.gnss_model import sat_label
from canyon_rtk.io import load_dataset
from canyon_rtk.sim import canyon, generate_dataset, open_sky
from canyon_rtk.sim.presets import sky
from canyon_rtk.sim.scenario import GnssConfig, SlipEvent


def _generate(factory, name, scenario):
    root = factory.mktemp(name)
    generate_dataset(scenario, str(root))
    return load_dataset(str(root))


@pytest.fixture(scope="session")
def zero_event_dataset(tmp_path_factory):
    """Open sky, measurement noise on, no slips and no NLOS."""
    return _generate(tmp_path_factory, "zero_event", open_sky(seed=3, duration=20.0))


@pytest.fixture(scope="session")
def slip_dataset(tmp_path_factory):
    rng = np.random.default_rng(0)
    labels = [sat_label(s.constellation, s.prn) for s in sky()]
    times = rng.choice(np.arange(1, 60), 40, replace=False)
    slips = [SlipEvent(float(t) + 0.2, labels[rng.integers(len(labels))],
                       int(rng.choice([-5, -3, -2, -1, 1, 2, 3, 4]))) for t in times]
    return _generate(tmp_path_factory, "slips", open_sky(seed=5, duration=60.0, cycle_slips=slips))


@pytest.fixture(scope="session")
def noise_free_dataset(tmp_path_factory):
    sc = canyon(seed=7, duration=20.0, noise_free=True,
                gnss=GnssConfig(nlos_bias_min=0.0, nlos_bias_max=0.0))
    return _generate(tmp_path_factory, "noise_free", sc)


@pytest.fixture(scope="session")
def short_canyon(tmp_path_factory):
    return _generate(tmp_path_factory, "short_canyon", canyon(seed=7, duration=8.0))
