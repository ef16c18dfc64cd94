import numpy as np
import pytest

from kinwass import vlasov
from kinwass.core import Params, TORUS


@pytest.fixture(scope="session")
def eps_pair_run():
    """The reference epsilon-pair run shared by the acceptance criteria.

    2000 steps at dt = 1e-3, 1e5 particles, 512 cells, exact transport on
    500-pair subsamples at 21 snapshot times.
    """
    params = Params(p=2.0, d=1, sigma=-1, domain=TORUS)
    config = vlasov.SimConfig(params=params, n_particles=100_000, cells=512,
                              dt=1e-3, horizon=2.0, family=vlasov.AMPLITUDE_PAIR,
                              eps1=0.01, eps2=0.02, mode=1, vth=0.08, seed=20240,
                              subsample=500)
    snapshot_times = np.linspace(0.0, 2.0, 21)
    result = vlasov.run_paired(config, snapshot_times)
    assert not result.blow_up, result.blow_up_message
    return config, result


@pytest.fixture(scope="session")
def small_eps_pair_run():
    """A light epsilon-pair run for unit tests that only need structure."""
    params = Params(p=2.0, d=1, sigma=-1, domain=TORUS)
    config = vlasov.SimConfig(params=params, n_particles=8000, cells=128,
                              dt=1e-3, horizon=0.2, family=vlasov.AMPLITUDE_PAIR,
                              eps1=0.01, eps2=0.02, vth=0.08, seed=7,
                              subsample=300)
    result = vlasov.run_paired(config, np.linspace(0.0, 0.2, 5))
    assert not result.blow_up
    return config, result
