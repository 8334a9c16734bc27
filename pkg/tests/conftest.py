import numpy as np
import pytest

from qreadout import dataset


def small_config(n_qubits=2, traces=4, samples=40, seed=3, **kw):
    """A cheap synthetic model for unit tests."""
    ang = np.deg2rad(np.linspace(30, 50, n_qubits))
    c0 = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    c1 = np.stack([np.cos(-ang), np.sin(-ang)], axis=1)
    params = dict(center0=c0, center1=c1, ring_up_ns=np.full(n_qubits, 20.0),
                  noise=np.full(n_qubits, 0.5), t1_ns=np.full(n_qubits, 5e3),
                  crosstalk=np.eye(n_qubits), traces_per_config=traces, seed=seed,
                  samples_per_channel=samples)
    params.update(kw)
    return dataset.SynthConfig(**params)


@pytest.fixture
def small_set():
    return dataset.generate_synthetic(small_config())


@pytest.fixture(scope="session")
def desk_small():
    """Desk model with a reduced trace count, shared by the slower tests."""
    return dataset.generate_synthetic(dataset.desk_config(traces_per_config=60, seed=99))
