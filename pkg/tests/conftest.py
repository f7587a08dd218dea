import numpy as np
import pytest

from cmlbench.dataset import (GridInstance, default_split_ratios,
                              generate_instance_arrays, split_ics)
from cmlbench.dynamics import SystemParams


@pytest.fixture(scope="session")
def tiny_instance():
    """One chaotic instance at reduced length, shared across test modules."""
    instance = GridInstance(params=SystemParams(K=6.5, epsilon=6.5 * 0.2, N=8),
                            rho=0.2)
    states, seeds, _ = generate_instance_arrays(
        instance, 10, 2024, transient=200, record=800, with_diagnostics=False)
    trajectories = {i: states[i] for i in range(10)}
    split = split_ics(10, default_split_ratios(10), split_seed=7)
    return instance, trajectories, split


@pytest.fixture(scope="session")
def mild_instance():
    """A K=2.0 instance where one-block oracle round-trips stay tiny."""
    instance = GridInstance(params=SystemParams(K=2.0, epsilon=0.2, N=8),
                            rho=0.1)
    states, seeds, _ = generate_instance_arrays(
        instance, 10, 515, transient=200, record=800, with_diagnostics=False)
    trajectories = {i: states[i] for i in range(10)}
    split = split_ics(10, default_split_ratios(10), split_seed=7)
    return instance, trajectories, split
