import numpy as np
import pytest

from bdsde_lab.core import Partition, ProblemSpec, make_grid
from bdsde_lab.symbolic import coefficients_from_expressions


def build_spec(terminal="x", driver="0", noise="0", drift="0", diffusion="1", x=0.0, t=1.0, n_steps=20,
               paths=2000, terminal_nodes=None, partition=None, **kw):
    coeffs = coefficients_from_expressions(1, drift, diffusion, driver, noise, terminal, terminal_nodes)
    grid = make_grid(t, n_steps)
    if partition is None and terminal_nodes is not None:
        partition = (0.0, t / 2, t)
    part = Partition.from_times(grid, partition) if partition is not None else None
    return ProblemSpec(coeffs, t, (x,), grid, partition=part, n_inner_paths=paths, **kw)


@pytest.fixture
def spec_factory():
    return build_spec


def within(value, target, se, k=3.0, slack=0.0):
    return abs(np.asarray(value) - target) <= k * np.asarray(se) + slack
