"""Named test problems (all d = 1, unit diffusion unless stated)."""

from __future__ import annotations

from .core import Partition, ProblemSpec, make_grid
from .symbolic import coefficients_from_expressions

PRESETS = {
    # name: (drift, diffusion, driver, noise, terminal, terminal_nodes)
    "heat": ("0", "1", "0", "0", "x**2", None),
    "linear": ("0", "1", "0", "0", "x", None),
    "constant": ("0", "1", "0", "0", "7", None),
    "additive-noise": ("0", "1", "0", "0.3", "x", None),
    "decay": ("0", "1", "-y", "0", "1", None),
    "ou": ("-x", "1", "0", "0", "x", None),
    "nonlinear": ("0", "1", "sin(y)", "0.2*cos(y)", "x**2", None),
    "nonlinear-sin": ("0", "1", "sin(y)", "0.2*cos(y)", "sin(x)", None),
    "growth": ("0", "1", "sin(y)", "0.2*cos(y)", "x + sin(x)", None),
    "spde-cos": ("0", "1", "0", "0.2*cos(y)", "x**2", None),
    "jump-product": ("0", "1", "0", "0", "x0*x1", 2),
    "jump-later": ("0", "1", "0", "0", "x1", 2),
    "jump-first": ("0", "1", "0", "0", "x0", 2),
}


def preset_coefficients(name: str):
    try:
        drift, diffusion, driver, noise, terminal, nodes = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {sorted(PRESETS)}") from None
    return coefficients_from_expressions(1, drift, diffusion, driver, noise, terminal, nodes, label=name)


def make_problem(name: str, x: float = 0.0, t: float = 1.0, n_steps: int = 100,
                 n_inner_paths: int = 10_000, partition_times=None, **kw) -> ProblemSpec:
    """Problem description for a preset; partitioned presets default to ``{0, t/2, t}``."""
    coeffs = preset_coefficients(name)
    grid = make_grid(t, n_steps)
    partition = None
    if coeffs.discrete_terminal or partition_times is not None:
        partition = Partition.from_times(grid, partition_times or (0.0, t / 2, t))
    return ProblemSpec(coeffs, t, (x,), grid, partition=partition, n_inner_paths=n_inner_paths, **kw)
