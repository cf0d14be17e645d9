"""Experiment configuration: one plain-text ``key = value`` file per experiment.

Schema (all keys optional except where a kind needs them)::

    kind              u-estimate | grad-weights | grad-variational | z-profile |
                      z-discrete | jumps | oracle-compare | convergence | acceptance
    preset            name from bdsde_lab.problems (fills the coefficient keys below)
    dim               spatial dimension (default 1)
    drift, diffusion, driver, noise, terminal
                      sympy expressions in t, x (x1..xd), y, z (z1..zd); a discrete
                      terminal uses x0, x1, ... for the partition-node values
    terminal_nodes    argument count of a discrete terminal
    horizon           t > 0                 x          start point, comma separated
    n_steps           grid steps            partition  comma-separated node times
    n_inner_paths     W-paths per B-path    n_outer_paths  number of frozen B-paths
    seed              unsigned 64-bit       regression_degree  polynomial degree
    mollify_eps       Gaussian smoothing width (omit for none)
    noise_mode        gaussian | rademacher  noise_refinement  B/W sub-steps summed per step
    picard_iterations fixed-point sweeps (0 = explicit scheme)
    s_times           model times for z-profile / z-discrete
    ladder            refinement rungs "n_steps:paths, n_steps:paths, ..."
    oracle            auto | none           tolerance  absolute slack added to 3 SE
    pde_h, pde_n_time PDE oracle mesh (pde_n_time defaults to n_steps)
    output            CSV path              enumerate  exact Rademacher enumeration (true/false)

Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .core import Partition, ProblemSpec, make_grid
from .errors import ConfigurationError
from .problems import PRESETS
from .symbolic import coefficients_from_expressions

KINDS = ("u-estimate", "grad-weights", "grad-variational", "z-profile", "z-discrete", "jumps",
         "oracle-compare", "convergence", "acceptance")

_SECTION = "experiment"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "u-estimate"
    preset: Optional[str] = None
    dim: int = 1
    drift: str = "0"
    diffusion: str = "1"
    driver: str = "0"
    noise: str = "0"
    terminal: str = "x"
    terminal_nodes: Optional[int] = None
    horizon: float = 1.0
    x: tuple = (0.0,)
    n_steps: int = 100
    partition: Optional[tuple] = None
    n_inner_paths: int = 10_000
    n_outer_paths: int = 1
    seed: int = 0
    regression_degree: int = 3
    mollify_eps: Optional[float] = None
    noise_mode: str = "gaussian"
    noise_refinement: int = 1
    picard_iterations: int = 0
    s_times: tuple = ()
    ladder: tuple = ()
    oracle: str = "auto"
    tolerance: float = 0.02
    pde_h: float = 2 ** -7
    pde_n_time: Optional[int] = None
    output: Optional[str] = None
    enumerate: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        if self.kind in ("jumps", "z-discrete") and self.partition is None and not self._preset_partitioned():
            raise ConfigurationError(f"kind {self.kind} needs a partition")
        if self.kind == "convergence" and not self.ladder:
            raise ConfigurationError("kind convergence needs a ladder")
        if self.kind in ("z-profile", "z-discrete") and not self.s_times:
            raise ConfigurationError(f"kind {self.kind} needs s_times")
        if self.oracle not in ("auto", "none"):
            raise ConfigurationError("oracle must be auto or none")

    def _preset_partitioned(self) -> bool:
        return self.preset is not None and PRESETS[self.preset][5] is not None

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def coefficients(self):
        if self.preset is not None:
            drift, diffusion, driver, noise, terminal, nodes = PRESETS[self.preset]
            return coefficients_from_expressions(1, drift, diffusion, driver, noise, terminal, nodes,
                                                 label=self.preset)
        return coefficients_from_expressions(self.dim, self.drift, self.diffusion, self.driver, self.noise,
                                             self.terminal, self.terminal_nodes)

    def to_spec(self, n_steps: Optional[int] = None, n_inner_paths: Optional[int] = None,
                noise_refinement: Optional[int] = None) -> ProblemSpec:
        coeffs = self.coefficients()
        grid = make_grid(self.horizon, n_steps or self.n_steps)
        times = self.partition
        if times is None and coeffs.discrete_terminal:
            times = (0.0, self.horizon / 2, self.horizon)
        partition = Partition.from_times(grid, times) if times is not None else None
        return ProblemSpec(
            coeffs, self.horizon, tuple(self.x), grid, partition=partition,
            n_inner_paths=n_inner_paths or self.n_inner_paths, n_outer_paths=self.n_outer_paths,
            seed=self.seed, regression_degree=self.regression_degree, mollify_eps=self.mollify_eps,
            noise_mode=self.noise_mode, noise_refinement=noise_refinement or self.noise_refinement,
            picard_iterations=self.picard_iterations)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None or (isinstance(value, tuple) and not value and f.name != "x"):
                continue
            lines.append(f"{f.name} = {_format(f.name, value)}")
        return "\n".join(lines) + "\n"

    def params_hash(self) -> str:
        """Digest of the content that determines results (output path excluded)."""
        body = self.replace(output=None).to_text()
        return hashlib.sha256(body.encode()).hexdigest()[:16]


def _format(name, value):
    if name == "ladder":
        return ", ".join(f"{n}:{m}" for n, m in value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT = {"dim", "terminal_nodes", "n_steps", "n_inner_paths", "n_outer_paths", "seed", "regression_degree",
        "noise_refinement", "picard_iterations", "pde_n_time"}
_FLOAT = {"horizon", "mollify_eps", "tolerance", "pde_h"}
_TUPLE = {"x", "partition", "s_times"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if key in _FLOAT:
            return float(raw)
        if key in _TUPLE:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if key == "ladder":
            rungs = []
            for item in raw.split(","):
                n, m = item.split(":")
                rungs.append((int(n), int(float(m))))
            return tuple(rungs)
        if key == "enumerate":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def read_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


def write_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config.to_text())
