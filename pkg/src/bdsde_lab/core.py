"""Problem description, time grid, keyed noise and coefficient smoothing.

Clock convention
----------------
Public indices live on the *model clock* ``s`` in ``[0, t]``: the forward
diffusion starts at ``s = t`` from ``x`` and runs down to ``s = 0``, where the
backward equation carries its terminal datum.  Every array is stored on the
*simulation clock* ``tau = t - s`` with step index ``k`` (``tau_k = k * delta``),
so ``k = 0`` is the starting point of ``X`` and ``k = n_steps`` is where the
terminal datum lives.  :func:`tau_index` is the one conversion point.

Increment ``k`` of a noise path is the model-clock increment over
``[s_{n-k-1}, s_{n-k}]``, i.e. ``W(s_{n-k}) - W(s_{n-k-1})``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ValidationError

_MASK31 = (1 << 31) - 1
_MASK64 = (1 << 64) - 1
_STREAM_B = 1
_STREAM_W = 2


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def delta(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        # dividing first keeps the last node exactly at the horizon
        return self.horizon * (np.arange(self.n_steps + 1) / self.n_steps)

    def time(self, s_index: int) -> float:
        return self.horizon * (s_index / self.n_steps)

    def index_of(self, s: float) -> int:
        """Grid index of time ``s``; raises if ``s`` is not a node."""
        j = int(round(s / self.delta))
        if j < 0 or j > self.n_steps or abs(j * self.delta - s) > 1e-9 * max(1.0, self.horizon):
            raise ValidationError(f"time {s} is not a node of the grid (delta={self.delta})")
        return j


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(horizon), n_steps)


def tau_index(grid: TimeGrid, s_index: int) -> int:
    """Simulation-clock step of the model-clock node ``s_index``."""
    if s_index < 0 or s_index > grid.n_steps:
        raise ValidationError(f"node index {s_index} outside 0..{grid.n_steps}")
    return grid.n_steps - s_index


@dataclass(frozen=True)
class Partition:
    """Model-clock partition ``0 = t_0 < ... < t_n = t`` aligned with grid nodes."""

    grid: TimeGrid
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) < 2 or idx[0] != 0 or idx[-1] != self.grid.n_steps:
            raise ValidationError(f"partition must start at 0 and end at {self.grid.n_steps}: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError(f"partition indices must be strictly increasing: {idx}")

    @classmethod
    def from_times(cls, grid: TimeGrid, times: Sequence[float]) -> "Partition":
        return cls(grid, tuple(grid.index_of(s) for s in times))

    @property
    def node_times(self) -> np.ndarray:
        return np.array([self.grid.time(i) for i in self.indices])

    @property
    def n_intervals(self) -> int:
        return len(self.indices) - 1

    def interval_of(self, s_index: int) -> int:
        """Interval number ``i`` with ``t_{i-1} < s < t_i``; raises at a node."""
        if s_index in self.indices:
            raise ValidationError(
                f"node {s_index} is a partition node; evaluate the left/right limits at "
                f"{s_index - 1} and {s_index + 1} instead")
        for i in range(1, len(self.indices)):
            if self.indices[i - 1] < s_index < self.indices[i]:
                return i
        raise ValidationError(f"node {s_index} outside the partition range")


# Coefficient calling conventions (m = ensemble size, d = dimension):
#   drift(t, x)            x (m, d)            -> (m, d)
#   diffusion(t, x)                            -> (m, d, d)
#   driver(t, x, y, z)     y (m,), z (m, d)    -> (m,)
#   noise(t, x, y)                             -> (m, d)
#   terminal(x)            x (m, d)            -> (m,)
#   terminal(xs)           xs (m, n+1, d)      -> (m,)   discrete terminal
# Partials: drift_x (m,d,d) [i,j] = d b_i / d x_j; diffusion_x (m,d,d,d)
# [i,j,k] = d sigma_ij / d x_k; driver_x/driver_z (m,d); driver_y (m,);
# noise_x (m,d,d) [j,i] = d g_j / d x_i; noise_y (m,d); terminal_x (m,d) or
# (m,n+1,d) for a discrete terminal.

@dataclass(frozen=True)
class CoefficientSet:
    dim: int
    drift: Callable
    diffusion: Callable
    driver: Callable
    noise: Callable
    terminal: Callable
    terminal_nodes: Optional[int] = None
    drift_x: Optional[Callable] = None
    diffusion_x: Optional[Callable] = None
    driver_x: Optional[Callable] = None
    driver_y: Optional[Callable] = None
    driver_z: Optional[Callable] = None
    noise_x: Optional[Callable] = None
    noise_y: Optional[Callable] = None
    terminal_x: Optional[Callable] = None
    lipschitz_K: float = 1.0
    ellipticity_c: float = 1.0
    smooth: bool = True
    label: str = ""

    @property
    def discrete_terminal(self) -> bool:
        return self.terminal_nodes is not None

    def has_partials(self, *names: str) -> bool:
        return all(getattr(self, n) is not None for n in names)

    def replace(self, **changes) -> "CoefficientSet":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ProblemSpec:
    coefficients: CoefficientSet
    t: float
    x: tuple
    grid: TimeGrid
    partition: Optional[Partition] = None
    n_inner_paths: int = 1000
    n_outer_paths: int = 1
    seed: int = 0
    regression_degree: int = 3
    mollify_eps: Optional[float] = None
    noise_mode: str = "gaussian"
    noise_refinement: int = 1
    fd_fallback: bool = True
    picard_iterations: int = 0
    cond_max: float = 1e10

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "x", tuple(float(v) for v in x))
        d = self.coefficients.dim
        if len(self.x) != d:
            raise ValidationError(f"initial point has dimension {len(self.x)}, coefficients {d}")
        if abs(self.grid.horizon - self.t) > 1e-12 * max(1.0, self.t):
            raise ValidationError(f"grid horizon {self.grid.horizon} differs from start time {self.t}")
        if self.n_inner_paths < 2:
            raise ValidationError("n_inner_paths must be at least 2")
        if self.n_outer_paths < 1:
            raise ValidationError("n_outer_paths must be at least 1")
        if self.regression_degree < 0:
            raise ValidationError("regression_degree must be non-negative")
        if self.noise_mode not in ("gaussian", "rademacher"):
            raise ValidationError(f"unknown noise mode {self.noise_mode!r}")
        if self.noise_refinement < 1 or (self.noise_mode == "rademacher" and self.noise_refinement != 1):
            raise ValidationError("noise_refinement must be >= 1 (and 1 in rademacher mode)")
        if self.mollify_eps is not None and self.mollify_eps < 0:
            raise ValidationError("mollify_eps must be non-negative")
        if self.coefficients.discrete_terminal:
            if self.partition is None:
                raise ValidationError("a discrete terminal needs a partition")
            # l may omit trailing nodes; the last one (s = t) is the deterministic start
            if not 1 <= self.coefficients.terminal_nodes <= len(self.partition.indices):
                raise ValidationError(
                    f"terminal takes {self.coefficients.terminal_nodes} nodes, "
                    f"partition has {len(self.partition.indices)}")
        if self.partition is not None and self.partition.grid != self.grid:
            raise ValidationError("partition is defined on a different grid")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must fit in 64 bits")

    @property
    def dim(self) -> int:
        return self.coefficients.dim

    @property
    def x0(self) -> np.ndarray:
        return np.array(self.x)

    @property
    def start(self) -> tuple:
        return (self.t, self.x)

    def model_time(self, k: int) -> float:
        """Model-clock time of simulation step ``k``."""
        return self.t * (self.grid.n_steps - k) / self.grid.n_steps

    def replace(self, **changes) -> "ProblemSpec":
        if "t" in changes and "grid" not in changes:
            changes["grid"] = TimeGrid(changes["t"], self.grid.n_steps)
        if "grid" in changes and "partition" not in changes and self.partition is not None:
            old = self.partition
            ratio = changes["grid"].n_steps / old.grid.n_steps
            changes["partition"] = Partition(changes["grid"], tuple(int(round(i * ratio)) for i in old.indices))
        return dataclasses.replace(self, **changes)

    def effective_coefficients(self) -> CoefficientSet:
        """Coefficients after optional Gaussian smoothing."""
        if self.mollify_eps:
            return mollify(self.coefficients, self.mollify_eps)
        return self.coefficients


@dataclass(frozen=True)
class NoisePath:
    """One W-path and the B-path it is paired with, as increments."""

    w_increments: np.ndarray
    b_increments: np.ndarray
    outer_id: int = 0
    inner_id: int = 0

    @property
    def w_cumulative(self) -> np.ndarray:
        """Simulation-clock partial sums, starting from 0."""
        return _cumulative(self.w_increments)

    @property
    def b_cumulative(self) -> np.ndarray:
        return _cumulative(self.b_increments)

    def b_model_path(self) -> np.ndarray:
        """``B(s_j) - B(0)`` for model-clock nodes ``j = 0..n``."""
        return _model_path(self.b_increments)

    def w_model_path(self) -> np.ndarray:
        return _model_path(self.w_increments)


@dataclass(frozen=True)
class NoiseEnsemble:
    """Inner W-paths sharing one frozen B-path."""

    w_increments: np.ndarray          # (m, n, d)
    b_increments: np.ndarray          # (n, d)
    outer_id: int
    inner_ids: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return self.w_increments.shape[0]

    def path(self, i: int) -> NoisePath:
        return NoisePath(self.w_increments[i], self.b_increments, self.outer_id, int(self.inner_ids[i]))


def _cumulative(inc: np.ndarray) -> np.ndarray:
    out = np.zeros((inc.shape[0] + 1,) + inc.shape[1:])
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def _model_path(inc: np.ndarray) -> np.ndarray:
    # B(s_j) = sum of increments k = n-j .. n-1
    rev = _cumulative(inc[::-1])
    return rev


def _key(seed: int, stream: int, outer_id: int, inner_id: int) -> np.ndarray:
    if outer_id > _MASK31 or inner_id > _MASK31:
        raise ValidationError("path ids must be below 2**31")
    word = (stream << 62) | (outer_id << 31) | inner_id
    return np.array([int(seed) & _MASK64, word], dtype=np.uint64)


def _draw(key: list, n: int, d: int, mode: str, delta: float, refinement: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=key))
    if mode == "rademacher":
        signs = gen.integers(0, 2, size=(n, d)) * 2 - 1
        return signs * np.sqrt(delta)
    fine = gen.standard_normal((n * refinement, d)) * np.sqrt(delta / refinement)
    if refinement == 1:
        return fine
    return fine.reshape(n, refinement, d).sum(axis=1)


def _check_ids(spec: ProblemSpec, outer_id: int, inner_id: Optional[int] = None):
    if not 0 <= outer_id < spec.n_outer_paths:
        raise ValidationError(f"outer id {outer_id} outside 0..{spec.n_outer_paths - 1}")
    if inner_id is not None and not 0 <= inner_id < spec.n_inner_paths:
        raise ValidationError(f"inner id {inner_id} outside 0..{spec.n_inner_paths - 1}")


def sample_b_increments(spec: ProblemSpec, outer_id: int) -> np.ndarray:
    _check_ids(spec, outer_id)
    g = spec.grid
    return _draw(_key(spec.seed, _STREAM_B, outer_id, 0), g.n_steps, spec.dim,
                 spec.noise_mode, g.delta, spec.noise_refinement)


def sample_noise(spec: ProblemSpec, outer_id: int, inner_id: int) -> NoisePath:
    """Keyed draw: B depends on (seed, outer_id), W on (seed, outer_id, inner_id)."""
    _check_ids(spec, outer_id, inner_id)
    g = spec.grid
    w = _draw(_key(spec.seed, _STREAM_W, outer_id, inner_id), g.n_steps, spec.dim,
              spec.noise_mode, g.delta, spec.noise_refinement)
    return NoisePath(w, sample_b_increments(spec, outer_id), outer_id, inner_id)


def sample_ensemble(spec: ProblemSpec, outer_id: int, inner_ids: Optional[Sequence[int]] = None,
                    b_increments: Optional[np.ndarray] = None, threads: int = 1) -> NoiseEnsemble:
    """Stack of :func:`sample_noise` draws sharing the frozen B-path ``outer_id``.

    Bit-identical to calling :func:`sample_noise` per inner id, for any
    ``threads``.  ``b_increments`` overrides the keyed B-path.
    """
    if inner_ids is None:
        inner_ids = np.arange(spec.n_inner_paths)
    inner_ids = np.asarray(inner_ids, dtype=np.int64)
    _check_ids(spec, outer_id)
    if len(inner_ids) and (inner_ids.min() < 0 or inner_ids.max() >= spec.n_inner_paths):
        raise ValidationError("inner ids outside the configured count")
    g = spec.grid
    out = np.empty((len(inner_ids), g.n_steps, spec.dim))

    def fill(chunk):
        for pos in chunk:
            out[pos] = _draw(_key(spec.seed, _STREAM_W, outer_id, int(inner_ids[pos])), g.n_steps,
                             spec.dim, spec.noise_mode, g.delta, spec.noise_refinement)

    positions = np.arange(len(inner_ids))
    if threads > 1 and len(inner_ids) > 1000:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, np.array_split(positions, threads)))
    else:
        fill(positions)
    if b_increments is None:
        b_increments = sample_b_increments(spec, outer_id)
    b_increments = np.asarray(b_increments, dtype=float).reshape(g.n_steps, spec.dim)
    return NoiseEnsemble(out, b_increments, outer_id, inner_ids)


def enumerate_ensemble(spec: ProblemSpec, b_increments: np.ndarray) -> NoiseEnsemble:
    """Every Rademacher W-path, in lexicographic order of the sign pattern.

    Path ``p`` has its step-``k`` signs in bits ``d*(n-1-k) ..`` of ``p``, so the
    paths sharing the first ``k`` steps form contiguous blocks.
    """
    n, d = spec.grid.n_steps, spec.dim
    if n * d > 20:
        raise ValidationError("enumeration limited to n_steps * dim <= 20")
    n_paths = 2 ** (n * d)
    bits = (np.arange(n_paths)[:, None] >> np.arange(n * d - 1, -1, -1)[None, :]) & 1
    w = (1 - 2 * bits).reshape(n_paths, n, d) * np.sqrt(spec.grid.delta)
    b = np.asarray(b_increments, dtype=float).reshape(n, d)
    return NoiseEnsemble(w.astype(float), b, 0, np.arange(n_paths))


def coarsen_increments(inc: np.ndarray, factor: int) -> np.ndarray:
    """Sum blocks of ``factor`` consecutive increments along the step axis."""
    inc = np.asarray(inc)
    axis = inc.ndim - 2
    n = inc.shape[axis]
    if n % factor:
        raise ValidationError(f"{n} steps cannot be coarsened by {factor}")
    shape = inc.shape[:axis] + (n // factor, factor) + inc.shape[axis + 1:]
    return inc.reshape(shape).sum(axis=axis + 1)


# ---------------------------------------------------------------------------
# Gaussian smoothing

def _gauss_hermite(n_per_dim: int, m: int):
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_per_dim)
    weights = weights / weights.sum()
    grids = np.meshgrid(*([nodes] * m), indexing="ij")
    wgrids = np.meshgrid(*([weights] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, w


_MAX_NODES_PER_DIM = 256   # hermegauss weights overflow somewhere above this


def _nodes_per_dim(n_nodes: int, m: int) -> int:
    return min(_MAX_NODES_PER_DIM, max(2, int(round(n_nodes ** (1.0 / m)))))


def mollify(coeffs: CoefficientSet, eps: float, n_nodes: int = 64) -> CoefficientSet:
    """Gaussian smoothing of the driver and terminal in their spatial arguments.

    ``l_eps(x) = E l(x + eps Z)`` and ``f_eps(t, x, y, z) = E f(t, x + eps Z1,
    y + eps Z2, z + eps Z3)`` by tensor Gauss-Hermite quadrature with about
    ``n_nodes`` points in total.  Partials use the Gaussian score identity
    ``d/dx E l(x + eps Z) = E[l(x + eps Z) Z] / eps``, so they need no
    derivative of the original functions.  The noise coefficient is untouched.
    """
    if eps is None or not eps > 0:
        raise ValidationError(f"mollification width must be positive, got {eps}")
    d = coeffs.dim
    f = coeffs.driver
    m_f = 2 * d + 1
    pf, wf = _gauss_hermite(_nodes_per_dim(n_nodes, m_f), m_f)

    def _f_samples(t, x, y, z):
        x = np.asarray(x, float)
        m = x.shape[0]
        q = len(wf)
        xs = (x[:, None, :] + eps * pf[None, :, :d]).reshape(m * q, d)
        ys = (np.broadcast_to(np.asarray(y, float), (m,))[:, None] + eps * pf[None, :, d]).reshape(m * q)
        zs = (np.asarray(z, float)[:, None, :] + eps * pf[None, :, d + 1:]).reshape(m * q, d)
        return np.asarray(f(t, xs, ys, zs), float).reshape(m, q)

    def driver(t, x, y, z):
        return _f_samples(t, x, y, z) @ wf

    def _f_grad(t, x, y, z):
        vals = _f_samples(t, x, y, z) * wf[None, :]
        return vals @ pf / eps          # (m, 2d+1)

    def driver_x(t, x, y, z):
        return _f_grad(t, x, y, z)[:, :d]

    def driver_y(t, x, y, z):
        return _f_grad(t, x, y, z)[:, d]

    def driver_z(t, x, y, z):
        return _f_grad(t, x, y, z)[:, d + 1:]

    lt = coeffs.terminal
    if coeffs.discrete_terminal:
        m_l = d * coeffs.terminal_nodes
        shape = (coeffs.terminal_nodes, d)
    else:
        m_l = d
        shape = (d,)
    pl, wl = _gauss_hermite(_nodes_per_dim(n_nodes, m_l), m_l)

    def _l_samples(x):
        x = np.asarray(x, float)
        m = x.shape[0]
        q = len(wl)
        shifted = x.reshape(m, 1, m_l) + eps * pl[None]
        return np.asarray(lt(shifted.reshape((m * q,) + shape)), float).reshape(m, q)

    def terminal(x):
        return _l_samples(x) @ wl

    def terminal_x(x):
        x = np.asarray(x, float)
        g = (_l_samples(x) * wl[None, :]) @ pl / eps
        return g.reshape(x.shape)

    return coeffs.replace(driver=driver, driver_x=driver_x, driver_y=driver_y, driver_z=driver_z,
                          terminal=terminal, terminal_x=terminal_x, smooth=True,
                          label=(coeffs.label + f" mollified eps={eps}").strip())


# ---------------------------------------------------------------------------
# Sampled assumption checks

@dataclass
class ProbeSet:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def draw(cls, dim: int, horizon: float, n: int = 256, radius: float = 4.0, seed: int = 7):
        rng = np.random.default_rng(seed)
        return cls(t=rng.uniform(0.0, horizon, n),
                   x=rng.uniform(-radius, radius, (n, dim)),
                   y=rng.uniform(-radius, radius, n),
                   z=rng.uniform(-radius, radius, (n, dim)))


def _per_time(fn, t, *args):
    """Evaluate a coefficient row by row when probe times differ."""
    return np.stack([np.asarray(fn(float(ti), *(a[i:i + 1] for a in args)))[0] for i, ti in enumerate(t)])


def min_ellipticity_ratio(coeffs: CoefficientSet, probes: ProbeSet, seed: int = 11) -> float:
    """Smallest ``xi' sigma sigma' xi / |xi|^2`` over the probe set."""
    rng = np.random.default_rng(seed)
    sig = _per_time(coeffs.diffusion, probes.t, probes.x)
    xi = rng.standard_normal((len(probes.t), coeffs.dim))
    a = np.einsum("ni,nij->nj", xi, sig)
    ratio_random = np.sum(a * a, axis=1) / np.sum(xi * xi, axis=1)
    smin = np.linalg.svd(sig, compute_uv=False)[:, -1]
    return float(min(ratio_random.min(), (smin ** 2).min()))


def check_ellipticity(coeffs: CoefficientSet, probes: ProbeSet) -> bool:
    return min_ellipticity_ratio(coeffs, probes) >= coeffs.ellipticity_c * (1 - 1e-12)


def lipschitz_quotients(coeffs: CoefficientSet, probes: ProbeSet, h: float = 1e-3, seed: int = 13) -> dict:
    """Largest finite-difference quotient of b, sigma, f and l over probe pairs."""
    rng = np.random.default_rng(seed)
    n, d = probes.x.shape
    dx = rng.standard_normal((n, d))
    dx *= h / np.linalg.norm(dx, axis=1, keepdims=True)
    x2 = probes.x + dx
    out = {}
    b1 = _per_time(coeffs.drift, probes.t, probes.x)
    b2 = _per_time(coeffs.drift, probes.t, x2)
    out["drift"] = float(np.max(np.linalg.norm(b2 - b1, axis=1)) / h)
    s1 = _per_time(coeffs.diffusion, probes.t, probes.x)
    s2 = _per_time(coeffs.diffusion, probes.t, x2)
    out["diffusion"] = float(np.max(np.linalg.norm((s2 - s1).reshape(n, -1), axis=1)) / h)
    dy = rng.choice([-h, h], size=n)
    dz = rng.standard_normal((n, d))
    dz *= h / np.linalg.norm(dz, axis=1, keepdims=True)
    f1 = _per_time(coeffs.driver, probes.t, probes.x, probes.y, probes.z)
    f2 = _per_time(coeffs.driver, probes.t, x2, probes.y + dy, probes.z + dz)
    step = np.sqrt(np.sum(dx * dx, axis=1) + dy * dy + np.sum(dz * dz, axis=1))
    out["driver"] = float(np.max(np.abs(f2 - f1) / step))
    if coeffs.discrete_terminal:
        xs = np.repeat(probes.x[:, None, :], coeffs.terminal_nodes, axis=1)
        dxs = rng.standard_normal(xs.shape)
        dxs *= h / np.linalg.norm(dxs.reshape(n, -1), axis=1)[:, None, None]
        l1, l2 = coeffs.terminal(xs), coeffs.terminal(xs + dxs)
    else:
        l1, l2 = coeffs.terminal(probes.x), coeffs.terminal(x2)
    out["terminal"] = float(np.max(np.abs(np.asarray(l2) - np.asarray(l1))) / h)
    return out


def check_lipschitz(coeffs: CoefficientSet, probes: ProbeSet, slack: float = 0.05) -> bool:
    q = lipschitz_quotients(coeffs, probes)
    return all(v <= coeffs.lipschitz_K * (1 + slack) for v in q.values())


def partial_mismatch(coeffs: CoefficientSet, probes: ProbeSet, h: float = 1e-5) -> dict:
    """Max abs difference between each supplied partial and a central difference."""
    d = coeffs.dim
    t0 = float(probes.t[0])
    x, y, z = probes.x, probes.y, probes.z
    eye = np.eye(d)
    out = {}

    def cd(fn):
        return (np.asarray(fn(h), float) - np.asarray(fn(-h), float)) / (2 * h)

    if coeffs.drift_x is not None:
        fd = np.stack([cd(lambda e: coeffs.drift(t0, x + e * eye[j])) for j in range(d)], axis=-1)
        out["drift_x"] = float(np.max(np.abs(fd - coeffs.drift_x(t0, x))))
    if coeffs.diffusion_x is not None:
        fd = np.stack([cd(lambda e: coeffs.diffusion(t0, x + e * eye[j])) for j in range(d)], axis=-1)
        out["diffusion_x"] = float(np.max(np.abs(fd - coeffs.diffusion_x(t0, x))))
    if coeffs.driver_x is not None:
        fd = np.stack([cd(lambda e: coeffs.driver(t0, x + e * eye[j], y, z)) for j in range(d)], axis=-1)
        out["driver_x"] = float(np.max(np.abs(fd - coeffs.driver_x(t0, x, y, z))))
    if coeffs.driver_y is not None:
        fd = cd(lambda e: coeffs.driver(t0, x, y + e, z))
        out["driver_y"] = float(np.max(np.abs(fd - coeffs.driver_y(t0, x, y, z))))
    if coeffs.driver_z is not None:
        fd = np.stack([cd(lambda e: coeffs.driver(t0, x, y, z + e * eye[j])) for j in range(d)], axis=-1)
        out["driver_z"] = float(np.max(np.abs(fd - coeffs.driver_z(t0, x, y, z))))
    if coeffs.noise_x is not None:
        fd = np.stack([cd(lambda e: coeffs.noise(t0, x + e * eye[j], y)) for j in range(d)], axis=-1)
        out["noise_x"] = float(np.max(np.abs(fd - coeffs.noise_x(t0, x, y))))
    if coeffs.noise_y is not None:
        fd = cd(lambda e: coeffs.noise(t0, x, y + e))
        out["noise_y"] = float(np.max(np.abs(fd - coeffs.noise_y(t0, x, y))))
    if coeffs.terminal_x is not None:
        if coeffs.discrete_terminal:
            xs = np.repeat(x[:, None, :], coeffs.terminal_nodes, axis=1)
            xs = xs + 0.1 * np.arange(coeffs.terminal_nodes)[None, :, None]
            fd = np.zeros(xs.shape)
            for a in range(coeffs.terminal_nodes):
                for j in range(d):
                    e = np.zeros(xs.shape[1:])
                    e[a, j] = 1.0
                    fd[:, a, j] = cd(lambda s: coeffs.terminal(xs + s * e))
            out["terminal_x"] = float(np.max(np.abs(fd - coeffs.terminal_x(xs))))
        else:
            fd = np.stack([cd(lambda e: coeffs.terminal(x + e * eye[j])) for j in range(d)], axis=-1)
            out["terminal_x"] = float(np.max(np.abs(fd - coeffs.terminal_x(x))))
    return out
