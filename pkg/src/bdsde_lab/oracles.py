"""Reference solvers used to validate the Monte-Carlo estimators.

None of this reuses the regression or weight code; only core types are shared.

* :func:`pde_solve` -- Crank-Nicolson for ``u_s = 1/2 sigma^2 u_xx + b u_x + f(s, x, u, u_x sigma)``
  with ``u(0, .) = l`` (d = 1), marching in the model time ``s``.
* :func:`spde_solve_pathwise` -- the same step followed by ``u += g(s, x, u) dB``.
* :func:`fd_gradient` -- central differences.
* :func:`tree_enumerate` -- exact recursion over all Rademacher W-outcomes.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .core import CoefficientSet, ProblemSpec, sample_b_increments
from .errors import UnsupportedError, ValidationError

CFL_WARN = 1e4


@dataclass
class GridFunction:
    """Values on a uniform odd-sized grid centred at ``center``."""

    center: float
    half_width: float
    values: np.ndarray
    time: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) % 2 == 0:
            raise ValidationError("grid functions need an odd node count")

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.center - self.half_width, self.center + self.half_width, self.count)

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / (self.count - 1)

    def __call__(self, x):
        return CubicSpline(self.x_nodes, self.values)(x)

    def write(self, out: TextIO) -> None:
        extra = " ".join(f"{k}={v}" for k, v in self.params.items())
        out.write(f"# time={self.time!r} center={self.center!r} half_width={self.half_width!r} {extra}\n")
        out.write("x value\n")
        for xv, uv in zip(self.x_nodes, self.values):
            out.write(f"{xv:.17g} {uv:.17g}\n")


def _scalar(fn, *args):
    return np.asarray(fn(*args), float)


def _sigma_scale(coeffs: CoefficientSet, horizon: float, center: float) -> float:
    xs = center + np.linspace(-3, 3, 13)[:, None]
    vals = [np.abs(_scalar(coeffs.diffusion, s, xs)).max() for s in (0.0, horizon)]
    return max(max(vals), 1e-12)


class _CrankNicolson:
    """CN stepper for the 1-d generator with Dirichlet ends held fixed."""

    def __init__(self, coeffs: CoefficientSet, x: np.ndarray, delta: float, correctors: int = 2):
        self.c = coeffs
        self.x = x
        self.xc = x[:, None]
        self.h = x[1] - x[0]
        self.delta = delta
        self.correctors = correctors
        self._zero_z = np.zeros((len(x), 1))

    def _operator(self, s):
        sig = _scalar(self.c.diffusion, s, self.xc).reshape(-1)
        b = _scalar(self.c.drift, s, self.xc).reshape(-1)
        h = self.h
        diff = 0.5 * sig ** 2 / h ** 2
        lo = diff - b / (2 * h)
        up = diff + b / (2 * h)
        mid = -2 * diff
        return lo, mid, up, sig

    def _apply(self, lo, mid, up, u):
        out = np.zeros_like(u)
        out[1:-1] = lo[1:-1] * u[:-2] + mid[1:-1] * u[1:-1] + up[1:-1] * u[2:]
        return out

    def _source(self, s, u, sig):
        ux = np.zeros_like(u)
        ux[1:-1] = (u[2:] - u[:-2]) / (2 * self.h)
        z = (ux * sig)[:, None]
        src = _scalar(self.c.driver, s, self.xc, u, z).reshape(-1)
        src = np.broadcast_to(src, u.shape).copy()
        src[0] = src[-1] = 0.0
        return src

    def step(self, s0: float, u: np.ndarray, theta: float = 0.5) -> np.ndarray:
        """Advance from model time ``s0`` to ``s0 + delta``."""
        s1 = s0 + self.delta
        lo, mid, up, sig = self._operator(s0 + 0.5 * self.delta)
        rhs = u + (1 - theta) * self.delta * self._apply(lo, mid, up, u)
        ab = np.zeros((3, len(u)))
        ab[0, 2:] = -theta * self.delta * up[1:-1]
        ab[1, :] = 1.0
        ab[1, 1:-1] -= theta * self.delta * mid[1:-1]
        ab[2, :-2] = -theta * self.delta * lo[1:-1]
        f0 = self._source(s0, u, _scalar(self.c.diffusion, s0, self.xc).reshape(-1))
        new = solve_banded((1, 1), ab, rhs + self.delta * f0)
        sig1 = _scalar(self.c.diffusion, s1, self.xc).reshape(-1)
        for _ in range(self.correctors):
            f1 = self._source(s1, new, sig1)
            new = solve_banded((1, 1), ab, rhs + self.delta * 0.5 * (f0 + f1))
        return new


def _setup(coeffs, horizon, center, half_width, h, n_time):
    if coeffs.dim != 1:
        raise UnsupportedError("the PDE oracles are one-dimensional")
    if coeffs.discrete_terminal:
        raise UnsupportedError("the PDE oracles need a single-point terminal")
    if horizon <= 0 or n_time < 1 or h <= 0:
        raise ValidationError("horizon, time steps and spacing must be positive")
    if half_width is None:
        half_width = 6 * _sigma_scale(coeffs, horizon, center) * np.sqrt(horizon) + 2.0
    half = int(np.ceil(half_width / h))
    x = center + h * np.arange(-half, half + 1)
    delta = horizon / n_time
    if delta / h ** 2 > CFL_WARN:
        warnings.warn(f"delta/h^2 = {delta / h ** 2:.3g} exceeds {CFL_WARN}; CN stays stable but loses accuracy",
                      RuntimeWarning, stacklevel=3)
    return x, delta, half * h


def _outputs(output_times, horizon, n_time):
    times = [horizon] if output_times is None else list(output_times)
    steps = {}
    for s in times:
        k = s / horizon * n_time
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) <= n_time:
            raise ValidationError(f"output time {s} is not on the time grid")
        steps[int(round(k))] = s
    return steps


def spde_solve_pathwise(coeffs: CoefficientSet, horizon: float, b_increments: Optional[np.ndarray] = None,
                        center: float = 0.0, half_width: Optional[float] = None, h: float = 2 ** -7,
                        n_time: int = 100, output_times: Optional[Sequence[float]] = None,
                        correctors: int = 2) -> list:
    """Lie splitting: a CN step of the deterministic part, then ``u += g(s_k, x, u) dB_k``.

    ``b_increments[k]`` is the B-increment over the model interval
    ``[s_k, s_{k+1}]``; with ``None`` the stochastic update is skipped.
    Returns one :class:`GridFunction` per output time (default: the horizon).
    """
    x, delta, hw = _setup(coeffs, horizon, center, half_width, h, n_time)
    if b_increments is not None:
        b_increments = np.asarray(b_increments, float).reshape(n_time, -1)
        if b_increments.shape[1] != 1:
            raise UnsupportedError("the PDE oracles are one-dimensional")
    stepper = _CrankNicolson(coeffs, x, delta, correctors)
    wanted = _outputs(output_times, horizon, n_time)
    params = {"h": h, "n_time": n_time}
    u = _scalar(coeffs.terminal, x[:, None]).reshape(-1).copy()
    out = []
    if 0 in wanted:
        out.append(GridFunction(center, hw, u.copy(), wanted[0], params))
    for k in range(n_time):
        s = k * delta
        u = stepper.step(s, u)
        if b_increments is not None:
            g = _scalar(coeffs.noise, s, x[:, None], u).reshape(len(x), -1)[:, 0]
            u = u + g * b_increments[k, 0]
        if k + 1 in wanted:
            out.append(GridFunction(center, hw, u.copy(), wanted[k + 1], params))
    return out


def pde_solve(coeffs: CoefficientSet, horizon: float, center: float = 0.0,
              half_width: Optional[float] = None, h: float = 2 ** -7, n_time: int = 100,
              output_times: Optional[Sequence[float]] = None, correctors: int = 2) -> list:
    """Crank-Nicolson solution with ``g`` ignored; far-field values frozen at ``l``."""
    return spde_solve_pathwise(coeffs, horizon, None, center, half_width, h, n_time, output_times, correctors)


def fd_gradient(field_fn: Union[Callable, GridFunction], x, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient.

    A :class:`GridFunction` accepts any array of points and returns the
    derivative at each; a callable takes a point ``x`` of shape ``(d,)``.
    """
    if h <= 0:
        raise ValidationError("fd_gradient needs h > 0")
    if isinstance(field_fn, GridFunction):
        x = np.asarray(x, float)
        return (field_fn(x + h) - field_fn(x - h)) / (2 * h)
    x = np.atleast_1d(np.asarray(x, float))
    out = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (float(field_fn(x + e)) - float(field_fn(x - e))) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# Rademacher tree

TREE_CAP = 16


@dataclass
class TreeResult:
    """Exact scheme values; path arrays follow the order of ``core.enumerate_ensemble``."""

    u: float
    y: np.ndarray                     # (2^(n d), n+1), simulation clock
    z: np.ndarray                     # (2^(n d), n+1, d)
    grad_u: Optional[np.ndarray] = None
    jumps: dict = field(default_factory=dict)      # partition position -> (2^(n d), d) delta Z
    alpha: dict = field(default_factory=dict)      # partition position -> (2^(n d), n+1, d)

    def delta_z(self, position: int) -> np.ndarray:
        return self.jumps[position].mean(axis=0)


class _Tree:
    def __init__(self, spec: ProblemSpec, b_inc: np.ndarray):
        self.spec = spec
        self.c = spec.effective_coefficients()
        self.n = spec.grid.n_steps
        self.d = spec.dim
        self.delta = spec.grid.delta
        self.b = b_inc
        self.signs = [np.array(p, float) for p in itertools.product((1.0, -1.0), repeat=self.d)]
        part = spec.partition
        self.nodes_tau = [] if part is None else [self.n - j for j in part.indices]
        self.n_paths = 2 ** (self.n * self.d)
        self.y = np.empty((self.n_paths, self.n + 1))
        self.z = np.empty((self.n_paths, self.n + 1, self.d))
        self.records = {}             # (lo, k) -> node data for the linear systems

    def _s(self, k):
        return self.spec.t * (self.n - k) / self.n

    def _row(self, v):
        return np.asarray(v, float).reshape(1, -1)

    def _terminal(self, x, hist):
        c = self.c
        if c.discrete_terminal:
            xs = np.array([hist[kj] for kj in self.nodes_tau[:c.terminal_nodes]])[None]
            val = float(np.asarray(c.terminal(xs)).reshape(-1)[0])
            grad = np.asarray(c.terminal_x(xs), float).reshape(c.terminal_nodes, self.d)
            z = grad[0] @ np.asarray(c.diffusion(self._s(self.n), self._row(x)), float)[0]
            return val, z, grad
        val = float(np.asarray(c.terminal(self._row(x))).reshape(-1)[0])
        grad = np.asarray(c.terminal_x(self._row(x)), float).reshape(self.d)
        z = grad @ np.asarray(c.diffusion(self._s(self.n), self._row(x)), float)[0]
        return val, z, grad[None]

    def solve(self, x, k=0, lo=0, hist=None, grad=None):
        """Returns ``(Y_k, Z_k)`` at this node and fills the per-path arrays."""
        hist = dict(hist or {})
        if grad is None:
            grad = np.eye(self.d)
        if k in self.nodes_tau:
            hist[k] = x.copy()
            hist[("g", k)] = grad.copy()
        width = 2 ** (self.d * (self.n - k))
        if k == self.n:
            y, z, lgrad = self._terminal(x, hist)
            self.records[(lo, k)] = dict(x=x, y=y, z=z, hist=hist, grad=grad, lgrad=lgrad, children=[])
            self.y[lo:lo + width, k] = y
            self.z[lo:lo + width, k] = z
            return y, z
        s = self._s(k)
        xr = self._row(x)
        drift = np.asarray(self.c.drift(s, xr), float)[0]
        sig = np.asarray(self.c.diffusion(s, xr), float)[0]
        jac = self._jac(s, x)
        sq = np.sqrt(self.delta)
        child = width // len(self.signs)
        acc_y, acc_z, kids = 0.0, np.zeros(self.d), []
        s1 = self._s(k + 1)
        for j, eps in enumerate(self.signs):
            dw = eps * sq
            xc = x + drift * self.delta + sig @ dw
            gc = grad + (jac[0] * self.delta + np.einsum("ijk,j->ik", jac[1], dw)) @ grad
            yc, zc = self.solve(xc, k + 1, lo + j * child, hist, gc)
            f = float(np.asarray(self.c.driver(s1, self._row(xc), np.array([yc]), self._row(zc))).reshape(-1)[0])
            g = np.asarray(self.c.noise(s1, self._row(xc), np.array([yc])), float).reshape(self.d)
            acc_y += yc + f * self.delta + g @ self.b[k]
            acc_z += yc * dw
            kids.append((lo + j * child, dw, xc, yc, zc))
        y = acc_y / len(self.signs)
        z = acc_z / len(self.signs) / self.delta
        self.records[(lo, k)] = dict(x=x, y=y, z=z, hist=hist, grad=grad, children=kids)
        self.y[lo:lo + width, k] = y
        self.z[lo:lo + width, k] = z
        return y, z

    def _jac(self, s, x):
        """(b_x, sigma_x) at one point, analytic or by central differences."""
        c, d = self.c, self.d
        xr = self._row(x)
        if c.drift_x is not None and c.diffusion_x is not None:
            return np.asarray(c.drift_x(s, xr), float)[0], np.asarray(c.diffusion_x(s, xr), float)[0]
        bx = np.empty((d, d))
        sx = np.empty((d, d, d))
        for i in range(d):
            h = 1e-4 * (1 + abs(x[i]))
            e = np.zeros(d)
            e[i] = h
            bx[:, i] = (np.asarray(c.drift(s, self._row(x + e)))[0] - np.asarray(c.drift(s, self._row(x - e)))[0]) / (2 * h)
            sx[..., i] = (np.asarray(c.diffusion(s, self._row(x + e)))[0]
                          - np.asarray(c.diffusion(s, self._row(x - e)))[0]) / (2 * h)
        return bx, sx

    def alpha_system(self, position: int):
        """Exact recursion for the jump system of partition node ``position``."""
        ki = self.nodes_tau[position]
        alpha = np.empty((self.n_paths, self.n + 1, self.d))

        def rec(lo, k):
            node = self.records[(lo, k)]
            width = 2 ** (self.d * (self.n - k))
            if k == self.n:
                a = node["lgrad"][position] @ node["hist"][("g", ki)]
                b = np.zeros((self.d, self.d))
            else:
                acc_a = np.zeros(self.d)
                acc_b = np.zeros((self.d, self.d))
                s1 = self._s(k + 1)
                for clo, dw, xc, yc, zc in node["children"]:
                    ac, bc = rec(clo, k + 1)
                    xr, yr, zr = self._row(xc), np.array([yc]), self._row(zc)
                    fy = float(np.asarray(self.c.driver_y(s1, xr, yr, zr)).reshape(-1)[0])
                    fz = np.asarray(self.c.driver_z(s1, xr, yr, zr), float).reshape(self.d)
                    gy = np.asarray(self.c.noise_y(s1, xr, yr), float).reshape(self.d)
                    acc_a += ac + self.delta * (fy * ac + fz @ bc) + (gy @ self.b[k]) * ac
                    acc_b += np.outer(dw, ac)
                a = acc_a / len(self.signs)
                b = acc_b / len(self.signs) / self.delta
            alpha[lo:lo + width, k] = a
            return a, b

        rec(0, 0)
        jump = np.empty((self.n_paths, self.d))
        width = 2 ** (self.d * (self.n - ki))
        for lo in range(0, self.n_paths, width):
            node = self.records[(lo, ki)]
            sig = np.asarray(self.c.diffusion(self._s(ki), self._row(node["x"])), float)[0]
            jump[lo:lo + width] = alpha[lo, ki] @ np.linalg.inv(node["grad"]) @ sig
        return alpha, jump


def tree_enumerate(spec: ProblemSpec, b_increments: Optional[np.ndarray] = None, outer_id: int = 0,
                   gradient: bool = True, jumps: bool = True, bump: Optional[float] = None) -> TreeResult:
    """Exact backward recursion over all Rademacher W-outcomes for a frozen B-path."""
    if spec.noise_mode != "rademacher":
        raise ValidationError("tree enumeration needs rademacher noise")
    if spec.grid.n_steps * spec.dim > TREE_CAP:
        raise ValidationError(f"tree enumeration capped at n_steps * dim <= {TREE_CAP}")
    if spec.picard_iterations:
        raise UnsupportedError("the tree implements the explicit scheme only")
    if b_increments is None:
        b_increments = sample_b_increments(spec, outer_id)
    b_inc = np.asarray(b_increments, float).reshape(spec.grid.n_steps, spec.dim)
    tree = _Tree(spec, b_inc)
    u, _ = tree.solve(spec.x0.copy())
    res = TreeResult(u, tree.y, tree.z)
    if gradient:
        res.grad_u = np.empty(spec.dim)
        for i in range(spec.dim):
            h = bump if bump is not None else 1e-5 * (1 + abs(spec.x0[i]))
            e = np.zeros(spec.dim)
            e[i] = h
            up, _ = _Tree(spec, b_inc).solve(spec.x0 + e)
            dn, _ = _Tree(spec, b_inc).solve(spec.x0 - e)
            res.grad_u[i] = (up - dn) / (2 * h)
    if jumps and spec.coefficients.discrete_terminal:
        for pos in range(1, min(len(tree.nodes_tau) - 1, spec.coefficients.terminal_nodes)):
            res.alpha[pos], res.jumps[pos] = tree.alpha_system(pos)
    return res


def tree_unconditional(spec: ProblemSpec) -> float:
    """``E[u]`` over all Rademacher B-paths as well (n_steps * dim <= 6)."""
    n, d = spec.grid.n_steps, spec.dim
    if n * d > 6:
        raise ValidationError("unconditional enumeration capped at n_steps * dim <= 6")
    sq = np.sqrt(spec.grid.delta)
    vals = [tree_enumerate(spec, np.array(p, float).reshape(n, d) * sq, gradient=False, jumps=False).u
            for p in itertools.product((1.0, -1.0), repeat=n * d)]
    return float(np.mean(vals))
