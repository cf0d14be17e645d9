"""Euler-Maruyama simulation of the forward diffusion and its tangent flow.

Paths are produced on the simulation clock (see :mod:`bdsde_lab.core`), where
the backward Ito integral driving ``X`` becomes an ordinary left-point Ito sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, TextIO, Union

import numpy as np

from .core import NoiseEnsemble, NoisePath, ProblemSpec, tau_index
from .errors import ConfigurationError, SimulationError

SIGMA_COND_MAX = 1e12


@dataclass
class ForwardBundle:
    """Forward paths for an ensemble, indexed ``[path, k, ...]`` with ``k`` the simulation step.

    ``x_path[:, 0]`` is the starting point and ``grad_x_path[:, 0]`` the identity.
    """

    spec: ProblemSpec
    x_path: np.ndarray            # (m, n+1, d)
    grad_x_path: np.ndarray       # (m, n+1, d, d)
    grad_x_inv_path: np.ndarray   # (m, n+1, d, d)
    sigma_path: np.ndarray        # (m, n+1, d, d)
    _sigma_inv: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.x_path.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x_path.shape[1] - 1

    def x_at(self, s_index: int) -> np.ndarray:
        """X at model-clock node ``s_index`` for every path."""
        return self.x_path[:, tau_index(self.spec.grid, s_index)]

    def grad_at(self, s_index: int) -> np.ndarray:
        return self.grad_x_path[:, tau_index(self.spec.grid, s_index)]

    @property
    def sigma_inv_path(self) -> np.ndarray:
        """Inverse diffusion per node; raises naming the first singular node."""
        if self._sigma_inv is None:
            if self.sigma_path.shape[-1] == 1:
                smax = smin = np.abs(self.sigma_path[..., 0, 0])
            else:
                sv = np.linalg.svd(self.sigma_path, compute_uv=False)
                smax, smin = sv[..., 0], sv[..., -1]
            bad = ~(smin > smax / SIGMA_COND_MAX) | (smin == 0)
            if bad.any():
                p, k = np.argwhere(bad)[0]
                s_index = self.n_steps - k
                raise SimulationError(
                    f"diffusion is singular at node s_{s_index} (s={self.spec.grid.time(s_index):.6g}, "
                    f"path {p}): condition number above {SIGMA_COND_MAX:g}")
            self._sigma_inv = 1.0 / self.sigma_path if self.sigma_path.shape[-1] == 1 else np.linalg.inv(self.sigma_path)
        return self._sigma_inv


def _drift_jacobian(spec, coeffs, s, x):
    if coeffs.drift_x is not None:
        return np.asarray(coeffs.drift_x(s, x), float)
    if not spec.fd_fallback:
        raise ConfigurationError("drift partials missing and finite differences are disabled")
    m, d = x.shape
    h = 1e-4 * (1 + np.abs(x))
    out = np.empty((m, d, d))
    for j in range(d):
        e = np.zeros_like(x)
        e[:, j] = h[:, j]
        out[:, :, j] = (coeffs.drift(s, x + e) - coeffs.drift(s, x - e)) / (2 * h[:, j:j + 1])
    return out


def _diffusion_jacobian(spec, coeffs, s, x):
    if coeffs.diffusion_x is not None:
        return np.asarray(coeffs.diffusion_x(s, x), float)
    if not spec.fd_fallback:
        raise ConfigurationError("diffusion partials missing and finite differences are disabled")
    m, d = x.shape
    h = 1e-4 * (1 + np.abs(x))
    out = np.empty((m, d, d, d))
    for k in range(d):
        e = np.zeros_like(x)
        e[:, k] = h[:, k]
        out[..., k] = (coeffs.diffusion(s, x + e) - coeffs.diffusion(s, x - e)) / (2 * h[:, k, None, None])
    return out


def simulate_forward(spec: ProblemSpec, noise: Union[NoisePath, NoiseEnsemble],
                     x0: Optional[np.ndarray] = None, tangent: bool = True) -> ForwardBundle:
    """Euler step for X and the linearised Euler step for its tangent."""
    w = noise.w_increments
    if w.ndim == 2:
        w = w[None]
    m, n, d = w.shape
    if n != spec.grid.n_steps or d != spec.dim:
        raise SimulationError(f"noise shape {w.shape[1:]} does not match grid ({spec.grid.n_steps}, {spec.dim})")
    coeffs = spec.coefficients
    delta = spec.grid.delta
    x = np.empty((m, n + 1, d))
    sig = np.empty((m, n + 1, d, d))
    grad = np.empty((m, n + 1, d, d))
    start = spec.x0 if x0 is None else np.asarray(x0, float).reshape(d)
    x[:, 0] = start
    grad[:, 0] = np.eye(d)
    for k in range(n):
        s = spec.model_time(k)
        xk = x[:, k]
        sig[:, k] = coeffs.diffusion(s, xk)
        x[:, k + 1] = xk + np.asarray(coeffs.drift(s, xk), float) * delta + np.einsum("mij,mj->mi", sig[:, k], w[:, k])
        if tangent:
            jac = _drift_jacobian(spec, coeffs, s, xk) * delta
            jac = jac + np.einsum("mijk,mj->mik", _diffusion_jacobian(spec, coeffs, s, xk), w[:, k])
            grad[:, k + 1] = grad[:, k] + jac @ grad[:, k]
    sig[:, n] = coeffs.diffusion(spec.model_time(n), x[:, n])
    if tangent:
        if d == 1:
            if np.any(grad == 0):
                raise SimulationError("tangent process hit zero")
            inv = 1.0 / grad
        else:
            det = np.linalg.det(grad)
            if np.any(det == 0):
                p, k = np.argwhere(det == 0)[0]
                raise SimulationError(f"tangent process singular at node s_{n - k} (path {p})")
            inv = np.linalg.inv(grad)
    else:
        grad = np.broadcast_to(np.eye(d), (m, n + 1, d, d))
        inv = grad
    return ForwardBundle(spec, x, grad, inv, sig)


@dataclass
class TangentReport:
    max_product_deviation: float
    min_sigma_singular_value: float


def tangent_consistency_check(bundle: ForwardBundle) -> TangentReport:
    d = bundle.x_path.shape[-1]
    prod = bundle.grad_x_path @ bundle.grad_x_inv_path
    dev = float(np.max(np.abs(prod - np.eye(d))))
    smin = float(np.linalg.svd(bundle.sigma_path, compute_uv=False)[..., -1].min())
    return TangentReport(dev, smin)


def write_path_dump(bundle: ForwardBundle, out: TextIO, path_index: int = 0) -> None:
    """One whitespace-separated row per node: model time, X, tangent entries (row-major)."""
    d = bundle.x_path.shape[-1]
    cols = ["s"] + [f"x{i + 1}" for i in range(d)] + [f"gx{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    out.write("# forward path dump; path " f"{path_index}; model-clock order\n")
    out.write(" ".join(cols) + "\n")
    grid = bundle.spec.grid
    for j in range(grid.n_steps + 1):
        k = tau_index(grid, j)
        row = [grid.time(j), *bundle.x_path[path_index, k], *bundle.grad_x_path[path_index, k].ravel()]
        out.write(" ".join(f"{v:.17g}" for v in row) + "\n")
