"""Backward induction for the doubly stochastic BSDE and its linearisations.

Conditioning on the B-noise is realised by freezing one B-path and working
with an ensemble of W-paths; conditional expectations given the simulation
state are either regressions (:class:`condexp.RegressionCE`) or exact prefix
averages on an enumerated Rademacher ensemble (:class:`condexp.EnumerationCE`).

Scheme, on the simulation clock (``k = n-1, ..., 0``)::

    Y_k = E_k[ Y_{k+1} + f(s_{k+1}, X, Y, Z)_{k+1} delta + g(s_{k+1}, X, Y)_{k+1} . dB_k ]
    Z_k = E_k[ (Y_{k+1} - Y_k) dW_k ] / delta

with ``s_k`` the model-clock time of step ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .condexp import EnumerationCE, RegressionCE
from .core import (NoiseEnsemble, ProblemSpec, enumerate_ensemble, sample_b_increments,
                   sample_ensemble, tau_index)
from .errors import ConfigurationError, UnsupportedError, ValidationError
from .forward import ForwardBundle, simulate_forward


@dataclass
class BackwardSolution:
    """``y_paths[p, k]`` and ``z_paths[p, k]`` on the simulation clock."""

    y_paths: np.ndarray                 # (m, n+1)
    z_paths: np.ndarray                 # (m, n+1, d)
    u_value: float
    std_error: float
    driver_path: np.ndarray             # f(s_k, X_k, Y_k, Z_k), (m, n+1)
    noise_path: np.ndarray              # g(s_k, X_k, Y_k), (m, n+1, d)
    pathwise: np.ndarray                # terminal value plus summed driver terms, (m,)
    condition_numbers: np.ndarray       # per step k = 0..n-1
    grid_n: int = 0

    def y_at(self, s_index: int) -> np.ndarray:
        return self.y_paths[:, self.grid_n - s_index]

    def z_at(self, s_index: int) -> np.ndarray:
        return self.z_paths[:, self.grid_n - s_index]


@dataclass
class VariationalSolution:
    grad_y_paths: np.ndarray            # (m, n+1, d)  row vectors
    grad_z_paths: np.ndarray            # (m, n+1, d, d)  [j, i] = d_i Z^j
    grad_u_value: np.ndarray            # (d,)
    std_error: np.ndarray               # (d,)


@dataclass
class JumpComponent:
    node: int                           # model-clock grid index of t_i
    alpha_path: np.ndarray              # (m, n+1, d)
    beta_path: np.ndarray               # (m, n+1, d, d)
    delta_z_paths: np.ndarray           # (m, d)

    @property
    def delta_z(self) -> np.ndarray:
        return self.delta_z_paths.mean(axis=0)

    @property
    def delta_z_se(self) -> np.ndarray:
        return self.delta_z_paths.std(axis=0, ddof=1) / np.sqrt(len(self.delta_z_paths))


@dataclass
class JumpSolution:
    components: dict = field(default_factory=dict)     # partition position i -> JumpComponent

    def __getitem__(self, i: int) -> JumpComponent:
        return self.components[i]


def default_ce(spec: ProblemSpec) -> RegressionCE:
    return RegressionCE(spec.regression_degree, spec.cond_max)


def partition_tau_indices(spec: ProblemSpec) -> list:
    """Simulation steps of the partition nodes, in model order ``t_0..t_n``."""
    return [tau_index(spec.grid, j) for j in spec.partition.indices]


def state_at(spec: ProblemSpec, bundle: ForwardBundle, k: int) -> np.ndarray:
    """Markov state at step ``k``: X_k plus X at partition nodes already passed."""
    x = bundle.x_path[:, k]
    if spec.partition is None:
        return x
    passed = [kj for kj in partition_tau_indices(spec) if kj < k]
    if not passed:
        return x
    return np.concatenate([x] + [bundle.x_path[:, kj] for kj in passed], axis=1)


def terminal_inputs(spec: ProblemSpec, bundle: ForwardBundle) -> np.ndarray:
    if spec.coefficients.discrete_terminal:
        taus = partition_tau_indices(spec)[:spec.coefficients.terminal_nodes]
        return np.stack([bundle.x_path[:, kj] for kj in taus], axis=1)
    return bundle.x_path[:, -1]


def terminal_gradient(spec: ProblemSpec, coeffs, xin: np.ndarray) -> np.ndarray:
    """Gradient of the terminal functional (analytic, else central differences)."""
    if coeffs.terminal_x is not None:
        return np.asarray(coeffs.terminal_x(xin), float).reshape(xin.shape)
    if not spec.fd_fallback:
        raise ConfigurationError("terminal gradient missing and finite differences are disabled")
    flat = xin.reshape(len(xin), -1)
    h = 1e-4 * (1 + np.abs(flat))
    out = np.empty_like(flat)
    for a in range(flat.shape[1]):
        e = np.zeros_like(flat)
        e[:, a] = h[:, a]
        up = coeffs.terminal((flat + e).reshape(xin.shape))
        dn = coeffs.terminal((flat - e).reshape(xin.shape))
        out[:, a] = (up - dn) / (2 * h[:, a])
    return out.reshape(xin.shape)


def terminal_z(spec: ProblemSpec, coeffs, bundle: ForwardBundle) -> np.ndarray:
    """Z at the terminal node: gradient in the last forward value times sigma."""
    xin = terminal_inputs(spec, bundle)
    grad = terminal_gradient(spec, coeffs, xin)
    if coeffs.discrete_terminal:
        grad = grad[:, 0]
    return np.einsum("mi,mij->mj", grad, bundle.sigma_path[:, -1])


def solve_bdsde(spec: ProblemSpec, noise: NoiseEnsemble, bundle: ForwardBundle,
                ce=None) -> BackwardSolution:
    """Backward induction for (Y, Z) along one frozen B-path."""
    n = spec.grid.n_steps
    if bundle.n_steps != n or noise.w_increments.shape[1] != n:
        raise ValidationError("noise, forward paths and problem use different grids")
    if bundle.n_paths != noise.n_paths:
        raise ValidationError("noise and forward paths have different ensemble sizes")
    ce = ce or default_ce(spec)
    coeffs = spec.effective_coefficients()
    delta = spec.grid.delta
    m, d = noise.n_paths, spec.dim
    dW, dB = noise.w_increments, noise.b_increments
    X = bundle.x_path
    Y = np.empty((m, n + 1))
    Z = np.empty((m, n + 1, d))
    F = np.empty((m, n + 1))
    G = np.empty((m, n + 1, d))
    conds = np.empty(n)

    Y[:, n] = coeffs.terminal(terminal_inputs(spec, bundle))
    Z[:, n] = terminal_z(spec, coeffs, bundle)
    s_n = spec.model_time(n)
    F[:, n] = coeffs.driver(s_n, X[:, n], Y[:, n], Z[:, n])
    G[:, n] = coeffs.noise(s_n, X[:, n], Y[:, n])
    pathwise = Y[:, n].copy()
    picard = spec.picard_iterations

    for k in range(n - 1, -1, -1):
        s_k = spec.model_time(k)
        proj = ce.projector(k, state_at(spec, bundle, k), label=f"step k={k} (s={s_k:.6g})")
        conds[k] = proj.cond
        noise_term = G[:, k + 1] @ dB[k]
        if picard:
            yk = proj(Y[:, k + 1] + noise_term)
            base = yk.copy()
            zk = proj((Y[:, k + 1] - yk)[:, None] * dW[:, k]) / delta
            for _ in range(picard):
                yk = base + coeffs.driver(s_k, X[:, k], yk, zk) * delta
                zk = proj((Y[:, k + 1] - yk)[:, None] * dW[:, k]) / delta
            Y[:, k], Z[:, k] = yk, zk
        else:
            Y[:, k] = proj(Y[:, k + 1] + F[:, k + 1] * delta + noise_term)
            Z[:, k] = proj((Y[:, k + 1] - Y[:, k])[:, None] * dW[:, k]) / delta
            pathwise += F[:, k + 1] * delta + noise_term
        F[:, k] = coeffs.driver(s_k, X[:, k], Y[:, k], Z[:, k])
        G[:, k] = coeffs.noise(s_k, X[:, k], Y[:, k])
        if picard:
            pathwise += F[:, k] * delta + noise_term

    u = float(Y[:, 0].mean())
    se = float(pathwise.std(ddof=1) / np.sqrt(m))
    return BackwardSolution(Y, Z, u, se, F, G, pathwise, conds, grid_n=n)


@dataclass
class OuterRun:
    """Everything computed for one frozen B-path."""

    spec: ProblemSpec
    noise: NoiseEnsemble
    bundle: ForwardBundle
    solution: BackwardSolution
    ce: object


def run_outer(spec: ProblemSpec, outer_id: int = 0, b_increments: Optional[np.ndarray] = None,
              enumerate_paths: bool = False, threads: int = 1) -> OuterRun:
    """Sample the inner ensemble for ``outer_id``, simulate forward and solve."""
    if enumerate_paths:
        if spec.noise_mode != "rademacher":
            raise ValidationError("path enumeration requires rademacher noise")
        if b_increments is None:
            b_increments = sample_b_increments(spec, outer_id)
        noise = enumerate_ensemble(spec, b_increments)
        ce = EnumerationCE(spec.grid.n_steps, spec.dim)
    else:
        noise = sample_ensemble(spec, outer_id, b_increments=b_increments, threads=threads)
        ce = default_ce(spec)
    bundle = simulate_forward(spec, noise)
    return OuterRun(spec, noise, bundle, solve_bdsde(spec, noise, bundle, ce), ce)


def evaluate_u(spec: ProblemSpec, outer_id: int = 0, threads: int = 1, **kw) -> tuple:
    """``(u(t, x), standard error)`` for the frozen B-path ``outer_id``."""
    run = run_outer(spec, outer_id, threads=threads, **kw)
    return run.solution.u_value, run.solution.std_error


# ---------------------------------------------------------------------------
# Linearised systems

def _require_partials(spec: ProblemSpec, coeffs):
    missing = [n for n in ("driver_x", "driver_y", "driver_z", "terminal_x") if getattr(coeffs, n) is None]
    if missing:
        raise ConfigurationError(
            f"missing partials {missing}: supply them analytically or set mollify_eps > 0 "
            "to smooth the driver and terminal")


def _noise_partials(spec: ProblemSpec, coeffs, s, x, y):
    """(g_x, g_y) analytic or by central differences."""
    if coeffs.noise_x is not None and coeffs.noise_y is not None:
        return np.asarray(coeffs.noise_x(s, x, y), float), np.asarray(coeffs.noise_y(s, x, y), float)
    if not spec.fd_fallback:
        raise ConfigurationError("noise-coefficient partials missing and finite differences are disabled")
    m, d = x.shape
    gx = np.empty((m, d, d))
    for i in range(d):
        h = 1e-4 * (1 + np.abs(x[:, i:i + 1]))
        e = np.zeros_like(x)
        e[:, i:i + 1] = h
        gx[:, :, i] = (coeffs.noise(s, x + e, y) - coeffs.noise(s, x - e, y)) / (2 * h)
    h = 1e-4 * (1 + np.abs(y))
    gy = (coeffs.noise(s, x, y + h) - coeffs.noise(s, x, y - h)) / (2 * h[:, None])
    return gx, gy


def _row_times(row, mat):
    return np.einsum("mi,mij->mj", row, mat)


def _terminal_z_jacobian(spec, coeffs, bundle):
    """d/dx of x -> l_x(x) sigma(0, x) at the terminal node, times the tangent there."""
    x = bundle.x_path[:, -1]
    m, d = x.shape
    s_n = spec.model_time(spec.grid.n_steps)

    def zmap(xv):
        return np.einsum("mi,mij->mj", terminal_gradient(spec, coeffs, xv), coeffs.diffusion(s_n, xv))

    jac = np.empty((m, d, d))
    for a in range(d):
        h = 1e-4 * (1 + np.abs(x[:, a:a + 1]))
        e = np.zeros_like(x)
        e[:, a:a + 1] = h
        jac[:, :, a] = (zmap(x + e) - zmap(x - e)) / (2 * h)
    return jac @ bundle.grad_x_path[:, -1]


def _linear_sweep(spec, noise, bundle, base, ce, terminal_row, terminal_z_mat, normalizer,
                  with_forward_terms: bool):
    """Shared backward sweep for the linear systems.

    Unknown row process ``P`` with driver ``f_x gradX + f_y P + f_z . Q`` (the
    forward terms only when ``with_forward_terms``) and noise term
    ``(g_x gradX + g_y P) . dB``.  Regressions act on ``P_k N_k^{-1}``, a
    function of the state, with ``N_k = normalizer(k)`` an invertible tangent.
    """
    coeffs = spec.effective_coefficients()
    n = spec.grid.n_steps
    delta = spec.grid.delta
    m, d = noise.n_paths, spec.dim
    dW, dB = noise.w_increments, noise.b_increments
    X, gX = bundle.x_path, bundle.grad_x_path
    Y, Z = base.y_paths, base.z_paths
    P = np.empty((m, n + 1, d))
    Q = np.empty((m, n + 1, d, d))
    P[:, n] = terminal_row
    Q[:, n] = terminal_z_mat
    pathwise = terminal_row.copy()
    for k in range(n - 1, -1, -1):
        s1 = spec.model_time(k + 1)
        x1, y1, z1 = X[:, k + 1], Y[:, k + 1], Z[:, k + 1]
        fy = np.asarray(coeffs.driver_y(s1, x1, y1, z1), float)
        fz = np.asarray(coeffs.driver_z(s1, x1, y1, z1), float)
        gx, gy = _noise_partials(spec, coeffs, s1, x1, y1)
        drv = delta * (fy[:, None] * P[:, k + 1] + np.einsum("mj,mji->mi", fz, Q[:, k + 1]))
        drv = drv + (gy @ dB[k])[:, None] * P[:, k + 1]
        if with_forward_terms:
            fx = np.asarray(coeffs.driver_x(s1, x1, y1, z1), float)
            drv = drv + _row_times(delta * fx + np.einsum("j,mji->mi", dB[k], gx), gX[:, k + 1])
        pathwise = pathwise + drv
        nk, nk_inv = normalizer(k)
        proj = ce.projector(k, state_at(spec, bundle, k))
        P[:, k] = _row_times(proj(_row_times(P[:, k + 1] + drv, nk_inv)), nk)
        red = _row_times(P[:, k + 1] - P[:, k], nk_inv)
        qk = proj(dW[:, k, :, None] * red[:, None, :]) / delta        # (m, j, i)
        Q[:, k] = qk @ nk
    return P, Q, pathwise


def solve_variational(spec: ProblemSpec, noise: NoiseEnsemble, bundle: ForwardBundle,
                      base: BackwardSolution, ce=None) -> VariationalSolution:
    """Tangent BDSDE for (grad Y, grad Z); ``grad_u_value`` is its value at the start."""
    if spec.coefficients.discrete_terminal:
        raise UnsupportedError("the variational system is implemented for single-point terminals")
    coeffs = spec.effective_coefficients()
    _require_partials(spec, coeffs)
    ce = ce or default_ce(spec)
    x_n = bundle.x_path[:, -1]
    term = _row_times(terminal_gradient(spec, coeffs, x_n), bundle.grad_x_path[:, -1])
    qn = _terminal_z_jacobian(spec, coeffs, bundle)

    def normalizer(k):
        return bundle.grad_x_path[:, k], bundle.grad_x_inv_path[:, k]

    P, Q, pathwise = _linear_sweep(spec, noise, bundle, base, ce, term, qn, normalizer, True)
    m = noise.n_paths
    return VariationalSolution(P, Q, P[:, 0].mean(axis=0), pathwise.std(axis=0, ddof=1) / np.sqrt(m))


def solve_jump_system(spec: ProblemSpec, noise: NoiseEnsemble, bundle: ForwardBundle,
                      base: BackwardSolution, ce=None, nodes=None) -> JumpSolution:
    """Linear BDSDE (alpha, beta) per interior partition node and the Z jump there.

    ``alpha`` carries the terminal datum ``d_i l . gradX_{t_i}``; the jump
    ``Z(t_i+) - Z(t_i-)`` equals ``alpha_{t_i} gradX_{t_i}^{-1} sigma(t_i, X_{t_i})``.
    """
    if not spec.coefficients.discrete_terminal:
        raise ConfigurationError("the jump system needs a discrete terminal with a partition")
    coeffs = spec.effective_coefficients()
    _require_partials(spec, coeffs)
    ce = ce or default_ce(spec)
    n = spec.grid.n_steps
    d = spec.dim
    taus = partition_tau_indices(spec)
    grad_l = terminal_gradient(spec, coeffs, terminal_inputs(spec, bundle))     # (m, n_nodes, d)
    if nodes is None:
        nodes = range(1, min(len(taus) - 1, coeffs.terminal_nodes))
    out = JumpSolution()
    for i in nodes:
        ki = taus[i]
        term = _row_times(grad_l[:, i], bundle.grad_x_path[:, ki])

        def normalizer(k, ki=ki):
            kk = min(k, ki)
            return bundle.grad_x_path[:, kk], bundle.grad_x_inv_path[:, kk]

        P, Q, _ = _linear_sweep(spec, noise, bundle, base, ce, term,
                                np.zeros((noise.n_paths, d, d)), normalizer, False)
        dz = _row_times(_row_times(P[:, ki], bundle.grad_x_inv_path[:, ki]), bundle.sigma_path[:, ki])
        out.components[i] = JumpComponent(spec.partition.indices[i], P, Q, dz)
    return out


def write_solution_dump(spec: ProblemSpec, solution: BackwardSolution, out, path_index: int = 0) -> None:
    """One whitespace-separated row per node (model-clock order): s, Y, Z components."""
    d = solution.z_paths.shape[-1]
    out.write(f"# backward solution dump; path {path_index}; model-clock order\n")
    out.write(" ".join(["s", "y"] + [f"z{i + 1}" for i in range(d)]) + "\n")
    grid = spec.grid
    for j in range(grid.n_steps + 1):
        k = tau_index(grid, j)
        row = [grid.time(j), solution.y_paths[path_index, k], *solution.z_paths[path_index, k]]
        out.write(" ".join(f"{v:.17g}" for v in row) + "\n")
