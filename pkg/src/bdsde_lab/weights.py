"""Malliavin weights and the derivative-free estimators built on them.

On the simulation clock the weight over the model window ``[r, s]`` is

    M^s_r = sum_{k=a}^{b-1} [sigma^{-1}(X_k) gradX_k]^T dW_k,   a = n - s_index, b = n - r_index

and ``N^s_r = (M^s_r)^T [gradX_a]^{-1} / (s - r)``, where ``a`` is the
conditioning step.  The inverse tangent is taken at the conditioning time;
at ``s = t`` it is the identity.

Integrals against ``N^s_r dr`` and ``N^s_r dB_r`` use the same node/increment
pairing as the backward solver: the term for step ``b`` in ``(a, n]`` carries
``f_b delta + g_b . dB_{b-1}``, so the singular ``r = s`` term never appears.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bdsde import OuterRun, run_outer, state_at, partition_tau_indices, terminal_inputs
from .core import ProblemSpec, tau_index
from .errors import ValidationError
from .forward import ForwardBundle


@dataclass
class WeightProcess:
    pairs: list                                   # (r_index, s_index), model clock
    m_values: dict = field(default_factory=dict)  # pair -> (m, d)
    n_values: dict = field(default_factory=dict)  # pair -> (m, d) row vectors


@dataclass
class WeightEstimate:
    value: np.ndarray
    std_error: np.ndarray
    n_samples: int
    anchor: tuple = ()
    per_path: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, samples: np.ndarray, anchor: tuple = (), per_path=None) -> "WeightEstimate":
        samples = np.asarray(samples, float)
        m = samples.shape[0]
        return cls(samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(m), m, anchor, per_path)


def weight_increments(bundle: ForwardBundle, w_increments: np.ndarray) -> np.ndarray:
    """Per-step terms ``[sigma^{-1} gradX]_k^T dW_k``, shape (m, n, d)."""
    w = np.asarray(w_increments, float)
    if w.ndim == 2:
        w = w[None]
    a = bundle.sigma_inv_path[:, :-1] @ bundle.grad_x_path[:, :-1]
    return np.einsum("mkji,mkj->mki", a, w)


def _cumulative(terms: np.ndarray) -> np.ndarray:
    m, n, d = terms.shape
    out = np.zeros((m, n + 1, d))
    np.cumsum(terms, axis=1, out=out[:, 1:])
    return out


def compute_weights(bundle: ForwardBundle, w_increments: np.ndarray, pairs) -> WeightProcess:
    """``M^s_r`` and ``N^s_r`` for model-clock index pairs ``(r_index, s_index)``, ``r < s``."""
    grid = bundle.spec.grid
    cum = _cumulative(weight_increments(bundle, w_increments))
    out = WeightProcess(list(pairs))
    for r_idx, s_idx in out.pairs:
        if not 0 <= r_idx < s_idx <= grid.n_steps:
            raise ValidationError(f"weight pair needs 0 <= r < s <= n, got ({r_idx}, {s_idx})")
        a, b = tau_index(grid, s_idx), tau_index(grid, r_idx)
        m_val = cum[:, b] - cum[:, a]
        out.m_values[(r_idx, s_idx)] = m_val
        out.n_values[(r_idx, s_idx)] = np.einsum("mi,mij->mj", m_val, bundle.grad_x_inv_path[:, a]) / (
            grid.time(s_idx) - grid.time(r_idx))
    return out


def weighted_functional(run: OuterRun, a: int, clamp: Optional[int] = None,
                        control_variate: bool = False) -> np.ndarray:
    """Per-path ``l N_n + sum_b (f_b delta + g_b . dB_{b-1}) N_b`` conditioned at step ``a``.

    ``clamp`` caps the weight anchor at simulation step ``clamp`` (the
    partition node closing the current interval); the terminal then carries
    ``N_clamp``.  ``control_variate`` centres the terminal values, which
    leaves the expectation unchanged since ``E[N] = 0``.
    """
    spec, bundle, sol = run.spec, run.bundle, run.solution
    n = spec.grid.n_steps
    delta = spec.grid.delta
    if not 0 <= a < n:
        raise ValidationError(f"conditioning step {a} outside 0..{n - 1}")
    top = n if clamp is None else clamp
    if not a < top <= n:
        raise ValidationError(f"clamp step {top} must lie in ({a}, {n}]")
    cum = _cumulative(weight_increments(bundle, run.noise.w_increments))
    steps = np.arange(a + 1, n + 1)
    anchors = np.minimum(steps, top)
    m_vals = cum[:, anchors] - cum[:, a][:, None]                      # (m, n-a, d)
    gaps = (anchors - a) * delta
    n_vals = np.einsum("mbi,mij->mbj", m_vals, bundle.grad_x_inv_path[:, a]) / gaps[None, :, None]
    coeffs = spec.effective_coefficients()
    term = coeffs.terminal(terminal_inputs(spec, bundle))
    if control_variate:
        term = term - term.mean()
    weights = sol.driver_path[:, steps] * delta
    weights = weights + np.einsum("mbj,bj->mb", sol.noise_path[:, steps], run.noise.b_increments[steps - 1])
    return term[:, None] * n_vals[:, -1] + np.einsum("mb,mbj->mj", weights, n_vals)


def _run(spec: ProblemSpec, outer_id: int, run: Optional[OuterRun], threads: int) -> OuterRun:
    return run if run is not None else run_outer(spec, outer_id, threads=threads)


def estimate_grad_u_weights(spec: ProblemSpec, outer_id: int = 0, run: Optional[OuterRun] = None,
                            control_variate: bool = False, threads: int = 1) -> WeightEstimate:
    """Derivative-free estimate of the spatial gradient of u at the start point."""
    run = _run(spec, outer_id, run, threads)
    h = weighted_functional(run, 0, control_variate=control_variate)
    return WeightEstimate.from_samples(h, ("s", spec.t, "grad u at start"))


def _z_from_functional(run: OuterRun, a: int, h: np.ndarray, anchor: tuple) -> WeightEstimate:
    proj = run.ce.projector(a, state_at(run.spec, run.bundle, a), label=f"weight regression k={a}")
    sig = run.bundle.sigma_path[:, a]
    z = np.einsum("mi,mij->mj", proj(h), sig)
    est = WeightEstimate.from_samples(np.einsum("mi,mij->mj", h, sig), anchor, per_path=z)
    est.value = z.mean(axis=0)
    return est


def estimate_z_weights(spec: ProblemSpec, outer_id: int = 0, s_index: int = 0,
                       run: Optional[OuterRun] = None, control_variate: bool = False,
                       threads: int = 1) -> WeightEstimate:
    """Z at model node ``s_index`` via the weight representation.

    ``per_path`` holds the regressed Z at each path's state; ``value`` is its
    ensemble mean and ``std_error`` the standard error of the unregressed
    weighted functional times sigma.
    """
    n = spec.grid.n_steps
    if not 0 < s_index <= n:
        raise ValidationError("s_index must satisfy 0 < s_index <= n_steps; Z at s=0 comes from the solver")
    run = _run(spec, outer_id, run, threads)
    a = tau_index(spec.grid, s_index)
    h = weighted_functional(run, a, control_variate=control_variate)
    return _z_from_functional(run, a, h, ("s", spec.grid.time(s_index), "Z"))


def estimate_z_discrete(spec: ProblemSpec, outer_id: int = 0, s_index: int = 0,
                        run: Optional[OuterRun] = None, control_variate: bool = False,
                        threads: int = 1) -> WeightEstimate:
    """Z strictly inside a partition interval, with anchors clamped to its left node."""
    if spec.partition is None:
        raise ValidationError("estimate_z_discrete needs a partition")
    if s_index in spec.partition.indices:
        raise ValidationError(
            f"s_index {s_index} is a partition node; evaluate the left/right limits at "
            f"s_index - 1 and s_index + 1 (see z_one_sided_limits)")
    i = spec.partition.interval_of(s_index)
    run = _run(spec, outer_id, run, threads)
    a = tau_index(spec.grid, s_index)
    clamp = tau_index(spec.grid, spec.partition.indices[i - 1])
    h = weighted_functional(run, a, clamp=clamp, control_variate=control_variate)
    return _z_from_functional(run, a, h, ("s", spec.grid.time(s_index), f"Z on interval {i}"))


def z_one_sided_limits(spec: ProblemSpec, position: int, outer_id: int = 0,
                       run: Optional[OuterRun] = None, threads: int = 1) -> tuple:
    """Weight estimates of Z one grid step below and above the partition node ``position``."""
    node = spec.partition.indices[position]
    run = _run(spec, outer_id, run, threads)
    left = estimate_z_discrete(spec, outer_id, node - 1, run=run)
    right = estimate_z_discrete(spec, outer_id, node + 1, run=run)
    return left, right


def malliavin_derivative(bundle: ForwardBundle, s_index: int, r_index: int,
                         variational=None) -> dict:
    """``D_s X_r`` and, given a variational solution, ``D_s Y_r`` and ``D_s Z_r``.

    ``X_r`` is driven by W on the model window ``[r, t]``, so the derivative
    is nonzero only for ``r <= s``:  ``D_s X_r = gradX_r gradX_s^{-1} sigma(s, X_s)``.
    """
    grid = bundle.spec.grid
    a, b = tau_index(grid, s_index), tau_index(grid, r_index)
    m, d = bundle.n_paths, bundle.x_path.shape[-1]
    active = r_index <= s_index
    factor = bundle.grad_x_inv_path[:, a] @ bundle.sigma_path[:, a]
    out = {"x": bundle.grad_x_path[:, b] @ factor if active else np.zeros((m, d, d))}
    if variational is not None:
        if active:
            out["y"] = np.einsum("mi,mij->mj", variational.grad_y_paths[:, b], factor)
            out["z"] = variational.grad_z_paths[:, b] @ factor
        else:
            out["y"] = np.zeros((m, d))
            out["z"] = np.zeros((m, d, d))
    return out
