"""Conditional expectations over an inner ensemble.

Two realisations share one interface, ``operator.projector(k, state)``
returning a callable that maps per-path values to their conditional
expectation given the step-``k`` state:

* :class:`RegressionCE` projects onto monomials of the (standardised) state;
* :class:`EnumerationCE` averages over the paths of a fully enumerated
  Rademacher ensemble that share their first ``k`` increments, which is the
  exact conditional expectation.

Both contain the constants, so ensemble means are preserved exactly.
"""

from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np

from .errors import SolverError


def monomial_exponents(n_vars: int, degree: int) -> list:
    """Exponent tuples of all monomials of total degree <= ``degree``."""
    out = []
    for deg in range(degree + 1):
        for combo in combinations_with_replacement(range(n_vars), deg):
            e = [0] * n_vars
            for c in combo:
                e[c] += 1
            out.append(tuple(e))
    return out


def _basis(z: np.ndarray, degree: int) -> np.ndarray:
    m, q = z.shape
    cols = []
    for e in monomial_exponents(q, degree):
        col = np.ones(m)
        for i, p in enumerate(e):
            if p:
                col = col * z[:, i] ** p
        cols.append(col)
    return np.stack(cols, axis=1)


class RegressionProjector:
    """Least-squares projection of per-path values onto a polynomial basis."""

    def __init__(self, state: np.ndarray, degree: int, cond_max: float = 1e10, label: str = ""):
        state = np.asarray(state, float)
        if state.ndim == 1:
            state = state[:, None]
        m = state.shape[0]
        mean = state.mean(axis=0)
        std = state.std(axis=0)
        live = std > 1e-12 * (1 + np.abs(mean))
        z = (state[:, live] - mean[live]) / std[live]
        if z.shape[1] == 0:
            degree = 0
        phi = _basis(z, degree)
        q, r = np.linalg.qr(phi)
        cond = np.linalg.cond(r)
        if not cond <= cond_max and z.shape[1] == 1:
            # few distinct support points (e.g. early Rademacher steps)
            support = len(np.unique(z[:, 0]))
            degree = min(degree, support - 1)
            phi = _basis(z, degree)
            q, r = np.linalg.qr(phi)
            cond = np.linalg.cond(r)
        if not cond <= cond_max:
            raise SolverError(f"regression design ill-conditioned at {label or 'step'}: "
                              f"condition number {cond:.3g} > {cond_max:.3g}")
        self.q = q
        self.cond = float(cond)
        self.degree = degree
        self.n_basis = phi.shape[1]
        self.n_paths = m

    def __call__(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, float)
        flat = v.reshape(self.n_paths, -1)
        fitted = self.q @ (self.q.T @ flat)
        return fitted.reshape(v.shape)


class RegressionCE:
    def __init__(self, degree: int = 3, cond_max: float = 1e10):
        self.degree = degree
        self.cond_max = cond_max

    def projector(self, k: int, state: np.ndarray, label: str = "") -> RegressionProjector:
        return RegressionProjector(state, self.degree, self.cond_max, label or f"step k={k}")


class PrefixProjector:
    """Average over contiguous blocks of ``block`` paths."""

    def __init__(self, n_paths: int, block: int):
        if n_paths % block:
            raise SolverError(f"{n_paths} paths do not split into blocks of {block}")
        self.block = block
        self.n_groups = n_paths // block
        self.cond = 1.0

    def __call__(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, float)
        g = v.reshape((self.n_groups, self.block) + v.shape[1:]).mean(axis=1)
        return np.repeat(g, self.block, axis=0)


class EnumerationCE:
    """Exact conditional expectation for :func:`core.enumerate_ensemble` output."""

    def __init__(self, n_steps: int, dim: int):
        self.n_steps = n_steps
        self.dim = dim

    def projector(self, k: int, state: np.ndarray, label: str = "") -> PrefixProjector:
        return PrefixProjector(2 ** (self.dim * self.n_steps), 2 ** (self.dim * (self.n_steps - k)))
