"""Build a :class:`CoefficientSet` from expression strings.

Symbols: ``t``; ``x`` (``x1..xd`` when ``dim > 1``); ``y``; ``z`` (``z1..zd``).
A discrete terminal uses ``x0, x1, ..., xn`` for the values at the partition
nodes (``dim == 1`` only).  Vector-valued coefficients are written as
``"[e1, e2]"`` and matrices as ``"[[a, b], [c, d]]"``.  All partials are
obtained by symbolic differentiation.
"""

from __future__ import annotations

import ast
from typing import Optional

import numpy as np
import sympy as sp

from .core import CoefficientSet
from .errors import ValidationError

_NAMESPACE = {name: getattr(sp, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "atan", "Abs", "Max", "Min", "pi", "E", "sign")}
_NAMESPACE["abs"] = sp.Abs


def _symbols(dim: int):
    t, y = sp.symbols("t y", real=True)
    if dim == 1:
        xs = [sp.Symbol("x", real=True)]
        zs = [sp.Symbol("z", real=True)]
    else:
        xs = [sp.Symbol(f"x{i + 1}", real=True) for i in range(dim)]
        zs = [sp.Symbol(f"z{i + 1}", real=True) for i in range(dim)]
    return t, xs, y, zs


def _parse(text: str, local: dict):
    text = str(text).strip()
    ns = dict(_NAMESPACE)
    ns.update(local)
    try:
        if text.startswith("["):
            node = ast.parse(text, mode="eval").body
            expr = _nested(node, text, ns)
        else:
            expr = sp.sympify(text, locals=ns)
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValidationError(f"cannot parse expression {text!r}: {exc}") from exc
    unknown = sorted(str(s) for e in _flatten(expr) for s in sp.sympify(e).free_symbols if str(s) not in local)
    if unknown:
        raise ValidationError(f"unknown symbols {unknown} in {text!r}; allowed: {sorted(local)}")
    return expr


def _flatten(expr):
    if isinstance(expr, list):
        return [e for item in expr for e in _flatten(item)]
    return [expr]


def _nested(node, text, ns):
    if isinstance(node, ast.List):
        return [_nested(el, text, ns) for el in node.elts]
    return sp.sympify(ast.get_source_segment(text, node), locals=ns)


def _lam(args, expr):
    fn = sp.lambdify(args, expr, modules="numpy")
    return fn


def _column(values, m):
    return np.broadcast_to(np.asarray(values, dtype=float), (m,))


def _vector_fn(args_syms, exprs, arg_unpack):
    fns = [_lam(args_syms, e) for e in exprs]

    def fn(*args):
        flat, m = arg_unpack(*args)
        return np.stack([_column(f(*flat), m) for f in fns], axis=-1)
    return fn


def coefficients_from_expressions(dim: int = 1, drift="0", diffusion="1", driver="0", noise="0",
                                  terminal="x", terminal_nodes: Optional[int] = None,
                                  lipschitz_K: float = 1.0, ellipticity_c: Optional[float] = None,
                                  label: str = "") -> CoefficientSet:
    t, xs, y, zs = _symbols(dim)
    local = {str(s): s for s in [t, y, *xs, *zs]}
    d = dim

    def vec(text, length):
        e = _parse(text, local)
        if not isinstance(e, list):
            if length > 1 and e != 0:
                raise ValidationError(f"expected a list of {length} expressions, got {text!r}")
            e = [e] * length
        if len(e) != length:
            raise ValidationError(f"expected {length} components in {text!r}")
        return [sp.sympify(c) for c in e]

    b = vec(drift, d)
    g = vec(noise, d)
    sig = _parse(diffusion, local)
    if not isinstance(sig, list):
        if d == 1:
            sig = [[sig]]
        else:
            sig = [[sig if i == j else sp.Integer(0) for j in range(d)] for i in range(d)]
    sig = [[sp.sympify(c) for c in row] for row in sig]
    if len(sig) != d or any(len(r) != d for r in sig):
        raise ValidationError(f"diffusion must be {d}x{d}")
    f = _parse(driver, local)

    tx = [t, *xs]
    txyz = [t, *xs, y, *zs]
    txy = [t, *xs, y]

    def un_tx(tt, x):
        x = np.asarray(x, float)
        return [tt, *x.T], x.shape[0]

    def un_txyz(tt, x, yy, z):
        x = np.asarray(x, float)
        m = x.shape[0]
        return [tt, *x.T, _column(yy, m), *np.asarray(z, float).reshape(m, d).T], m

    def un_txy(tt, x, yy):
        x = np.asarray(x, float)
        m = x.shape[0]
        return [tt, *x.T, _column(yy, m)], m

    drift_fn = _vector_fn(tx, b, un_tx)
    drift_x = _matrix_fn(tx, [[sp.diff(bi, xj) for xj in xs] for bi in b], un_tx)
    diff_flat = [sig[i][j] for i in range(d) for j in range(d)]
    diff_vec = _vector_fn(tx, diff_flat, un_tx)

    def diffusion_fn(tt, x):
        return diff_vec(tt, x).reshape(-1, d, d)

    diffx_vec = _vector_fn(tx, [sp.diff(sig[i][j], xs[k]) for i in range(d) for j in range(d) for k in range(d)], un_tx)

    def diffusion_x(tt, x):
        return diffx_vec(tt, x).reshape(-1, d, d, d)

    f_fn = _scalar_fn(txyz, f, un_txyz)
    f_x = _vector_fn(txyz, [sp.diff(f, xi) for xi in xs], un_txyz)
    f_y = _scalar_fn(txyz, sp.diff(f, y), un_txyz)
    f_z = _vector_fn(txyz, [sp.diff(f, zi) for zi in zs], un_txyz)
    g_fn = _vector_fn(txy, g, un_txy)
    g_x = _matrix_fn(txy, [[sp.diff(gj, xi) for xi in xs] for gj in g], un_txy)
    g_y = _vector_fn(txy, [sp.diff(gj, y) for gj in g], un_txy)

    if terminal_nodes is None:
        l_expr = _parse(terminal, local)

        def un_x(x):
            x = np.asarray(x, float)
            return [*x.T], x.shape[0]
        l_fn = _scalar_fn(xs, l_expr, un_x)
        l_x = _vector_fn(xs, [sp.diff(l_expr, xi) for xi in xs], un_x)
    else:
        if d != 1:
            raise ValidationError("discrete terminal expressions are supported for dim == 1 only")
        nodes = [sp.Symbol(f"x{i}", real=True) for i in range(terminal_nodes)]
        l_expr = _parse(terminal, {str(s): s for s in nodes})

        def un_xs(xsv):
            xsv = np.asarray(xsv, float)
            return [*xsv[:, :, 0].T], xsv.shape[0]
        l_fn = _scalar_fn(nodes, l_expr, un_xs)
        grad = _vector_fn(nodes, [sp.diff(l_expr, n) for n in nodes], un_xs)

        def l_x(xsv):
            return grad(xsv)[:, :, None]

    if ellipticity_c is None:
        ellipticity_c = 1.0
    return CoefficientSet(
        dim=d, drift=drift_fn, diffusion=diffusion_fn, driver=f_fn, noise=g_fn, terminal=l_fn,
        terminal_nodes=terminal_nodes, drift_x=drift_x, diffusion_x=diffusion_x, driver_x=f_x,
        driver_y=f_y, driver_z=f_z, noise_x=g_x, noise_y=g_y, terminal_x=l_x,
        lipschitz_K=lipschitz_K, ellipticity_c=ellipticity_c,
        smooth=not any(e.has(sp.Abs, sp.Max, sp.Min, sp.sign) for e in [*b, *g, *diff_flat, f, l_expr]),
        label=label or f"b={drift}; sigma={diffusion}; f={driver}; g={noise}; l={terminal}",
    )


def _scalar_fn(args_syms, expr, arg_unpack):
    fn = _lam(args_syms, expr)

    def wrapped(*args):
        flat, m = arg_unpack(*args)
        return _column(fn(*flat), m).copy()
    return wrapped


def _matrix_fn(args_syms, rows, arg_unpack):
    n_r, n_c = len(rows), len(rows[0])
    vec = _vector_fn(args_syms, [e for row in rows for e in row], arg_unpack)

    def fn(*args):
        return vec(*args).reshape(-1, n_r, n_c)
    return fn
