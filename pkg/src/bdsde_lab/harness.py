"""Experiment orchestration and result records.

Every experiment kind maps a config to a list of :class:`ResultRecord`, one
per (quantity, outer path, time, vector component).  Records are written as
CSV with the header :data:`CSV_HEADER`:

    experiment_id   kind plus the first 8 hex digits of the parameters hash
    kind            experiment kind
    params_hash     sha256 prefix of the canonical config text
    quantity        u | grad-u-weights | grad-u-variational | z-weights | z-solver |
                    z-discrete | delta-z | u-tree | ...
    outer_id        frozen B-path id
    s               model time the quantity refers to
    component       vector component (0 for scalars)
    n_steps, n_samples
    value, std_error
    oracle          reference value ("" when none applies)
    passed          |value - oracle| <= 3 std_error + slack ("" when no oracle); for
                    convergence rungs: error not above the previous rung's, or
                    within 3 std_error of the reference
    wall_clock      seconds spent on the outer path (not part of reproducibility)
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from typing import Optional

import numpy as np

from .bdsde import run_outer, solve_jump_system, solve_variational, write_solution_dump
from .config import ExperimentConfig
from .core import ProblemSpec, sample_b_increments
from .errors import ConfigurationError
from .forward import write_path_dump
from .oracles import fd_gradient, spde_solve_pathwise, tree_enumerate
from .weights import (estimate_grad_u_weights, estimate_z_discrete, estimate_z_weights,
                      z_one_sided_limits)


@dataclass
class ResultRecord:
    experiment_id: str
    kind: str
    params_hash: str
    quantity: str
    outer_id: int
    s: float
    component: int
    n_steps: int
    n_samples: int
    value: float
    std_error: float
    oracle: Optional[float] = None
    passed: Optional[bool] = None
    wall_clock: float = 0.0

    def key(self) -> tuple:
        """Everything except timing, for reproducibility comparisons."""
        return astuple(self)[:-1]


CSV_HEADER = [f.name for f in fields(ResultRecord)]


def write_records(records, out) -> None:
    """Write records as CSV to a path or an open text stream."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", newline="") as fh:
            write_records(records, fh)
        return
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for r in records:
        row = []
        for name in CSV_HEADER:
            v = getattr(r, name)
            if v is None:
                row.append("")
            elif isinstance(v, bool):
                row.append("true" if v else "false")
            elif isinstance(v, float):
                row.append(repr(v))
            else:
                row.append(v)
        writer.writerow(row)


def records_to_text(records) -> str:
    buf = io.StringIO()
    write_records(records, buf)
    return buf.getvalue()


def _passes(value, se, oracle, slack, rel=0.0):
    if oracle is None or not np.isfinite(oracle):
        return None
    return bool(abs(value - oracle) <= 3 * se + slack + rel * abs(oracle))


class _Context:
    def __init__(self, cfg: ExperimentConfig, threads: int, dump_paths):
        self.cfg = cfg
        self.threads = threads
        self.dump_paths = dump_paths
        self.hash = cfg.params_hash()
        self.exp_id = f"{cfg.kind}-{self.hash[:8]}"

    def record(self, spec, quantity, outer_id, s, value, se, n_samples, oracle=None, rel=0.0, wall=0.0):
        value = np.atleast_1d(np.asarray(value, float))
        se = np.broadcast_to(np.atleast_1d(np.asarray(se, float)), value.shape)
        if oracle is not None:
            oracle = np.broadcast_to(np.atleast_1d(np.asarray(oracle, float)), value.shape)
        out = []
        for i in range(len(value)):
            o = None if oracle is None else float(oracle[i])
            out.append(ResultRecord(self.exp_id, self.cfg.kind, self.hash, quantity, int(outer_id), float(s), i,
                                    spec.grid.n_steps, int(n_samples), float(value[i]), float(se[i]), o,
                                    _passes(value[i], se[i], o, self.cfg.tolerance, rel), wall))
        return out


def _oracle_fields(cfg: ExperimentConfig, spec: ProblemSpec, b_increments, times):
    """Pathwise PDE oracle on the matched B-path at the requested model times (d = 1)."""
    if cfg.oracle == "none" or spec.dim != 1 or spec.coefficients.discrete_terminal:
        return None
    n_time = cfg.pde_n_time or spec.grid.n_steps
    b_model = np.asarray(b_increments)[::-1]
    if n_time != spec.grid.n_steps:
        probe = np.linspace(-2, 2, 9)[:, None] + spec.x0
        if np.any(np.asarray(spec.coefficients.noise(0.0, probe, probe[:, 0])) != 0):
            raise ConfigurationError("a noise coefficient needs pde_n_time equal to n_steps (matched B-path)")
        b_model = None
    return spde_solve_pathwise(spec.effective_coefficients(), spec.t, b_model, center=float(spec.x0[0]),
                               h=cfg.pde_h, n_time=n_time, output_times=times)


def _dump(ctx, spec, run, outer_id):
    if not ctx.dump_paths:
        return
    with open(f"{ctx.dump_paths}.outer{outer_id}.forward.txt", "w") as fh:
        write_path_dump(run.bundle, fh)
    with open(f"{ctx.dump_paths}.outer{outer_id}.backward.txt", "w") as fh:
        write_solution_dump(spec, run.solution, fh)


def _per_outer(ctx: _Context, spec: ProblemSpec, outer_id: int) -> list:
    cfg = ctx.cfg
    t0 = time.perf_counter()
    run = run_outer(spec, outer_id, enumerate_paths=cfg.enumerate,
                    threads=ctx.threads if cfg.n_outer_paths == 1 else 1)
    _dump(ctx, spec, run, outer_id)
    m = run.noise.n_paths
    kind = cfg.kind
    grid = spec.grid
    recs = []
    if kind in ("u-estimate", "oracle-compare", "grad-weights", "grad-variational"):
        gf = _oracle_fields(cfg, spec, run.noise.b_increments, None)
        x = float(spec.x0[0])
        if kind in ("u-estimate", "oracle-compare"):
            oracle = None if gf is None else float(gf[0](x))
            recs += ctx.record(spec, "u", outer_id, spec.t, run.solution.u_value, run.solution.std_error, m, oracle)
            if kind == "oracle-compare" and spec.noise_mode == "rademacher":
                tree = tree_enumerate(spec, run.noise.b_increments, gradient=False, jumps=False)
                recs += ctx.record(spec, "u-tree", outer_id, spec.t, run.solution.u_value,
                                   run.solution.std_error, m, tree.u)
        else:
            oracle = None if gf is None else fd_gradient(gf[0], np.array([x]), h=1e-3)
            if kind == "grad-weights":
                est = estimate_grad_u_weights(spec, run=run)
                recs += ctx.record(spec, "grad-u-weights", outer_id, spec.t, est.value, est.std_error, m, oracle)
            else:
                var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
                recs += ctx.record(spec, "grad-u-variational", outer_id, spec.t, var.grad_u_value,
                                   var.std_error, m, oracle)
    elif kind == "z-profile":
        gfs = _oracle_fields(cfg, spec, run.noise.b_increments, sorted(set(cfg.s_times)))
        by_time = {} if gfs is None else {gf.time: gf for gf in gfs}
        for s in cfg.s_times:
            j = grid.index_of(s)
            k = grid.n_steps - j
            est = estimate_z_weights(spec, s_index=j, run=run)
            oracle = None
            if gfs is not None:
                xs = run.bundle.x_path[:, k, 0]
                oracle = float(np.mean(fd_gradient(by_time[s], xs, h=1e-3) * run.bundle.sigma_path[:, k, 0, 0]))
            recs += ctx.record(spec, "z-weights", outer_id, s, est.value, est.std_error, m, oracle, rel=0.05)
            zs = run.solution.z_paths[:, k]
            recs += ctx.record(spec, "z-solver", outer_id, s, zs.mean(axis=0),
                               zs.std(axis=0, ddof=1) / np.sqrt(m), m, oracle, rel=0.05)
    elif kind == "z-discrete":
        for s in cfg.s_times:
            j = grid.index_of(s)
            est = estimate_z_discrete(spec, s_index=j, run=run)
            zs = run.solution.z_paths[:, grid.n_steps - j]
            recs += ctx.record(spec, "z-discrete", outer_id, s, est.value, est.std_error, m,
                               zs.mean(axis=0), rel=0.05)
    elif kind == "jumps":
        jumps = solve_jump_system(spec, run.noise, run.bundle, run.solution, run.ce)
        tree = None
        if spec.noise_mode == "rademacher" and cfg.enumerate:
            tree = tree_enumerate(spec, run.noise.b_increments, gradient=False)
        for pos, comp in jumps.components.items():
            if tree is not None:
                oracle, se = tree.delta_z(pos), comp.delta_z_se
            else:
                left, right = z_one_sided_limits(spec, pos, run=run)
                oracle = right.value - left.value
                se = np.sqrt(comp.delta_z_se ** 2 + left.std_error ** 2 + right.std_error ** 2)
            recs += ctx.record(spec, "delta-z", outer_id, grid.time(comp.node), comp.delta_z, se, m, oracle,
                               rel=0.05)
    else:
        raise ConfigurationError(f"kind {kind} is not a per-path experiment")
    wall = time.perf_counter() - t0
    for r in recs:
        r.wall_clock = wall
    return recs


def _convergence(ctx: _Context) -> list:
    cfg = ctx.cfg
    n_max = max(n for n, _ in cfg.ladder)
    if any(n_max % n for n, _ in cfg.ladder):
        raise ConfigurationError("ladder step counts must divide the finest one (matched noise)")
    fine_spec = cfg.to_spec(n_steps=n_max, n_inner_paths=max(m for _, m in cfg.ladder))
    recs, prev = [], None
    for n, m in cfg.ladder:
        t0 = time.perf_counter()
        spec = cfg.to_spec(n_steps=n, n_inner_paths=m, noise_refinement=cfg.noise_refinement * (n_max // n))
        run = run_outer(spec, 0, threads=ctx.threads)
        if prev is None:
            gf = _oracle_fields(cfg.replace(pde_n_time=None), fine_spec, sample_b_increments(fine_spec, 0), None)
            reference = None if gf is None else float(gf[0](float(spec.x0[0])))
        rec = ctx.record(spec, "u", 0, spec.t, run.solution.u_value, run.solution.std_error, m, reference)[0]
        if reference is not None:
            # decreasing, or already at the sampling floor (a bias-free rung cannot do better)
            err = abs(rec.value - reference)
            rec.passed = prev is None or err <= prev or err <= 3 * rec.std_error
            prev = err
        rec.wall_clock = time.perf_counter() - t0
        recs.append(rec)
    return recs


def run_experiment(cfg: ExperimentConfig, threads: int = 1, dump_paths: Optional[str] = None) -> list:
    """Dispatch a config to its pipeline; deterministic given (config, seed)."""
    ctx = _Context(cfg, threads, dump_paths)
    if cfg.kind == "convergence":
        return _convergence(ctx)
    if cfg.kind == "acceptance":
        from .acceptance import run_acceptance
        report = run_acceptance(seed=cfg.seed, verbose=False)
        return [ResultRecord(ctx.exp_id, cfg.kind, ctx.hash, r.name, 0, 0.0, 0, 0, 0,
                             float(r.statistic), 0.0, r.target, r.status == "pass", r.runtime)
                for r in report.results]
    spec = cfg.to_spec()
    outer = range(cfg.n_outer_paths)
    if threads > 1 and cfg.n_outer_paths > 1:
        with ThreadPoolExecutor(threads) as pool:
            chunks = list(pool.map(lambda o: _per_outer(ctx, spec, o), outer))
    else:
        chunks = [_per_outer(ctx, spec, o) for o in outer]
    return [r for chunk in chunks for r in chunk]
