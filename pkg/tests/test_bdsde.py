import io

import numpy as np
import pytest

from bdsde_lab.bdsde import (evaluate_u, run_outer, solve_bdsde, solve_jump_system, solve_variational,
                             write_solution_dump)
from bdsde_lab.core import coarsen_increments, sample_b_increments, sample_ensemble
from bdsde_lab.errors import ConfigurationError, SolverError, UnsupportedError, ValidationError
from bdsde_lab.forward import simulate_forward
from bdsde_lab.oracles import tree_enumerate
from bdsde_lab.problems import make_problem
from bdsde_lab.weights import estimate_grad_u_weights, z_one_sided_limits

from conftest import build_spec, within


def test_martingale_identity():
    spec = build_spec(terminal="x", x=0.4, paths=3000)
    run = run_outer(spec)
    sol = run.solution
    # exact up to the regression fit on a finite ensemble (tail paths carry most of it)
    assert np.abs(sol.y_paths - run.bundle.x_path[..., 0]).mean(axis=0).max() < 0.05
    assert np.abs(sol.z_paths - 1.0).mean(axis=0).max() < 0.15
    assert within(sol.u_value, 0.4, sol.std_error)


def test_constant_g_shift():
    spec = make_problem("additive-noise", x=0.5, n_steps=20, n_inner_paths=2000, seed=3)
    run = run_outer(spec)
    b_total = run.noise.b_increments.sum()
    assert within(run.solution.u_value, 0.5 + 0.3 * b_total, run.solution.std_error)
    # the shift passes through the intercept of every regression exactly
    plain = run_outer(make_problem("linear", x=0.5, n_steps=20, n_inner_paths=2000, seed=3))
    assert abs(run.solution.u_value - plain.solution.u_value - 0.3 * b_total) < 1e-12


def test_constant_terminal():
    spec = make_problem("constant", n_steps=10, n_inner_paths=500)
    sol = run_outer(spec).solution
    assert np.allclose(sol.y_paths, 7.0) and np.allclose(sol.z_paths, 0.0, atol=1e-12)
    assert sol.u_value == pytest.approx(7.0)


def test_u_value_is_start_average():
    spec = make_problem("nonlinear", x=0.5, n_steps=20, n_inner_paths=2000)
    sol = run_outer(spec).solution
    assert sol.u_value == pytest.approx(sol.y_at(spec.grid.n_steps).mean(), abs=1e-14)
    assert np.ptp(sol.y_at(spec.grid.n_steps)) < 1e-12


def test_heat_value():
    spec = make_problem("heat", x=0.0, n_steps=50, n_inner_paths=40_000, seed=1)
    u, se = evaluate_u(spec)
    assert within(u, 1.0, se)


def test_outer_independence_without_g():
    spec = make_problem("heat", x=0.5, n_steps=20, n_inner_paths=20_000, n_outer_paths=3)
    vals = [evaluate_u(spec, o) for o in range(3)]
    for u, se in vals[1:]:
        assert abs(u - vals[0][0]) <= 3 * np.hypot(se, vals[0][1])


def test_decay_ode_oracle():
    spec = make_problem("decay", n_steps=100, n_inner_paths=200)
    u, _ = evaluate_u(spec)
    assert u == pytest.approx((1 - 0.01) ** 100, rel=1e-12)   # explicit Euler of y' = -y
    assert abs(u - np.exp(-1)) < 2e-3


def test_picard_matches_explicit():
    spec = make_problem("nonlinear", x=0.5, n_steps=50, n_inner_paths=20_000)
    u0, se0 = evaluate_u(spec)
    u3, se3 = evaluate_u(spec.replace(picard_iterations=3))
    assert abs(u0 - u3) <= 3 * np.hypot(se0, se3) + 1e-2


def test_regression_degree_sanity():
    spec = make_problem("nonlinear", x=0.5, n_steps=50, n_inner_paths=30_000, seed=2)
    u2, se2 = evaluate_u(spec.replace(regression_degree=2))
    u4, se4 = evaluate_u(spec.replace(regression_degree=4))
    assert abs(u2 - u4) < 3 * max(se2, se4)


def test_degenerate_ensemble_falls_back_to_average():
    spec = build_spec(terminal="x**2", diffusion="0", x=1.0, paths=50)
    sol = run_outer(spec).solution
    assert sol.u_value == pytest.approx(1.0)


def test_ill_conditioned_regression_raises():
    spec = build_spec(terminal="x**2", x=0.0, paths=200, regression_degree=12)
    with pytest.raises(SolverError, match="step"):
        run_outer(spec.replace(cond_max=1e3))


def test_mismatched_grid_rejected():
    spec = build_spec(n_steps=10, paths=100)
    other = build_spec(n_steps=20, paths=100)
    noise = sample_ensemble(spec, 0)
    with pytest.raises((ValidationError, ValueError)):
        solve_bdsde(spec, noise, simulate_forward(other, sample_ensemble(other, 0)))


def test_variational_heat_gradient():
    spec = make_problem("heat", x=1.0, n_steps=50, n_inner_paths=20_000)
    run = run_outer(spec)
    var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
    assert within(var.grad_u_value[0], 2.0, var.std_error[0])


def test_variational_linear_terminal():
    spec = build_spec(terminal="3*x", drift="-x", n_steps=40, paths=500)
    run = run_outer(spec)
    var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
    assert var.grad_u_value[0] == pytest.approx(3 * (1 - spec.grid.delta) ** 40, rel=1e-10)


def test_variational_without_forward_terms_equals_terminal_average():
    spec = build_spec(terminal="sin(x)", drift="-0.5*x", diffusion="1 + 0.2*cos(x)", x=0.3, paths=5000)
    run = run_outer(spec)
    var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
    x0 = run.bundle.x_path[:, -1, 0]
    direct = np.cos(x0) * run.bundle.grad_x_path[:, -1, 0, 0]
    assert within(var.grad_u_value[0], direct.mean(), direct.std() / np.sqrt(len(direct)))


def test_variational_matches_weights_nonlinear():
    spec = make_problem("nonlinear", x=1.0, n_steps=50, n_inner_paths=40_000, seed=5)
    run = run_outer(spec)
    var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
    w = estimate_grad_u_weights(spec, run=run)
    assert abs(var.grad_u_value[0] - w.value[0]) <= 3 * np.hypot(var.std_error[0], w.std_error[0])


def test_missing_partials_message():
    spec = make_problem("nonlinear", n_steps=10, n_inner_paths=100)
    bare = spec.replace(coefficients=spec.coefficients.replace(driver_x=None, driver_y=None, driver_z=None))
    run = run_outer(bare)
    with pytest.raises(ConfigurationError, match="mollify"):
        solve_variational(bare, run.noise, run.bundle, run.solution, run.ce)
    smooth = bare.replace(mollify_eps=0.05)
    run = run_outer(smooth)
    solve_variational(smooth, run.noise, run.bundle, run.solution, run.ce)


def test_variational_rejects_discrete_terminal():
    spec = make_problem("jump-product", n_steps=10, n_inner_paths=100)
    run = run_outer(spec)
    with pytest.raises(UnsupportedError):
        solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)


def _jumps(name, x=1.0, n=20, paths=4000, **kw):
    spec = make_problem(name, x=x, n_steps=n, n_inner_paths=paths, **kw)
    run = run_outer(spec)
    return spec, run, solve_jump_system(spec, run.noise, run.bundle, run.solution, run.ce)


def test_no_jump_without_interior_dependence():
    _, _, jumps = _jumps("jump-first")
    assert np.allclose(jumps[1].delta_z, 0.0, atol=1e-12)


def test_jump_later_node_matches_tree():
    spec = make_problem("jump-later", x=0.2, n_steps=8, n_inner_paths=2 ** 8, noise_mode="rademacher")
    b = sample_b_increments(spec, 0)
    run = run_outer(spec, b_increments=b, enumerate_paths=True)
    jumps = solve_jump_system(spec, run.noise, run.bundle, run.solution, run.ce)
    tree = tree_enumerate(spec, b, gradient=False)
    assert np.allclose(jumps[1].delta_z_paths, tree.jumps[1], atol=1e-12)
    assert jumps[1].delta_z[0] == pytest.approx(1.0)   # Z jumps from 0 to 1 at t/2


def test_jump_product_matches_one_sided_limits():
    spec, run, jumps = _jumps("jump-product", n=40, paths=40_000, seed=1)
    left, right = z_one_sided_limits(spec, 1, run=run)
    comp = jumps[1]
    se = np.sqrt(left.std_error ** 2 + right.std_error ** 2 + comp.delta_z_se ** 2)
    assert abs((right.value - left.value) - comp.delta_z)[0] <= 0.05 * abs(comp.delta_z[0]) + 3 * se[0]


def test_tree_exactness_nonlinear():
    spec = make_problem("nonlinear", x=0.3, n_steps=6, n_inner_paths=64, noise_mode="rademacher", seed=8)
    b = sample_b_increments(spec, 0)
    run = run_outer(spec, b_increments=b, enumerate_paths=True)
    tree = tree_enumerate(spec, b, gradient=False, jumps=False)
    assert abs(run.solution.u_value - tree.u) <= 1e-12
    assert np.max(np.abs(run.solution.y_paths - tree.y)) <= 1e-12
    assert np.max(np.abs(run.solution.z_paths - tree.z)) <= 1e-12


def _max_increment(z):
    return float(np.mean(np.max(np.abs(np.diff(z[..., 0], axis=1)), axis=1)))


def test_z_continuity_single_point_terminal():
    fine = make_problem("nonlinear-sin", x=0.5, n_steps=100, n_inner_paths=5000, seed=6)
    coarse = fine.replace(grid=fine.grid.__class__(1.0, 50), noise_refinement=2)
    inc_coarse = _max_increment(run_outer(coarse).solution.z_paths)
    inc_fine = _max_increment(run_outer(fine).solution.z_paths)
    assert inc_fine < inc_coarse


def test_z_increment_at_partition_node_stabilises():
    incs = []
    for n in (20, 40):
        spec = make_problem("jump-later", x=0.0, n_steps=n, n_inner_paths=5000)
        z = run_outer(spec).solution.z_paths[..., 0]
        k = n // 2
        steps = np.diff(z, axis=1)                           # steps[:, k-1] crosses t/2
        incs.append(-steps[:, k - 1].mean())
        away = np.max(np.abs(np.delete(steps, k - 1, axis=1)).mean(axis=0))
        assert away < 0.1
    assert incs[0] == pytest.approx(1.0, abs=0.05) and incs[1] == pytest.approx(1.0, abs=0.05)


def test_growth_ratios_bounded():
    ry, rz = [], []
    for x in (0.0, 2.0, 8.0):
        sol = run_outer(make_problem("growth", x=x, n_steps=40, n_inner_paths=4000)).solution
        ry.append(np.mean(np.max(sol.y_paths ** 2, axis=1)) / (1 + x * x))
        rz.append(np.mean(np.max(sol.z_paths[..., 0] ** 2, axis=1)) / (1 + x * x))
    assert max(ry) <= 3 * ry[0] and max(rz) <= 3 * rz[0]


def test_solution_dump():
    spec = make_problem("heat", n_steps=5, n_inner_paths=100)
    sol = run_outer(spec).solution
    buf = io.StringIO()
    write_solution_dump(spec, sol, buf)
    lines = buf.getvalue().splitlines()
    assert lines[1] == "s y z1" and len(lines) == 2 + 6
