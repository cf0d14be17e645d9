import io

import numpy as np
import pytest

from bdsde_lab.bdsde import run_outer
from bdsde_lab.core import coarsen_increments, sample_b_increments
from bdsde_lab.errors import UnsupportedError, ValidationError
from bdsde_lab.oracles import (GridFunction, fd_gradient, pde_solve, spde_solve_pathwise, tree_enumerate,
                               tree_unconditional)
from bdsde_lab.problems import make_problem, preset_coefficients
from bdsde_lab.symbolic import coefficients_from_expressions

from conftest import build_spec


def test_constant_terminal_stays_constant():
    gf = pde_solve(preset_coefficients("constant"), 1.0, n_time=20)[0]
    assert np.allclose(gf.values, 7.0, atol=1e-12)


def test_heat_closed_form():
    gf = pde_solve(preset_coefficients("heat"), 1.0, h=2 ** -9, n_time=100)[0]
    assert abs(gf(0.0) - 1.0) <= 1e-4
    assert abs(gf(0.5) - 1.25) <= 1e-4


def test_sine_eigenfunction():
    c = coefficients_from_expressions(1, terminal="sin(x)")
    gf = pde_solve(c, 1.0, center=0.0, h=2 ** -7, n_time=200)[0]
    for x in (0.3, 1.0):
        assert abs(gf(x) - np.exp(-0.5) * np.sin(x)) <= 1e-4


def test_decay_ode():
    gf = pde_solve(preset_coefficients("decay"), 1.0, n_time=200)[0]
    assert abs(gf(0.0) - np.exp(-1)) <= 1e-4


def test_pde_refinement_second_order():
    c = coefficients_from_expressions(1, terminal="sin(x)")
    errs = []
    for h, n in ((2 ** -3, 10), (2 ** -4, 20), (2 ** -5, 40)):
        gf = pde_solve(c, 1.0, half_width=8.0, h=h, n_time=n)[0]
        errs.append(abs(gf(1.0) - np.exp(-0.5) * np.sin(1.0)))
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_intermediate_output_times():
    fields = pde_solve(preset_coefficients("heat"), 1.0, center=1.0, n_time=100, output_times=(0.25, 0.5))
    assert [f.time for f in fields] == [0.25, 0.5]
    # u(s, x) = x^2 + s on the remaining horizon
    assert abs(fields[0](1.0) - 1.25) < 1e-4 and abs(fields[1](1.0) - 1.5) < 1e-4


def test_pde_rejects_multidimensional():
    c = coefficients_from_expressions(2, terminal="x1 + x2")
    with pytest.raises(UnsupportedError):
        pde_solve(c, 1.0)


def test_cfl_quality_warning():
    with pytest.warns(RuntimeWarning, match="delta/h"):
        pde_solve(preset_coefficients("heat"), 1.0, h=2 ** -9, n_time=5)


def test_spde_without_noise_is_pde():
    c = preset_coefficients("nonlinear-sin").replace(noise=lambda t, x, y: np.zeros_like(x))
    b = np.random.default_rng(0).standard_normal(50) * 0.1
    a = spde_solve_pathwise(c, 1.0, b, n_time=50)[0]
    p = pde_solve(c, 1.0, n_time=50)[0]
    assert np.array_equal(a.values, p.values)


def test_spde_additive_noise_exact():
    b = np.random.default_rng(1).standard_normal(40) * np.sqrt(1 / 40)
    gf = spde_solve_pathwise(preset_coefficients("additive-noise"), 1.0, b, n_time=40)[0]
    for x in (-0.5, 0.0, 0.7):
        assert abs(gf(x) - (x + 0.3 * b.sum())) < 1e-10


def test_spde_splitting_refines():
    c = preset_coefficients("spde-cos")
    fine = np.random.default_rng(2).standard_normal(400) * np.sqrt(1 / 400)
    ref = spde_solve_pathwise(c, 1.0, fine, h=2 ** -7, n_time=400)[0](0.0)
    errs = [abs(spde_solve_pathwise(c, 1.0, coarsen_increments(fine[:, None], 400 // n)[:, 0],
                                    h=2 ** -7, n_time=n)[0](0.0) - ref) for n in (25, 50, 100)]
    assert errs[0] > errs[1] > errs[2]


def test_spde_matches_monte_carlo():
    spec = make_problem("spde-cos", n_steps=50, n_inner_paths=40_000, seed=2)
    run = run_outer(spec)
    gf = spde_solve_pathwise(spec.coefficients, 1.0, run.noise.b_increments[::-1], n_time=50)[0]
    assert abs(run.solution.u_value - gf(0.0)) <= 5e-2


def test_fd_gradient_examples():
    assert fd_gradient(lambda x: x[0] ** 2, np.array([1.0]), h=1e-3)[0] == pytest.approx(2.0, abs=1e-6)
    assert fd_gradient(lambda x: 3.0, np.array([1.0, -2.0]))[1] == 0.0
    gf = pde_solve(preset_coefficients("heat"), 1.0, center=1.0, n_time=100)[0]
    assert abs(fd_gradient(gf, np.array([1.0]))[0] - 2.0) <= 1e-3
    with pytest.raises(ValidationError):
        fd_gradient(gf, np.array([1.0]), h=0.0)


def test_grid_function_contract():
    with pytest.raises(ValidationError):
        GridFunction(0.0, 1.0, np.zeros(4), 0.0)
    gf = GridFunction(1.0, 2.0, np.linspace(0, 1, 5), 0.5, {"h": 1.0})
    assert np.allclose(gf.x_nodes, [-1, 0, 1, 2, 3]) and gf.spacing == 1.0
    buf = io.StringIO()
    gf.write(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# time=0.5") and lines[1] == "x value" and len(lines) == 7


def test_tree_linear_terminal():
    spec = make_problem("linear", x=0.3, n_steps=6, n_inner_paths=64, noise_mode="rademacher")
    res = tree_enumerate(spec, gradient=False)
    assert np.allclose(res.z, 1.0, rtol=0, atol=1e-14) and res.u == pytest.approx(0.3)


def test_tree_heat_exact():
    spec = make_problem("heat", x=0.0, n_steps=4, n_inner_paths=16, noise_mode="rademacher")
    assert tree_enumerate(spec, gradient=False).u == pytest.approx(1.0, abs=1e-14)


def test_tree_product_jump():
    spec = make_problem("jump-product", x=1.0, n_steps=8, n_inner_paths=256, noise_mode="rademacher")
    res = tree_enumerate(spec, gradient=False)
    # Z jumps from X_{1/2} to 2 X_{1/2}; its mean is x
    assert res.delta_z(1)[0] == pytest.approx(1.0, abs=1e-12)


def test_tree_gradient_heat():
    spec = make_problem("heat", x=1.0, n_steps=6, n_inner_paths=64, noise_mode="rademacher")
    assert tree_enumerate(spec).grad_u[0] == pytest.approx(2.0, abs=1e-6)


def test_tree_caps_and_modes():
    with pytest.raises(ValidationError):
        tree_enumerate(make_problem("heat", n_steps=17, noise_mode="rademacher"))
    with pytest.raises(ValidationError):
        tree_enumerate(make_problem("heat", n_steps=4))


def test_tree_unconditional_additive():
    spec = make_problem("additive-noise", x=0.5, n_steps=4, n_inner_paths=16, noise_mode="rademacher")
    assert tree_unconditional(spec) == pytest.approx(0.5, abs=1e-14)
    b = sample_b_increments(spec, 0)
    assert tree_enumerate(spec, b, gradient=False).u == pytest.approx(0.5 + 0.3 * b.sum(), abs=1e-14)
