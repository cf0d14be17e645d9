import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdsde_lab.bdsde import run_outer, solve_variational
from bdsde_lab.core import NoiseEnsemble, sample_ensemble
from bdsde_lab.errors import ValidationError
from bdsde_lab.forward import simulate_forward
from bdsde_lab.problems import make_problem
from bdsde_lab.weights import (WeightEstimate, compute_weights, estimate_grad_u_weights, estimate_z_discrete,
                               estimate_z_weights, malliavin_derivative, z_one_sided_limits)

from conftest import build_spec, within


def _weights(spec, pairs):
    noise = sample_ensemble(spec, 0)
    return noise, compute_weights(simulate_forward(spec, noise), noise.w_increments, pairs)


def test_unit_case_reduces_to_w_increment():
    spec = build_spec(n_steps=10, paths=50, t=2.0)
    noise, wp = _weights(spec, [(0, 10), (3, 7)])
    total = noise.w_increments.sum(axis=1)
    assert np.allclose(wp.m_values[(0, 10)], total, atol=1e-13)
    assert np.allclose(wp.n_values[(0, 10)], total / 2.0, atol=1e-13)
    # model window [s_3, s_7] is simulation steps 3..6
    assert np.allclose(wp.m_values[(3, 7)], noise.w_increments[:, 3:7].sum(axis=1), atol=1e-13)


def test_zero_noise_gives_zero_weights():
    spec = build_spec(drift="-x", diffusion="1 + 0.5*sin(x)", n_steps=6, paths=3)
    ens = NoiseEnsemble(np.zeros((3, 6, 1)), np.zeros((6, 1)), 0, np.arange(3))
    wp = compute_weights(simulate_forward(spec, ens), ens.w_increments, [(0, 6), (2, 5)])
    for pair in wp.pairs:
        assert np.all(wp.m_values[pair] == 0) and np.all(wp.n_values[pair] == 0)


def test_equal_indices_rejected():
    spec = build_spec(n_steps=4, paths=3)
    with pytest.raises(ValidationError):
        _weights(spec, [(2, 2)])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 17), st.integers(1, 9), st.integers(1, 9))
def test_additivity(r, a, b):
    u, s = r + a, min(r + a + b, 20)
    if u >= s:
        return
    spec = build_spec(drift="sin(x)", diffusion="1 + 0.3*cos(x)", n_steps=20, paths=8, seed=r)
    _, wp = _weights(spec, [(r, s), (r, u), (u, s)])
    assert np.allclose(wp.m_values[(r, s)], wp.m_values[(r, u)] + wp.m_values[(u, s)], atol=1e-12)


def test_ou_second_moment_matches_tangent_quadrature():
    spec = build_spec(drift="-x", n_steps=50, paths=100_000, seed=3)
    _, wp = _weights(spec, [(0, 50)])
    sq = wp.m_values[(0, 50)][:, 0] ** 2
    delta = spec.grid.delta
    quad = np.sum((1 - delta) ** (2 * np.arange(50)) * delta)
    assert within(sq.mean(), quad, sq.std() / np.sqrt(len(sq)))


def test_unit_second_moment():
    spec = build_spec(n_steps=100, paths=100_000, seed=4)
    pairs = [(0, 100), (20, 70), (90, 100)]
    _, wp = _weights(spec, pairs)
    for r, s in pairs:
        sq = wp.m_values[(r, s)][:, 0] ** 2
        assert within(sq.mean(), (s - r) / 100, sq.std() / np.sqrt(len(sq)))


def test_std_error_definition():
    samples = np.array([1.0, 2.0, 4.0, 7.0])
    est = WeightEstimate.from_samples(samples)
    assert est.value == pytest.approx(3.5)
    assert est.std_error == pytest.approx(samples.std(ddof=1) / 2)
    assert est.n_samples == 4


def test_grad_constant_terminal():
    est = estimate_grad_u_weights(make_problem("constant", n_steps=20, n_inner_paths=20_000))
    assert within(est.value[0], 0.0, est.std_error[0])


@pytest.mark.parametrize("name,x,target", [("heat", 1.0, 2.0), ("linear", 0.3, 1.0)])
def test_grad_unit_cases(name, x, target):
    est = estimate_grad_u_weights(make_problem(name, x=x, n_steps=50, n_inner_paths=50_000, seed=1))
    assert within(est.value[0], target, est.std_error[0])


def test_grad_control_variate_reduces_error():
    spec = make_problem("heat", x=1.0, n_steps=50, n_inner_paths=20_000)
    run = run_outer(spec)
    plain = estimate_grad_u_weights(spec, run=run)
    cv = estimate_grad_u_weights(spec, run=run, control_variate=True)
    assert cv.std_error[0] < plain.std_error[0]
    assert within(cv.value[0], 2.0, cv.std_error[0])


def test_z_weights_linear_terminal():
    spec = make_problem("linear", x=0.2, n_steps=20, n_inner_paths=20_000)
    run = run_outer(spec)
    for j in (5, 10, 15):
        est = estimate_z_weights(spec, s_index=j, run=run)
        assert within(est.value[0], 1.0, est.std_error[0], slack=0.02)


def test_z_weights_heat_matches_2x():
    spec = make_problem("heat", x=1.0, n_steps=50, n_inner_paths=50_000, seed=2)
    run = run_outer(spec)
    est = estimate_z_weights(spec, s_index=25, run=run)
    oracle = 2 * run.bundle.x_at(25)[:, 0]
    assert abs(est.value[0] - oracle.mean()) <= 0.05 * abs(oracle.mean()) + 3 * est.std_error[0]
    assert np.mean(np.abs(est.per_path[:, 0] - oracle)) < 0.1


def test_z_weights_nonlinear_matches_solver():
    spec = make_problem("nonlinear", x=1.0, n_steps=50, n_inner_paths=50_000, seed=3)
    run = run_outer(spec)
    for j in (15, 35):
        est = estimate_z_weights(spec, s_index=j, run=run)
        z = run.solution.z_at(j)[:, 0]
        se = np.hypot(est.std_error[0], z.std() / np.sqrt(len(z)))
        assert abs(est.value[0] - z.mean()) <= 0.05 * abs(z.mean()) + 3 * se


def test_z_weights_terminal_node_rejected():
    spec = make_problem("linear", n_steps=10, n_inner_paths=100)
    with pytest.raises(ValidationError):
        estimate_z_weights(spec, s_index=0)


def test_z_discrete_trivial_partition_is_exact_reduction():
    spec = make_problem("nonlinear", x=0.5, n_steps=20, n_inner_paths=5000, partition_times=(0.0, 1.0))
    run = run_outer(spec)
    a = estimate_z_discrete(spec, s_index=12, run=run)
    b = estimate_z_weights(spec, s_index=12, run=run)
    assert np.array_equal(a.value, b.value) and np.array_equal(a.std_error, b.std_error)


def test_z_discrete_later_node():
    spec = make_problem("jump-later", x=0.0, n_steps=40, n_inner_paths=40_000)
    run = run_outer(spec)
    for j in (26, 34):
        est = estimate_z_discrete(spec, s_index=j, run=run)
        assert within(est.value[0], 1.0, est.std_error[0], slack=0.05)
    early = estimate_z_discrete(spec, s_index=10, run=run)
    assert within(early.value[0], 0.0, early.std_error[0], slack=1e-12)


def test_z_discrete_rejects_partition_node():
    spec = make_problem("jump-product", n_steps=10, n_inner_paths=100)
    with pytest.raises(ValidationError, match="z_one_sided_limits"):
        estimate_z_discrete(spec, s_index=5)


def test_one_sided_limits_bracket_node():
    spec = make_problem("jump-product", x=1.0, n_steps=20, n_inner_paths=5000)
    left, right = z_one_sided_limits(spec, 1)
    assert left.anchor != right.anchor


def test_se_grows_near_interval_left_end():
    spec = make_problem("jump-product", x=1.0, n_steps=40, n_inner_paths=20_000)
    run = run_outer(spec)
    ses = [estimate_z_discrete(spec, s_index=j, run=run).std_error[0] for j in (32, 26, 23, 21)]
    assert all(a < b for a, b in zip(ses, ses[1:])), ses


def test_weight_z_growth_bounded():
    ratios = []
    for x in (0.0, 1.0, 2.0, 4.0, 8.0):
        spec = make_problem("growth", x=x, n_steps=20, n_inner_paths=10_000)
        run = run_outer(spec)
        zmax = max(abs(estimate_z_weights(spec, s_index=j, run=run).value[0]) for j in (5, 10, 15))
        ratios.append(zmax / (1 + x))
    assert max(ratios) <= 3 * ratios[0]


def test_malliavin_derivative_examples():
    spec = build_spec(terminal="x", n_steps=10, paths=200)
    run = run_outer(spec)
    var = solve_variational(spec, run.noise, run.bundle, run.solution, run.ce)
    zero = malliavin_derivative(run.bundle, s_index=3, r_index=7, variational=var)
    assert np.all(zero["x"] == 0) and np.all(zero["y"] == 0) and np.all(zero["z"] == 0)
    same = malliavin_derivative(run.bundle, 5, 5)
    assert np.allclose(same["x"], 1.0)
    d = malliavin_derivative(run.bundle, 7, 3, variational=var)
    assert np.allclose(d["y"], 1.0, atol=1e-10)


def test_malliavin_indicator_by_noise_bump():
    # D_s X_r = lim (X_r[W + eps on the step below s] - X_r[W]) / eps, nonzero only for r < s
    spec = build_spec(drift="-0.5*sin(x)", diffusion="1 + 0.3*cos(x)", x=0.2, n_steps=40, paths=20, seed=7)
    noise = sample_ensemble(spec, 0)
    base = simulate_forward(spec, noise)
    s_index, eps = 25, 1e-6
    k = spec.grid.n_steps - s_index            # simulation step covering [s - delta, s]
    w = noise.w_increments.copy()
    w[:, k] += eps
    bumped = simulate_forward(spec, NoiseEnsemble(w, noise.b_increments, 0, noise.inner_ids))
    for r_index in (5, 24, 30, 40):
        fd = (bumped.x_at(r_index) - base.x_at(r_index))[:, 0] / eps
        md = malliavin_derivative(base, s_index, r_index)["x"][:, 0, 0]
        if r_index > s_index:
            assert np.all(fd == 0) and np.all(md == 0)
        else:
            assert np.max(np.abs(fd - md)) < 0.1     # O(delta) from the Euler step at s
