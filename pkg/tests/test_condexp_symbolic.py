import numpy as np
import pytest

from bdsde_lab.condexp import EnumerationCE, PrefixProjector, RegressionCE, monomial_exponents
from bdsde_lab.core import ProbeSet, partial_mismatch
from bdsde_lab.errors import SolverError, ValidationError
from bdsde_lab.symbolic import coefficients_from_expressions


def test_monomial_counts():
    assert len(monomial_exponents(1, 3)) == 4
    assert len(monomial_exponents(2, 2)) == 6
    assert monomial_exponents(2, 1) == [(0, 0), (1, 0), (0, 1)]


def test_regression_reproduces_polynomials():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(500)
    proj = RegressionCE(3).projector(0, x)
    target = 1 - 2 * x + 0.5 * x ** 3
    assert np.allclose(proj(target), target, atol=1e-10)
    noise = rng.standard_normal(500)
    fitted = proj(target + noise)
    assert fitted.mean() == pytest.approx((target + noise).mean(), abs=1e-12)   # constants preserve means


def test_regression_vector_values_and_constant_state():
    proj = RegressionCE(2).projector(0, np.full((50, 1), 3.0))
    vals = np.arange(100.0).reshape(50, 2)
    assert np.allclose(proj(vals), vals.mean(axis=0))


def test_regression_conditioning_guard():
    x = np.random.default_rng(1).standard_normal((40, 2))
    with pytest.raises(SolverError, match="ill-conditioned"):
        RegressionCE(8, cond_max=1e2).projector(3, x)


def test_prefix_projector_blocks():
    p = PrefixProjector(8, 4)
    out = p(np.arange(8.0))
    assert np.array_equal(out, [1.5] * 4 + [5.5] * 4)
    with pytest.raises(SolverError):
        PrefixProjector(6, 4)
    assert EnumerationCE(3, 1).projector(1, None).block == 4


def test_symbolic_partials_match_differences():
    c = coefficients_from_expressions(1, drift="-x + sin(t)", diffusion="1 + 0.2*cos(x)",
                                      driver="sin(y) + 0.3*z*x", noise="0.2*cos(y)*x", terminal="exp(-x**2)")
    probes = ProbeSet.draw(1, 1.0, n=64, radius=2.0)
    assert max(partial_mismatch(c, probes).values()) < 1e-6


def test_symbolic_multidimensional():
    c = coefficients_from_expressions(2, drift="[-x1, -x2]", diffusion="[[1, 0.1*x2], [0, 1]]",
                                      driver="z1*z2 + y", terminal="x1*x2")
    x = np.array([[0.5, 1.0]])
    assert np.allclose(c.drift(0, x), [[-0.5, -1.0]])
    assert np.allclose(c.diffusion(0, x), [[[1, 0.1], [0, 1]]])
    assert c.diffusion_x(0, x)[0, 0, 1, 1] == pytest.approx(0.1)
    assert np.allclose(c.terminal_x(x), [[1.0, 0.5]])
    assert max(partial_mismatch(c, ProbeSet.draw(2, 1.0, n=16)).values()) < 1e-6


def test_symbolic_discrete_terminal():
    c = coefficients_from_expressions(1, terminal="x0*x1", terminal_nodes=2)
    xs = np.array([[[2.0], [3.0]]])
    assert c.terminal(xs)[0] == 6.0
    assert np.allclose(c.terminal_x(xs), [[[3.0], [2.0]]])


def test_symbolic_smoothness_flag_and_errors():
    assert coefficients_from_expressions(1, terminal="x**2").smooth
    assert not coefficients_from_expressions(1, terminal="Abs(x)").smooth
    with pytest.raises(ValidationError, match="unknown symbols"):
        coefficients_from_expressions(1, terminal="q*x")
    with pytest.raises(ValidationError):
        coefficients_from_expressions(1, terminal="x+")
    with pytest.raises(ValidationError):
        coefficients_from_expressions(2, drift="[x1]")
