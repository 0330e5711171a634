"""Built-in problems and the sampled certification of structural conditions."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_longtime import (DomainError, MonotoneConstants, SampleSpec,
                          SdeProblem, UsageError, build_allen_cahn,
                          build_ginzburg_landau, check_contractive_monotone,
                          check_poly_lipschitz, diffusion_eval, drift_eval,
                          max_feasible_pstar, theorem_admissible_p_max)


def _linear_problem(rate=1.0, noise=0.1):
    """Scalar Ornstein-Uhlenbeck: globally Lipschitz, kappa = 1."""
    c = MonotoneConstants(alpha1=rate - 0.5 * 0.0, p_star=2.0, kappa=1.0,
                          c1=rate * rate * 1.01)
    return SdeProblem(
        name="ou", d=1, m=1,
        drift=lambda x: -rate * x,
        diffusion=lambda x: np.full((1, 1), noise),
        constants=c)


# ---------------------------------------------------------------------------
# Ginzburg-Landau builder
# ---------------------------------------------------------------------------

def test_gl_drift_and_diffusion_values():
    gl = build_ginzburg_landau(eta=-1.5, sigma=1.0, theta=1.0)
    # drift x -> (eta + sigma^2/2) x - theta x^3 = -x - x^3
    npt.assert_allclose(drift_eval(gl, np.array([2.0])), [-10.0])
    npt.assert_allclose(drift_eval(gl, np.array([1.0])), [-2.0])
    npt.assert_allclose(diffusion_eval(gl, np.array([2.0])), [[2.0]])
    assert (gl.d, gl.m) == (1, 1)


def test_gl_certified_constants():
    gl = build_ginzburg_landau()
    assert gl.constants.alpha1 == pytest.approx(0.25)
    assert gl.constants.p_star == pytest.approx(1.25)
    assert gl.constants.kappa == 3.0
    assert gl.constants.c1 > 0.0


def test_gl_rejects_non_dissipative_parameters():
    # eta + sigma^2/2 must be negative
    with pytest.raises(UsageError):
        build_ginzburg_landau(eta=-0.4, sigma=1.0)
    with pytest.raises(UsageError):
        build_ginzburg_landau(theta=0.0)


def test_gl_zero_noise_constants():
    gl = build_ginzburg_landau(eta=-1.0, sigma=0.0, theta=1.0)
    assert gl.constants.alpha1 == pytest.approx(1.0)
    assert gl.constants.p_star == 64.0


# ---------------------------------------------------------------------------
# Allen-Cahn builder
# ---------------------------------------------------------------------------

def test_allen_cahn_dimensions_and_drift():
    ac = build_allen_cahn(K=4)
    assert (ac.d, ac.m) == (3, 1)
    npt.assert_allclose(drift_eval(ac, np.ones(3)), [-16.0, 0.0, -16.0])


def test_allen_cahn_discrete_laplacian():
    """The linear part is K^2 tridiag(1, -2, 1): read it off the drift."""
    ac = build_allen_cahn(K=4)
    zero_cubic = lambda v: drift_eval(ac, v)
    e = np.eye(3) * 1e-8
    # drift(x) = A x + x - x^3; at small x the cubic term is negligible
    J = np.stack([(zero_cubic(e[i]) - zero_cubic(-e[i])) / 2e-8
                  for i in range(3)]).T
    A_plus_I = np.array([[-31.0, 16.0, 0.0],
                         [16.0, -31.0, 16.0],
                         [0.0, 16.0, -31.0]])
    npt.assert_allclose(J, A_plus_I, rtol=1e-6)


def test_allen_cahn_diffusion_column():
    ac = build_allen_cahn(K=4)
    x = np.array([0.0, np.pi / 2.0, -np.pi / 2.0])
    npt.assert_allclose(diffusion_eval(ac, x), [[1.0], [2.0], [0.0]],
                        atol=1e-15)


def test_zero_state_values_of_built_in_fields():
    gl = build_ginzburg_landau(eta=-1.5, sigma=1.0, theta=1.0)
    assert drift_eval(gl, np.array([0.0]))[0] == 0.0
    assert diffusion_eval(gl, np.array([0.0]))[0, 0] == 0.0
    ac = build_allen_cahn(K=4)
    npt.assert_array_equal(drift_eval(ac, np.zeros(3)), np.zeros(3))
    # g(u) = sin u + 1 entrywise: the origin column is all ones
    npt.assert_array_equal(diffusion_eval(ac, np.zeros(3)), np.ones((3, 1)))


def test_allen_cahn_smallest_lattice():
    # K=2 leaves a single interior point and the matrix collapses to
    # K^2 * (-2) = -8; the cubic nonlinearity x - x^3 vanishes at x=1,
    # exposing that single entry exactly.
    ac = build_allen_cahn(K=2)
    assert (ac.d, ac.m) == (1, 1)
    npt.assert_array_equal(drift_eval(ac, np.array([1.0])), [-8.0])


def test_allen_cahn_claimed_constants():
    ac = build_allen_cahn(K=4)
    assert ac.constants.alpha1 == pytest.approx(1.0)
    assert ac.constants.p_star == pytest.approx(3.5)
    assert ac.constants.beta1 == pytest.approx(1.0)
    assert ac.constants.kappa == 3.0


def test_allen_cahn_requires_reasonable_K():
    with pytest.raises(UsageError):
        build_allen_cahn(K=1)


# ---------------------------------------------------------------------------
# contractive monotone checker
# ---------------------------------------------------------------------------

def test_monotone_passes_at_certified_constants():
    gl = build_ginzburg_landau()
    rep = check_contractive_monotone(gl)
    assert rep.passed
    assert rep.worst_margin <= 0.0
    assert rep.n_pairs > 9000


def test_monotone_fails_at_inflated_pstar():
    gl = build_ginzburg_landau()
    rep = check_contractive_monotone(gl, p_star=3.5, alpha1=0.25)
    assert not rep.passed
    assert rep.worst_margin > 0.0


def test_monotone_allen_cahn_at_claimed_pair():
    ac = build_allen_cahn(K=4)
    assert check_contractive_monotone(ac, p_star=3.5, alpha1=1.0).passed


def test_monotone_linear_problem():
    assert check_contractive_monotone(_linear_problem()).passed


@settings(deadline=None, max_examples=15)
@given(bump=st.floats(min_value=0.01, max_value=2.0))
def test_monotone_margin_increases_with_pstar(bump):
    """The sampled margin is monotone in p*: raising p* never helps."""
    gl = build_ginzburg_landau()
    base = check_contractive_monotone(gl, p_star=1.25, alpha1=0.25)
    worse = check_contractive_monotone(gl, p_star=1.25 + bump, alpha1=0.25)
    assert worse.worst_margin >= base.worst_margin


def test_max_feasible_pstar_on_gl():
    gl = build_ginzburg_landau()
    assert max_feasible_pstar(gl, alpha1=0.25) == pytest.approx(1.25, abs=0.01)
    # as alpha1 -> 0 the GL budget tends to 1/2 + |eta + sigma^2/2| / sigma^2
    assert max_feasible_pstar(gl, alpha1=1e-12) == pytest.approx(1.5, abs=0.01)


def test_max_feasible_pstar_caps_without_noise_spread():
    gl0 = build_ginzburg_landau(eta=-1.0, sigma=0.0)
    assert max_feasible_pstar(gl0, alpha1=0.5) == 64.0


def test_max_feasible_pstar_zero_when_even_one_fails():
    # alpha1 far beyond the dissipativity rate: no p* can pass
    gl = build_ginzburg_landau()
    assert max_feasible_pstar(gl, alpha1=50.0) == 0.0


# ---------------------------------------------------------------------------
# polynomial Lipschitz checker and growth constants
# ---------------------------------------------------------------------------

def test_poly_lipschitz_passes_at_certified_c1():
    gl = build_ginzburg_landau()
    rep = check_poly_lipschitz(gl)
    assert rep.passed
    assert rep.c2 == pytest.approx(gl.c2)
    assert rep.c3 == pytest.approx(gl.c3)


def test_poly_lipschitz_fails_with_small_c1():
    gl = build_ginzburg_landau()
    assert not check_poly_lipschitz(gl, c1=0.5).passed


def test_poly_lipschitz_rejects_understated_exponent():
    """kappa = 2 cannot absorb a cubic drift under this condition shape."""
    gl = build_ginzburg_landau()
    assert not check_poly_lipschitz(gl, kappa=2.0, c1=2.25).passed


def test_poly_lipschitz_linear_problem_kappa_one():
    rep = check_poly_lipschitz(_linear_problem())
    assert rep.passed


def test_growth_constants_formulas():
    c = MonotoneConstants(alpha1=0.25, p_star=1.25, kappa=3.0, c1=6.0)
    assert c.c2 == pytest.approx(2.0 * 6.0 * 4.0 / 3.0)
    assert c.c3(f0_norm_sq=0.0) == pytest.approx(2.0 * 6.0 * 2.0 / 3.0)
    assert c.c3(f0_norm_sq=5.0) == pytest.approx(10.0 + 8.0)


def test_growth_bound_holds_on_samples():
    """|f(x)|^2 <= c2 |x|^(2 kappa) + c3 follows from the certified c1."""
    gl = build_ginzburg_landau()
    rng = np.random.default_rng(7)
    xs = rng.uniform(-10, 10, size=(2000, 1))
    c2, c3 = gl.c2, gl.c3
    for x in xs:
        fx = drift_eval(gl, x)
        nx = float(np.dot(x, x))
        assert float(np.dot(fx, fx)) <= c2 * nx ** 3.0 + c3 + 1e-9


def test_theorem_admissible_p_max():
    gl = build_ginzburg_landau()
    assert theorem_admissible_p_max(gl.constants) == pytest.approx(0.2)
    ac = build_allen_cahn(K=4)
    assert theorem_admissible_p_max(ac.constants) == pytest.approx(0.6)


# ---------------------------------------------------------------------------
# evaluation plumbing
# ---------------------------------------------------------------------------

def test_eval_shape_validation():
    gl = build_ginzburg_landau()
    with pytest.raises(UsageError):
        drift_eval(gl, np.ones(2))
    with pytest.raises(UsageError):
        diffusion_eval(gl, np.ones(3))


def test_eval_flags_non_finite_output():
    gl = build_ginzburg_landau()
    with pytest.raises(DomainError):
        drift_eval(gl, np.array([1e200]))  # cube overflows


def test_constants_validation():
    with pytest.raises(UsageError):
        MonotoneConstants(alpha1=0.0, p_star=1.25, kappa=3.0, c1=1.0)
    with pytest.raises(UsageError):
        MonotoneConstants(alpha1=0.25, p_star=0.5, kappa=3.0, c1=1.0)
    with pytest.raises(UsageError):
        MonotoneConstants(alpha1=0.25, p_star=1.25, kappa=0.0, c1=1.0)
    with pytest.raises(UsageError):
        MonotoneConstants(alpha1=0.25, p_star=1.25, kappa=3.0, c1=-1.0)


def test_sample_spec_is_deterministic():
    gl = build_ginzburg_landau()
    a = check_contractive_monotone(gl, spec=SampleSpec(n_pairs=500, seed=5))
    b = check_contractive_monotone(gl, spec=SampleSpec(n_pairs=500, seed=5))
    assert a.worst_margin == b.worst_margin
