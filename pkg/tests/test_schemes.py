"""One-step integrators: frozen-value oracles, algebraic invariants, failure paths."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sde_longtime import (MonotoneConstants, NewtonConfig, SchemeConfig,
                          SdeProblem, SolverFailure, UsageError,
                          backward_euler_step, build_allen_cahn,
                          build_ginzburg_landau, drift_jacobian, em_step,
                          project, projected_euler_step, scheme_orders,
                          solve_implicit, step_ceiling)
from sde_longtime.schemes import (VARIANTS, project_batch,
                                  solve_implicit_batch, step_batch)


@pytest.fixture(scope="module")
def gl():
    # drift -x - x^3, diffusion x, kappa = 3
    return build_ginzburg_landau(eta=-1.5, sigma=1.0, theta=1.0)


def _still_problem(d=2):
    """Zero drift, zero diffusion: every scheme must return the state unchanged."""
    c = MonotoneConstants(alpha1=1.0, p_star=2.0, kappa=1.0, c1=1.0)
    return SdeProblem(name="still", d=d, m=1,
                      drift=lambda x: np.zeros(d),
                      diffusion=lambda x: np.zeros((d, 1)),
                      constants=c)


# ---------------------------------------------------------------------------
# frozen oracles (roots recomputed from the cubic's companion matrix)
# ---------------------------------------------------------------------------

def test_implicit_solve_cubic_oracle(gl):
    # z - 0.5(-z - z^3) = 1  <=>  z^3 + 3z - 2 = 0; unique real root via
    # np.roots([1, 0, 3, -2]) = 0.5960716379833214
    z = solve_implicit(gl, np.array([1.0]), 0.5)
    assert z.shape == (1,)
    assert z[0] == pytest.approx(0.5960716379833214, abs=1e-13)
    # z^3 + 3z - 2.4 = 0; root 0.6903366450712343
    z = solve_implicit(gl, np.array([1.2]), 0.5)
    assert z[0] == pytest.approx(0.6903366450712343, abs=1e-13)


def test_backward_euler_two_steps_zero_noise_oracle(gl):
    # with dW = 0 the step is the pure implicit map; composing the two cubic
    # roots gives 0.379204985417161 (recomputed independently via np.roots)
    z1 = backward_euler_step(gl, np.array([1.0]), 0.5, np.array([0.0]))
    z2 = backward_euler_step(gl, z1, 0.5, np.array([0.0]))
    assert z2[0] == pytest.approx(0.379204985417161, abs=1e-13)


def test_em_step_exact_arithmetic(gl):
    # 10 + 0.5 * (-10 - 1000) + 0 = -495, exact in floating point
    z = em_step(gl, np.array([10.0]), 0.5, np.array([0.0]))
    assert z[0] == -495.0


def test_projection_outside_ball_oracle():
    # kappa = 2, h = 2^-4: R = h^(-1/6) = 2^(2/3) = 1.5874010519682
    # |x| = 5 > R, so the image is x * R/5
    y = project(np.array([3.0, 4.0]), 2.0 ** -4, 2.0)
    R = 2.0 ** (2.0 / 3.0)
    npt.assert_allclose(y, np.array([3.0, 4.0]) * (R / 5.0), rtol=1e-15)
    assert float(np.hypot(*y)) == pytest.approx(R, rel=1e-15)


def test_projected_euler_step_oracle(gl):
    # kappa = 3, h = 2^-4: R = 2^(1/2); from the projected state
    # sqrt(2) + (1/16)(-sqrt(2) - 2 sqrt(2)) = 13 sqrt(2)/16
    z = projected_euler_step(gl, np.array([10.0]), 2.0 ** -4, np.array([0.0]))
    assert z[0] == pytest.approx(13.0 * np.sqrt(2.0) / 16.0, rel=1e-15)
    assert z[0] == pytest.approx(1.1490485194281397, abs=1e-15)


def test_explicit_step_substitution_and_inactive_projection(gl):
    # 1 + 0.25 * (-1 - 1) + 1 * 0.1 = 0.6, exact in floating point; the
    # radius at h = 1/4 exceeds |x| = 1, so projecting first changes nothing
    # and the projected step reproduces the plain step bit for bit.
    e = em_step(gl, np.array([1.0]), 0.25, np.array([0.1]))
    assert e[0] == 0.6
    z = projected_euler_step(gl, np.array([1.0]), 0.25, np.array([0.1]))
    npt.assert_array_equal(z, e)


def test_origin_is_absorbing_for_every_scheme(gl):
    # f(0) = 0 and g(0) = 0: the implicit right-hand side is b = 0 and
    # z = h f(z) is solved exactly by 0; the explicit maps add nothing.
    assert solve_implicit(gl, np.array([0.0]), 0.5)[0] == 0.0
    assert backward_euler_step(gl, np.array([0.0]), 0.5,
                               np.array([0.7]))[0] == 0.0
    assert projected_euler_step(gl, np.array([0.0]), 2.0 ** -4,
                                np.array([0.3]))[0] == 0.0
    assert em_step(gl, np.array([0.0]), 0.5, np.array([-1.3]))[0] == 0.0


def test_implicit_solve_linear_resolvent_value():
    # f(z) = -z: the implicit equation (1 + h) z = b has the closed form
    # b / (1 + h) = 0.8; the custom problem exercises the finite-difference
    # Jacobian path, so the root is exact only to the residual tolerance.
    c = MonotoneConstants(alpha1=1.0, p_star=2.0, kappa=1.0, c1=1.01)
    lin = SdeProblem(name="lin", d=1, m=1, drift=lambda x: -x,
                     diffusion=lambda x: np.zeros((1, 1)), constants=c)
    z = solve_implicit(lin, np.array([1.0]), 0.25)
    assert z[0] == pytest.approx(0.8, abs=1e-11)


# ---------------------------------------------------------------------------
# projection map: identity inside, nonexpansive everywhere, bounded image
# ---------------------------------------------------------------------------

def test_projection_is_identity_inside_ball():
    x = np.array([0.3, -0.4])
    y = project(x, 0.25, 3.0)  # R = 4^(1/8) > 1 > |x| = 0.5
    npt.assert_array_equal(y, x)
    assert y is not x  # caller's state must never alias the scheme's output


def test_projection_exponent_override():
    # override 1/2 at h = 1/16 gives R = 4 regardless of kappa
    y = project(np.array([5.0, 0.0]), 1.0 / 16.0, 3.0, exponent_override=0.5)
    npt.assert_allclose(y, [4.0, 0.0], rtol=1e-15)


_coords = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(x=_coords, y=_coords, k=st.integers(0, 10), kappa=st.sampled_from([1.0, 2.0, 3.0]))
def test_projection_trio(x, y, k, kappa):
    """Fixes the origin, never leaves the ball, never expands distances."""
    h = 2.0 ** -k
    R = h ** (-1.0 / (2.0 * (kappa + 1.0)))
    x, y = np.asarray(x), np.asarray(y)
    px, py = project(x, h, kappa), project(y, h, kappa)
    assert np.all(project(np.zeros(3), h, kappa) == 0.0)
    assert float(np.linalg.norm(px)) <= R * (1.0 + 1e-12)
    gap, pgap = float(np.linalg.norm(x - y)), float(np.linalg.norm(px - py))
    assert pgap <= gap * (1.0 + 1e-12) + 1e-15


@settings(max_examples=200, deadline=None)
@given(x=_coords, k=st.integers(0, 12), q=st.sampled_from([1, 2, 3]))
def test_projection_displacement_bound(x, k, q):
    """|x - proj(x)| <= 2 (1 + |x|^(q+1)) h^(q/8) for kappa = 3.

    The displacement is max(0, |x| - R) and |x| - R <= |x|^(q+1) / R^q
    whenever |x| > R, with R = h^(-1/8).
    """
    h = 2.0 ** -k
    x = np.asarray(x)
    nrm = float(np.linalg.norm(x))
    disp = float(np.linalg.norm(x - project(x, h, 3.0)))
    assert disp <= 2.0 * (1.0 + nrm ** (q + 1)) * h ** (q / 8.0) * (1.0 + 1e-12)


def test_project_batch_matches_single():
    rng = np.random.default_rng(7)
    Z = rng.normal(scale=3.0, size=(40, 2))
    R = 1.25
    out = project_batch(Z, R)
    for i in range(40):
        nrm = float(np.linalg.norm(Z[i]))
        expect = Z[i] if nrm <= R else Z[i] * (R / nrm)
        # batch norms come from einsum, whose summation order may differ from
        # np.linalg.norm by one ulp
        npt.assert_allclose(out[i], expect, rtol=5e-16, atol=0.0)


# ---------------------------------------------------------------------------
# implicit solve: residuals, nonexpansiveness, fallbacks, failure reporting
# ---------------------------------------------------------------------------

def test_implicit_residuals_recomputed(gl):
    rng = np.random.default_rng(11)
    b = rng.uniform(-5.0, 5.0, size=(64, 1))
    z = solve_implicit_batch(gl, b, 0.25)
    resid = z - 0.25 * np.stack([gl.drift(r) for r in z]) - b
    assert float(np.max(np.abs(resid))) <= 1e-12


def test_implicit_residuals_multidimensional():
    ac = build_allen_cahn(K=4)
    rng = np.random.default_rng(12)
    b = rng.uniform(-2.0, 2.0, size=(32, 3))
    z = solve_implicit_batch(ac, b, 15.0 / 2.0 ** 10)
    f = np.stack([ac.drift(r) for r in z])
    resid = np.linalg.norm(z - (15.0 / 2.0 ** 10) * f - b, axis=1)
    assert float(np.max(resid)) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(b1=st.floats(-50.0, 50.0), b2=st.floats(-50.0, 50.0),
       h=st.sampled_from([0.5, 0.125, 2.0 ** -6]))
def test_resolvent_is_nonexpansive(gl, b1, b2, h):
    """For dissipative drift the map b -> z(b) shrinks distances: this is the
    mechanism behind the implicit scheme's unconditional long-time stability."""
    z1 = solve_implicit(gl, np.array([b1]), h)
    z2 = solve_implicit(gl, np.array([b2]), h)
    assert abs(z1[0] - z2[0]) <= abs(b1 - b2) * (1.0 + 1e-10) + 1e-13


def test_solver_failure_reports_iterate_and_residual(gl):
    cfg = NewtonConfig(fallback="error", max_iter=1)
    with pytest.raises(SolverFailure) as exc:
        solve_implicit_batch(gl, np.array([[5.0]]), 0.5, cfg, step_index=7)
    err = exc.value
    assert err.residual > 0.0
    assert err.last_iterate.shape == (1,)
    assert err.step_index == 7
    assert "1 iterations" in str(err)


def test_scalar_bisection_rescue_matches_newton(gl):
    # starve Newton of iterations; the bracket bisection must still land on
    # the same root the damped solver finds
    rescued = solve_implicit(gl, np.array([5.0]), 0.5,
                             NewtonConfig(fallback="scalar_bisection_if_d1",
                                          max_iter=1))
    reference = solve_implicit(gl, np.array([5.0]), 0.5)
    assert rescued[0] == pytest.approx(reference[0], abs=1e-10)


def test_divergent_rows_pass_through_solver(gl):
    b = np.array([[np.nan], [1.0]])
    z = solve_implicit_batch(gl, b, 0.5)
    assert np.isnan(z[0, 0])
    assert z[1, 0] == solve_implicit(gl, np.array([1.0]), 0.5)[0]


# ---------------------------------------------------------------------------
# explicit scheme overflow semantics
# ---------------------------------------------------------------------------

def test_em_iteration_diverges_without_raising(gl):
    x = np.array([10.0])
    for _ in range(10):
        x = em_step(gl, x, 0.5, np.array([0.0]))
    assert not np.all(np.isfinite(x))


# ---------------------------------------------------------------------------
# degenerate dynamics: every scheme fixes the state
# ---------------------------------------------------------------------------

def test_zero_dynamics_fix_state_under_all_schemes():
    problem = _still_problem()
    x = np.array([0.5, -0.25])  # inside the projection ball at h = 1/4
    dW = np.array([0.7])
    npt.assert_array_equal(em_step(problem, x, 0.25, dW), x)
    npt.assert_array_equal(backward_euler_step(problem, x, 0.25, dW), x)
    npt.assert_array_equal(projected_euler_step(problem, x, 0.25, dW), x)


# ---------------------------------------------------------------------------
# batch dispatcher reproduces the public single-state steps bit for bit
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_step_batch_matches_single_steps(variant, gl):
    rng = np.random.default_rng(23)
    for problem in (gl, build_allen_cahn(K=4)):
        h = 2.0 ** -5
        Z = rng.normal(scale=1.5, size=(6, problem.d))
        dW = rng.normal(scale=np.sqrt(h), size=(6, problem.m))
        cfg = SchemeConfig(variant=variant)
        out = step_batch(problem, cfg, Z, dW, h)
        for i in range(6):
            if variant == "em":
                one = em_step(problem, Z[i], h, dW[i])
            elif variant == "be":
                one = backward_euler_step(problem, Z[i], h, dW[i])
            else:
                one = projected_euler_step(problem, Z[i], h, dW[i], cfg)
            npt.assert_array_equal(out[i], one)


# ---------------------------------------------------------------------------
# drift Jacobians
# ---------------------------------------------------------------------------

def test_drift_jacobian_analytic(gl):
    # d/dx (-x - x^3) = -1 - 3 x^2 = -13 at x = 2
    npt.assert_allclose(drift_jacobian(gl, np.array([2.0])), [[-13.0]])


def test_drift_jacobian_at_origin(gl):
    npt.assert_array_equal(drift_jacobian(gl, np.array([0.0])), [[-1.0]])
    # lattice problem: the cubic's Jacobian at 0 is the identity, leaving
    # the tridiagonal matrix plus I, all entries exact dyadics
    ac = build_allen_cahn(K=4)
    A_plus_I = np.array([[-31.0, 16.0, 0.0],
                         [16.0, -31.0, 16.0],
                         [0.0, 16.0, -31.0]])
    npt.assert_array_equal(drift_jacobian(ac, np.zeros(3)), A_plus_I)


def test_drift_jacobian_finite_difference_fallback():
    c = MonotoneConstants(alpha1=0.5, p_star=2.0, kappa=3.0, c1=10.0)
    cubic = SdeProblem(name="bare-cubic", d=1, m=1,
                       drift=lambda x: -x ** 3,
                       diffusion=lambda x: np.zeros((1, 1)),
                       constants=c)
    J = drift_jacobian(cubic, np.array([1.5]))
    assert J[0, 0] == pytest.approx(-6.75, rel=1e-5)


def test_drift_jacobian_rejects_bad_shape(gl):
    with pytest.raises(UsageError):
        drift_jacobian(gl, np.zeros(2))


# ---------------------------------------------------------------------------
# scheme metadata: orders and admissible step ceilings
# ---------------------------------------------------------------------------

def test_scheme_orders_values():
    for variant in VARIANTS:
        o = scheme_orders(variant)
        assert (o.q1, o.q2, o.global_order) == (1.5, 1.0, 0.5)
        assert o.requires_global_lipschitz is (variant == "em")
        # the order bookkeeping the uniform-in-time rate rests on
        assert 0.5 < o.q2 <= o.q1 - 0.5
        assert o.global_order == o.q2 - 0.5
    with pytest.raises(UsageError):
        scheme_orders("milstein")


def test_step_ceiling_values():
    assert step_ceiling("be", 1.0, 0.25) == 1.0       # min(4, 1)
    assert step_ceiling("be", 8.0, 0.25) == 0.5       # 1/(8 * 0.25)
    assert step_ceiling("pe", 1.0, 0.25) == 1.0       # min(4, 1, 2)
    assert step_ceiling("pe", 8.0, 0.25) == 0.25      # halved again
    assert step_ceiling("be", 1.0, 0.25, h0=0.125) == 0.125
    with pytest.raises(UsageError):
        step_ceiling("rk4", 1.0, 1.0)
    with pytest.raises(UsageError):
        step_ceiling("be", 0.0, 1.0)
    with pytest.raises(UsageError):
        step_ceiling("be", 1.0, -1.0)


# ---------------------------------------------------------------------------
# the projected state keeps one explicit step affordable
# ---------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(x=st.floats(-1e6, 1e6), k=st.integers(0, 12))
def test_projected_drift_obeys_step_budget(gl, x, k):
    """|f(proj(x))|^2 <= c2/h + c3: after projection the drift increment h f
    stays O(h^(1/2)), which is why the explicit step cannot jump outside the
    stable regime in one move."""
    h = 2.0 ** -k
    y = project(np.array([x]), h, gl.constants.kappa)
    fy = float(gl.drift(y)[0])
    assert fy * fy <= gl.c2 / h + gl.c3


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def test_newton_config_validation():
    with pytest.raises(UsageError):
        NewtonConfig(residual_tol=0.0)
    with pytest.raises(UsageError):
        NewtonConfig(max_iter=0)
    with pytest.raises(UsageError):
        NewtonConfig(fallback="retry")


def test_scheme_config_validation():
    with pytest.raises(UsageError):
        SchemeConfig(variant="heun")
    with pytest.raises(UsageError):
        SchemeConfig(variant="pe", projection_exponent_override=-0.5)


def test_step_size_and_shape_validation(gl):
    with pytest.raises(UsageError):
        em_step(gl, np.array([1.0]), 0.0, np.array([0.0]))
    with pytest.raises(UsageError):
        backward_euler_step(gl, np.array([1.0]), -0.5, np.array([0.0]))
    with pytest.raises(UsageError):
        solve_implicit(gl, np.array([1.0, 2.0]), 0.5)  # wrong dimension
    with pytest.raises(UsageError):
        em_step(gl, np.array([1.0]), 0.5, np.zeros(2))  # wrong noise width
    with pytest.raises(UsageError):
        project(np.array([1.0]), 0.0, 3.0)
    with pytest.raises(UsageError):
        project(np.array([1.0]), 1.5, 3.0)  # projection needs h <= 1
    with pytest.raises(UsageError):
        projected_euler_step(gl, np.array([1.0]), 2.0, np.array([0.0]))
