"""One-step integrators: Euler-Maruyama, backward (drift-implicit) Euler, projected Euler.

All three share the update skeleton  x -> x~ + h f(x~) + g(x~) dW  where x~ is
x itself (EM), the implicit solution of z = b + h f(z) (backward Euler, with
b = x + g(x) dW), or the radial projection of x onto the ball of radius
R = h^(-1/(2(kappa+1))) (projected Euler). Backward and projected Euler keep
their long-time accuracy for superlinearly growing dissipative drift; plain
Euler-Maruyama is provided as the baseline that visibly fails there, so its
step never raises on overflow -- it returns the non-finite state and callers
tag the path divergent.

Public step functions act on a single state vector; the *_batch variants act
on ensembles with a leading batch axis and perform the identical floating
point operations elementwise, so a batch of one reproduces the public result
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SolverFailure, UsageError
from .model import SdeProblem, diffusion_eval, drift_rows, diffusion_rows

__all__ = [
    "NewtonConfig",
    "SchemeConfig",
    "SchemeOrders",
    "VARIANTS",
    "scheme_orders",
    "step_ceiling",
    "em_step",
    "solve_implicit",
    "backward_euler_step",
    "drift_jacobian",
    "project",
    "projected_euler_step",
    "step_batch",
    "project_batch",
    "solve_implicit_batch",
]

VARIANTS = ("em", "be", "pe")

_FALLBACKS = ("damped_newton", "scalar_bisection_if_d1", "error")


@dataclass(frozen=True)
class NewtonConfig:
    """Controls for the per-step implicit solve.

    fallback:
      * "damped_newton"            -- halve the Newton step while the residual grows
      * "scalar_bisection_if_d1"   -- damping plus, for scalar problems, a
                                      guaranteed bracket bisection rescue
      * "error"                    -- undamped; raise as soon as iterations run out
    """

    residual_tol: float = 1e-12
    max_iter: int = 50
    fallback: str = "damped_newton"

    def __post_init__(self):
        if self.residual_tol <= 0.0:
            raise UsageError(f"residual_tol must be positive, got {self.residual_tol}")
        if self.max_iter < 1:
            raise UsageError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.fallback not in _FALLBACKS:
            raise UsageError(
                f"fallback must be one of {_FALLBACKS}, got {self.fallback!r}")


@dataclass(frozen=True)
class SchemeConfig:
    """Which integrator to run and how its implicit/projection internals behave."""

    variant: str = "be"
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    projection_exponent_override: Optional[float] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if (self.projection_exponent_override is not None
                and self.projection_exponent_override <= 0.0):
            raise UsageError("projection exponent override must be positive")


@dataclass(frozen=True)
class SchemeOrders:
    """Local weak order q1, local strong order q2, and the implied global order.

    The fundamental long-time theorem turns (q1, q2) with 1/2 < q2 <= q1 - 1/2
    into a global strong rate of q2 - 1/2 that holds uniformly in time.
    requires_global_lipschitz marks schemes whose orders are only valid under
    globally Lipschitz coefficients (Euler-Maruyama here).
    """

    q1: float
    q2: float
    global_order: float
    requires_global_lipschitz: bool


def scheme_orders(variant: str) -> SchemeOrders:
    """Order metadata for a scheme variant."""
    if variant not in VARIANTS:
        raise UsageError(f"variant must be one of {VARIANTS}, got {variant!r}")
    return SchemeOrders(q1=1.5, q2=1.0, global_order=0.5,
                        requires_global_lipschitz=(variant == "em"))


def step_ceiling(variant: str, p: float, alpha1: float, h0: float = 1.0) -> float:
    """Largest step size the long-time theorems admit for this scheme.

    h1 = min(1/(p alpha1), h0) for the implicit scheme; the projected scheme
    additionally needs h <= 1/(2 p alpha1) (stated to hold below an
    analysis-only offset of alpha1, so this is its conservative limit).
    """
    if variant not in VARIANTS:
        raise UsageError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if p <= 0.0 or alpha1 <= 0.0:
        raise UsageError(f"p and alpha1 must be positive, got p={p}, alpha1={alpha1}")
    h1 = min(1.0 / (p * alpha1), h0)
    if variant == "pe":
        return min(h1, 1.0 / (2.0 * p * alpha1))
    return h1


# ---------------------------------------------------------------------------
# shared low-level pieces
# ---------------------------------------------------------------------------

def _row_norms(Z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", Z, Z))


def _apply_diffusion_batch(problem: SdeProblem, Z: np.ndarray,
                           dW: np.ndarray) -> np.ndarray:
    if problem.diffusion_apply is not None:
        return np.asarray(problem.diffusion_apply(Z, dW), dtype=float)
    G = diffusion_rows(problem, Z)
    return np.einsum("bdm,bm->bd", G, dW)


def _jacobian_rows(problem: SdeProblem, Z: np.ndarray) -> np.ndarray:
    """Drift Jacobians over a batch, (B, d) -> (B, d, d)."""
    if problem.drift_jacobian_batch is not None:
        return np.asarray(problem.drift_jacobian_batch(Z), dtype=float)
    if problem.drift_jacobian is not None:
        return np.stack([np.asarray(problem.drift_jacobian(z), dtype=float) for z in Z])
    # central finite differences, one column at a time
    d = problem.d
    eps = 1e-6 * (1.0 + np.max(np.abs(Z), axis=1))
    cols = []
    for j in range(d):
        E = np.zeros_like(Z)
        E[:, j] = eps
        cols.append((drift_rows(problem, Z + E) - drift_rows(problem, Z - E))
                    / (2.0 * eps)[:, None])
    return np.stack(cols, axis=2)


def drift_jacobian(problem: SdeProblem, x: np.ndarray) -> np.ndarray:
    """(d, d) Jacobian of the drift: analytic when the problem provides one,
    otherwise central finite differences with step 1e-6 * (1 + |x|_inf)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise UsageError(
            f"state shape {x.shape} does not match problem dimension ({problem.d},)")
    return _jacobian_rows(problem, x[None, :])[0]


def _check_dw(problem: SdeProblem, dW: np.ndarray) -> np.ndarray:
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (problem.m,):
        raise UsageError(
            f"increment shape {dW.shape} does not match noise dimension ({problem.m},)")
    return dW


# ---------------------------------------------------------------------------
# Euler-Maruyama
# ---------------------------------------------------------------------------

def em_step(problem: SdeProblem, x: np.ndarray, h: float, dW: np.ndarray) -> np.ndarray:
    """One explicit Euler step x + h f(x) + g(x) dW.

    Overflow is deliberately not an error: with superlinear drift the explicit
    scheme can and does blow up, and the non-finite result is the divergence
    tag the ensemble layer counts.
    """
    if h <= 0.0:
        raise UsageError(f"h must be positive, got {h}")
    dW = _check_dw(problem, dW)
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise UsageError(
            f"state shape {x.shape} does not match problem dimension ({problem.d},)")
    return _em_step_batch(problem, x[None, :], dW[None, :], h)[0]


def _em_step_batch(problem, Z, dW, h):
    with np.errstate(over="ignore", invalid="ignore"):
        return Z + h * drift_rows(problem, Z) + _apply_diffusion_batch(problem, Z, dW)


# ---------------------------------------------------------------------------
# implicit solve and backward Euler
# ---------------------------------------------------------------------------

def solve_implicit_batch(problem: SdeProblem, b: np.ndarray, h: float,
                         cfg: NewtonConfig = NewtonConfig(),
                         step_index: Optional[int] = None) -> np.ndarray:
    """Solve z - h f(z) = b rowwise for a batch b of shape (B, d).

    Newton iteration from z = b with analytic (or finite-difference) Jacobians;
    the strong monotonicity of z - h f(z) for dissipative drift makes the root
    unique, and plain Newton almost always converges in a handful of
    iterations. Damping and the scalar bisection bracket exist for robustness
    at extreme states.
    """
    B, d = b.shape
    finite = np.isfinite(b).all(axis=1)
    if not bool(finite.all()):
        # rows already tagged divergent stay divergent; solve the rest
        z = np.full_like(b, np.nan)
        if bool(finite.any()):
            z[finite] = solve_implicit_batch(problem, b[finite], h, cfg,
                                             step_index)
        return z
    tol = cfg.residual_tol
    z = b.copy()
    F = z - h * drift_rows(problem, z) - b
    rn = _row_norms(F)
    damped = cfg.fallback != "error"
    eye = np.eye(d)
    for _ in range(cfg.max_iter):
        conv = rn <= tol
        if bool(np.all(conv)):
            return z
        J = eye - h * _jacobian_rows(problem, z)
        if d == 1:
            dz = F / J[:, :, 0]
        else:
            dz = np.linalg.solve(J, F[..., None])[..., 0]
        alpha = np.ones(B)
        while True:
            z_new = z - alpha[:, None] * dz
            F_new = z_new - h * drift_rows(problem, z_new) - b
            rn_new = _row_norms(F_new)
            if not damped:
                break
            worse = ~conv & ~(rn_new <= rn) & (alpha > 1e-8)
            if not bool(np.any(worse)):
                break
            alpha[worse] *= 0.5
        upd = ~conv
        z[upd] = z_new[upd]
        F[upd] = F_new[upd]
        rn[upd] = rn_new[upd]

    bad = ~(rn <= tol)
    if bool(np.any(bad)):
        if d == 1 and cfg.fallback == "scalar_bisection_if_d1":
            z[bad, 0] = _bisect_scalar(problem, b[bad, 0], h, tol)
            return z
        worst = int(np.nanargmax(np.where(np.isfinite(rn), rn, np.inf)))
        raise SolverFailure(
            f"implicit solve did not converge within {cfg.max_iter} iterations "
            f"(worst residual {rn[worst]:.3e})",
            last_iterate=z[worst].copy(), residual=float(rn[worst]),
            step_index=step_index)
    return z


def _bisect_scalar(problem: SdeProblem, b: np.ndarray, h: float,
                   tol: float) -> np.ndarray:
    """Guaranteed-bracket bisection for scalar implicit solves.

    z - h f(z) - b is increasing for dissipative drift and the growth bound
    |f(z)|^2 <= c2 |z|^(2 kappa) + c3 confines the root to
    |z| <= |b| + h sqrt(c2 |b|^(2 kappa) + c3) + 1.
    """
    kappa = problem.constants.kappa
    c2, c3 = problem.c2, problem.c3
    width = np.abs(b) + h * np.sqrt(c2 * np.abs(b) ** (2.0 * kappa) + c3) + 1.0
    lo, hi = -width, width

    def resid(v):
        return v - h * drift_rows(problem, v[:, None])[:, 0] - b

    flo = resid(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = resid(mid)
        if bool(np.all(np.abs(fm) <= tol)):
            return mid
        left = (fm > 0.0) == (flo > 0.0)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
    raise SolverFailure("bisection bracket failed to reach residual tolerance",
                        last_iterate=0.5 * (lo + hi), residual=float(np.max(np.abs(fm))))


def solve_implicit(problem: SdeProblem, b: np.ndarray, h: float,
                   cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """Solve z - h f(z) = b for a single right-hand side (d,)."""
    if h <= 0.0:
        raise UsageError(f"h must be positive, got {h}")
    b = np.asarray(b, dtype=float)
    if b.shape != (problem.d,):
        raise UsageError(
            f"rhs shape {b.shape} does not match problem dimension ({problem.d},)")
    return solve_implicit_batch(problem, b[None, :], h, cfg)[0]


def backward_euler_step(problem: SdeProblem, x: np.ndarray, h: float,
                        dW: np.ndarray,
                        cfg: NewtonConfig = NewtonConfig()) -> np.ndarray:
    """One drift-implicit Euler step: solve z = x + g(x) dW + h f(z)."""
    if h <= 0.0:
        raise UsageError(f"h must be positive, got {h}")
    dW = _check_dw(problem, dW)
    g = diffusion_eval(problem, x)
    b = np.asarray(x, dtype=float) + g @ dW
    return solve_implicit(problem, b, h, cfg)


def _be_step_batch(problem, Z, dW, h, cfg, step_index=None):
    b = Z + _apply_diffusion_batch(problem, Z, dW)
    return solve_implicit_batch(problem, b, h, cfg, step_index=step_index)


# ---------------------------------------------------------------------------
# projection and projected Euler
# ---------------------------------------------------------------------------

def _projection_radius(h: float, kappa: float,
                       exponent_override: Optional[float] = None) -> float:
    if not (0.0 < h <= 1.0):
        raise UsageError(f"projection requires h in (0, 1], got {h}")
    e = exponent_override if exponent_override is not None \
        else 1.0 / (2.0 * (kappa + 1.0))
    return h ** (-e)


def project(x: np.ndarray, h: float, kappa: float,
            exponent_override: Optional[float] = None) -> np.ndarray:
    """Radial projection onto the ball of radius R = h^(-1/(2(kappa+1))).

    Identity inside the ball, x * R/|x| outside; 1-Lipschitz and fixes the
    origin, which is exactly what the projected scheme's stability argument
    needs.
    """
    x = np.asarray(x, dtype=float)
    R = _projection_radius(h, kappa, exponent_override)
    nrm = float(np.sqrt(np.dot(x, x)))
    if nrm <= R:
        return x.copy()
    return x * (R / nrm)


def project_batch(Z: np.ndarray, R: float) -> np.ndarray:
    nrm = _row_norms(Z)
    scale = np.where(nrm > R, R / np.where(nrm > 0.0, nrm, 1.0), 1.0)
    return Z * scale[:, None]


def projected_euler_step(problem: SdeProblem, x: np.ndarray, h: float,
                         dW: np.ndarray,
                         cfg: SchemeConfig = SchemeConfig(variant="pe")) -> np.ndarray:
    """One projected Euler step: explicit Euler from the projected state.

    The returned state is the raw Euler output; the next step projects it
    again, so iterating this map reproduces the projected scheme exactly.
    """
    dW = _check_dw(problem, dW)
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise UsageError(
            f"state shape {x.shape} does not match problem dimension ({problem.d},)")
    return _pe_step_batch(problem, x[None, :], dW[None, :], h, cfg)[0]


def _pe_step_batch(problem, Z, dW, h, cfg):
    R = _projection_radius(h, problem.constants.kappa,
                           cfg.projection_exponent_override)
    Zb = project_batch(Z, R)
    with np.errstate(over="ignore", invalid="ignore"):
        return Zb + h * drift_rows(problem, Zb) + _apply_diffusion_batch(problem, Zb, dW)


# ---------------------------------------------------------------------------
# dispatcher used by the simulation engine
# ---------------------------------------------------------------------------

def step_batch(problem: SdeProblem, cfg: SchemeConfig, Z: np.ndarray,
               dW: np.ndarray, h: float, step_index: Optional[int] = None) -> np.ndarray:
    """Advance a batch of states one step under the configured scheme."""
    if cfg.variant == "em":
        return _em_step_batch(problem, Z, dW, h)
    if cfg.variant == "be":
        return _be_step_batch(problem, Z, dW, h, cfg.newton, step_index=step_index)
    return _pe_step_batch(problem, Z, dW, h, cfg)
