"""SDE problem definitions and numerical verification of the structural assumptions.

A problem is the Ito SDE

    dX = f(X) dt + g(X) dW,   X in R^d,  W an m-dimensional Brownian motion,

together with claimed constants for two conditions that the long-time error
theory rests on:

* contractive monotonicity:
      <x - y, f(x) - f(y)> + (2 p* - 1)/2 * ||g(x) - g(y)||_F^2  <=  -alpha1 |x - y|^2
* polynomial-growth Lipschitz drift:
      |f(x) - f(y)|^2  <=  c1 (1 + |x|^(2 kappa - 2) + |y|^(2 kappa - 2)) |x - y|^2

from which the growth bound |f(x)|^2 <= c2 |x|^(2 kappa) + c3 follows with
c2 = 2 c1 (kappa + 1) / kappa and c3 = 2 |f(0)|^2 + 2 c1 (kappa - 1) / kappa.

The checkers certify the claimed constants on a seeded sample of state pairs;
they are falsifiers, not proofs, but the sampling is scale-stratified so that
the near-origin regime -- where the monotone margin of the built-in problems
is tightest -- is always probed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UsageError

__all__ = [
    "MonotoneConstants",
    "SdeProblem",
    "SampleSpec",
    "AssumptionReport",
    "drift_eval",
    "diffusion_eval",
    "drift_rows",
    "diffusion_rows",
    "build_ginzburg_landau",
    "build_allen_cahn",
    "check_contractive_monotone",
    "check_poly_lipschitz",
    "max_feasible_pstar",
    "theorem_admissible_p_max",
    "DEFAULT_SAMPLE_SEED",
    "PSTAR_CAP",
]

# Fixed seed for all default assumption-check sampling; documented so that
# certification results are reproducible across machines and thread counts.
DEFAULT_SAMPLE_SEED = 123456789

# Upper cap for the feasible-p* search (e.g. zero-diffusion problems satisfy
# the monotone condition for every p*).
PSTAR_CAP = 64.0


@dataclass(frozen=True)
class MonotoneConstants:
    """Claimed structural constants of a problem.

    beta1 is the optional global Lipschitz constant of the diffusion
    (||g(x)-g(y)||_F^2 <= beta1 |x-y|^2) where one is known.
    """

    alpha1: float
    p_star: float
    kappa: float
    c1: float
    beta1: Optional[float] = None

    def __post_init__(self):
        if not (self.alpha1 > 0.0):
            raise UsageError(f"alpha1 must be positive, got {self.alpha1}")
        if not (self.p_star >= 1.0):
            raise UsageError(f"p_star must be >= 1, got {self.p_star}")
        if not (self.kappa >= 1.0):
            raise UsageError(f"kappa must be >= 1, got {self.kappa}")
        if not (self.c1 > 0.0):
            raise UsageError(f"c1 must be positive, got {self.c1}")

    @property
    def c2(self) -> float:
        return 2.0 * self.c1 * (self.kappa + 1.0) / self.kappa

    def c3(self, f0_norm_sq: float) -> float:
        return 2.0 * f0_norm_sq + 2.0 * self.c1 * (self.kappa - 1.0) / self.kappa


@dataclass(frozen=True)
class SdeProblem:
    """An SDE plus claimed constants and optional fast-path evaluators.

    drift maps a state vector (d,) to (d,); diffusion maps (d,) to the (d, m)
    matrix applied to the Brownian increment. The optional *_batch / _apply
    hooks evaluate whole ensembles (leading batch axis) and an analytic
    Jacobian; the simulation engine falls back to row loops and finite
    differences when they are absent, so custom problems only need the two
    core callables.
    """

    name: str
    d: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    constants: MonotoneConstants
    params: dict = field(default_factory=dict)
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    drift_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_apply: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    drift_jacobian_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise UsageError(f"dimensions must be >= 1, got d={self.d}, m={self.m}")

    @property
    def f0_norm_sq(self) -> float:
        f0 = np.asarray(self.drift(np.zeros(self.d)), dtype=float)
        return float(np.dot(f0, f0))

    @property
    def c2(self) -> float:
        return self.constants.c2

    @property
    def c3(self) -> float:
        return self.constants.c3(self.f0_norm_sq)


@dataclass(frozen=True)
class SampleSpec:
    """Sampling box and budget for the assumption checkers.

    Pairs are drawn uniformly from [lo, hi]^d; half of them are then shrunk
    toward the origin by a common random factor 10^-u, u ~ U[0, 3], because
    the monotone margin of dissipative problems peaks as |x|, |y| -> 0 and a
    plain uniform sample would systematically miss that regime.
    """

    lo: float = -10.0
    hi: float = 10.0
    n_pairs: int = 10_000
    seed: int = DEFAULT_SAMPLE_SEED

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise UsageError(f"empty sampling box [{self.lo}, {self.hi}]")
        if self.n_pairs < 2:
            raise UsageError(f"n_pairs must be >= 2, got {self.n_pairs}")


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of one sampled structural check."""

    condition: str
    n_pairs: int
    worst_margin: float
    passed: bool
    max_feasible: Optional[float] = None
    c2: Optional[float] = None
    c3: Optional[float] = None


def _validate_state(problem: SdeProblem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.d,):
        raise UsageError(
            f"state shape {x.shape} does not match problem dimension ({problem.d},)")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite state passed to {problem.name}: {x}")
    return x


def _norm(x: np.ndarray) -> float:
    return float(np.sqrt(np.dot(x, x)))


def drift_eval(problem: SdeProblem, x: np.ndarray) -> np.ndarray:
    """Evaluate the drift at a single validated state."""
    x = _validate_state(problem, x)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(problem.drift(x), dtype=float)
    if out.shape != (problem.d,):
        raise UsageError(
            f"drift of {problem.name} returned shape {out.shape}, expected ({problem.d},)")
    if not np.all(np.isfinite(out)):
        raise DomainError(f"drift of {problem.name} overflowed at |x|={_norm(x):.3e}")
    return out


def diffusion_eval(problem: SdeProblem, x: np.ndarray) -> np.ndarray:
    """Evaluate the (d, m) diffusion matrix at a single validated state."""
    x = _validate_state(problem, x)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(problem.diffusion(x), dtype=float)
    if out.shape != (problem.d, problem.m):
        raise UsageError(
            f"diffusion of {problem.name} returned shape {out.shape}, "
            f"expected ({problem.d}, {problem.m})")
    if not np.all(np.isfinite(out)):
        raise DomainError(
            f"diffusion of {problem.name} overflowed at |x|={_norm(x):.3e}")
    return out


def drift_rows(problem: SdeProblem, X: np.ndarray) -> np.ndarray:
    """Drift over a batch of states (n, d) -> (n, d)."""
    if problem.drift_batch is not None:
        return np.asarray(problem.drift_batch(X), dtype=float)
    return np.stack([np.asarray(problem.drift(x), dtype=float) for x in X])


def diffusion_rows(problem: SdeProblem, X: np.ndarray) -> np.ndarray:
    """Diffusion matrices over a batch of states (n, d) -> (n, d, m)."""
    return np.stack([np.asarray(problem.diffusion(x), dtype=float) for x in X])


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------

def build_ginzburg_landau(eta: float = -1.5, sigma: float = 1.0,
                          theta: float = 1.0) -> SdeProblem:
    """Scalar stochastic Ginzburg-Landau equation.

        dX = ((eta + sigma^2/2) X - theta X^3) dt + sigma X dW

    Requires theta > 0 and a := eta + sigma^2/2 < 0 (dissipative regime).
    The certified constants put a quarter of the dissipation |a| into alpha1
    and the rest against the diffusion term, giving
    p* = 1/2 + 3|a| / (4 sigma^2) for sigma != 0; for sigma = 0 the monotone
    condition is p*-independent, so alpha1 = |a| and p* sits at the search
    cap. kappa = 3 (the drift is cubic, so |f(x)|^2 grows like |x|^6) with c1
    certified on the default sample.
    """
    if theta <= 0.0:
        raise UsageError(f"theta must be positive, got {theta}")
    a = eta + 0.5 * sigma * sigma
    if a >= 0.0:
        raise UsageError(
            f"eta + sigma^2/2 = {a} must be negative for a dissipative problem")

    def drift(x):
        return a * x - theta * x ** 3

    def diffusion(x):
        return np.asarray([[sigma * x[0]]])

    def drift_jacobian(x):
        return np.asarray([[a - 3.0 * theta * x[0] ** 2]])

    def drift_batch(X):
        return a * X - theta * X ** 3

    def diffusion_apply(X, dW):
        return sigma * X * dW

    def drift_jacobian_batch(X):
        return (a - 3.0 * theta * X ** 2)[..., None]

    if sigma != 0.0:
        alpha1 = 0.25 * (-a)
        p_star = 0.5 + 0.75 * (-a) / (sigma * sigma)
        if p_star < 1.0:
            raise UsageError(
                f"diffusion too strong relative to dissipation: certified p* = "
                f"{p_star:.4f} < 1")
        beta1 = sigma * sigma
    else:
        alpha1 = -a
        p_star = PSTAR_CAP
        beta1 = 0.0

    kappa = 3.0
    c1 = _certify_c1(drift_batch, kappa, d=1)
    constants = MonotoneConstants(alpha1=alpha1, p_star=p_star, kappa=kappa,
                                  c1=c1, beta1=beta1)
    return SdeProblem(
        name="gl", d=1, m=1, drift=drift, diffusion=diffusion,
        constants=constants,
        params={"eta": eta, "sigma": sigma, "theta": theta},
        drift_jacobian=drift_jacobian, drift_batch=drift_batch,
        diffusion_apply=diffusion_apply,
        drift_jacobian_batch=drift_jacobian_batch)


def build_allen_cahn(K: int = 4, g_kind="sine_plus_one") -> SdeProblem:
    """Finite-difference semidiscretization of a stochastic Allen-Cahn equation.

    The interval (0, 1) with homogeneous Dirichlet boundaries is discretized
    at K-1 interior nodes, giving the R^(K-1) system

        dX = (A X + X - X^3) dt + G(X) dW,   A = K^2 tridiag(1, -2, 1),

    driven by a single Brownian motion through the column G(X)_i = g(X_i)
    with g(u) = sin(u) + 1 by default (pass a vectorized callable for a custom
    scalar g; then beta1 is not certified). X^3 acts componentwise.

    The smallest eigenvalue of -A is 4 K^2 sin^2(pi / (2K)) >= 8 for K >= 2,
    which certifies (alpha1, p*) = (1, 3.5) for every K with the sine
    diffusion. kappa = 3 with c1 certified on the default sample.
    """
    if int(K) != K or K < 2:
        raise UsageError(f"K must be an integer >= 2, got {K}")
    K = int(K)
    d = K - 1
    A = K * K * (np.diag(np.full(d, -2.0))
                 + np.diag(np.ones(d - 1), 1)
                 + np.diag(np.ones(d - 1), -1))

    if g_kind == "sine_plus_one":
        def g_scalar(u):
            return np.sin(u) + 1.0
        beta1 = 1.0
        g_name = "sine_plus_one"
    elif callable(g_kind):
        g_scalar = g_kind
        beta1 = None
        g_name = getattr(g_kind, "__name__", "custom")
    else:
        raise UsageError(f"g_kind must be 'sine_plus_one' or a callable, got {g_kind!r}")

    def drift(x):
        return A @ x + x - x ** 3

    def diffusion(x):
        return np.asarray(g_scalar(x), dtype=float)[:, None]

    def drift_jacobian(x):
        return A + np.eye(d) - 3.0 * np.diag(x ** 2)

    def drift_batch(X):
        return X @ A + X - X ** 3          # A is symmetric

    def diffusion_apply(X, dW):
        return np.asarray(g_scalar(X), dtype=float) * dW

    eye = np.eye(d)

    def drift_jacobian_batch(X):
        J = np.broadcast_to(A + eye, (X.shape[0], d, d)).copy()
        idx = np.arange(d)
        J[:, idx, idx] -= 3.0 * X ** 2
        return J

    kappa = 3.0
    c1 = _certify_c1(drift_batch, kappa, d=d)
    constants = MonotoneConstants(alpha1=1.0, p_star=3.5, kappa=kappa,
                                  c1=c1, beta1=beta1)
    return SdeProblem(
        name="allen-cahn", d=d, m=1, drift=drift, diffusion=diffusion,
        constants=constants, params={"K": K, "g": g_name},
        drift_jacobian=drift_jacobian, drift_batch=drift_batch,
        diffusion_apply=diffusion_apply,
        drift_jacobian_batch=drift_jacobian_batch)


# ---------------------------------------------------------------------------
# sampled checks
# ---------------------------------------------------------------------------

def _sample_pairs(spec: SampleSpec, d: int):
    """Seeded scale-stratified state pairs; returns (X, Y), both (n, d)."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    X = gen.uniform(spec.lo, spec.hi, (spec.n_pairs, d))
    Y = gen.uniform(spec.lo, spec.hi, (spec.n_pairs, d))
    half = spec.n_pairs // 2
    scale = 10.0 ** (-gen.uniform(0.0, 3.0, (spec.n_pairs - half, 1)))
    X[half:] *= scale
    Y[half:] *= scale
    keep = np.linalg.norm(X - Y, axis=1) > 0.0
    return X[keep], Y[keep]


def _pair_margins(problem: SdeProblem, spec: SampleSpec):
    """Per-pair building blocks of the monotone margin.

    Returns (a, b) with
      a_i = (<dx, df> + alpha-free terms)/|dx|^2 ... concretely
      a_i = <x-y, f(x)-f(y)> / |x-y|^2,
      b_i = ||g(x)-g(y)||_F^2 / |x-y|^2,
    so the monotone margin at (p*, alpha1) is max_i a_i + (2p*-1)/2 b_i + alpha1.
    """
    X, Y = _sample_pairs(spec, problem.d)
    dX = X - Y
    nsq = np.einsum("ij,ij->i", dX, dX)
    dF = drift_rows(problem, X) - drift_rows(problem, Y)
    a = np.einsum("ij,ij->i", dX, dF) / nsq
    if problem.diffusion_apply is not None and problem.m == 1:
        # one-column diffusion: Frobenius norm of g(x)-g(y) is a plain norm
        ones = np.ones((X.shape[0], 1))
        dG = problem.diffusion_apply(X, ones) - problem.diffusion_apply(Y, ones)
        gsq = np.einsum("ij,ij->i", dG, dG)
    else:
        dG = diffusion_rows(problem, X) - diffusion_rows(problem, Y)
        gsq = np.einsum("ijk,ijk->i", dG, dG)
    b = gsq / nsq
    return a, b


def check_contractive_monotone(problem: SdeProblem,
                               p_star: Optional[float] = None,
                               alpha1: Optional[float] = None,
                               spec: SampleSpec = SampleSpec()) -> AssumptionReport:
    """Certify the contractive monotone condition at (p_star, alpha1) on a sample.

    Both parameters default to the problem's claimed constants. The reported
    worst margin is the sampled maximum of

        [<x-y, f(x)-f(y)> + (2 p* - 1)/2 ||g(x)-g(y)||_F^2 + alpha1 |x-y|^2] / |x-y|^2

    and the check passes iff it is <= 0.
    """
    p_star = problem.constants.p_star if p_star is None else float(p_star)
    alpha1 = problem.constants.alpha1 if alpha1 is None else float(alpha1)
    if p_star < 0.5:
        raise UsageError(f"p_star must be >= 1/2, got {p_star}")
    if alpha1 <= 0.0:
        raise UsageError(f"alpha1 must be positive, got {alpha1}")
    a, b = _pair_margins(problem, spec)
    margins = a + 0.5 * (2.0 * p_star - 1.0) * b + alpha1
    worst = float(np.max(margins))
    return AssumptionReport(condition="contractive_monotone", n_pairs=len(a),
                            worst_margin=worst, passed=worst <= 0.0)


def max_feasible_pstar(problem: SdeProblem,
                       alpha1: Optional[float] = None,
                       spec: SampleSpec = SampleSpec(),
                       cap: float = PSTAR_CAP,
                       tol: float = 1e-3) -> float:
    """Largest p* in [1, cap] passing the sampled monotone check at alpha1.

    Bisection to absolute tolerance `tol` on a fixed pair sample (the margin
    is nondecreasing in p*, so bisection is exact up to tol). Returns 0.0 when
    even p* = 1 fails and `cap` when the cap itself passes.
    """
    alpha1 = problem.constants.alpha1 if alpha1 is None else float(alpha1)
    if alpha1 <= 0.0:
        raise UsageError(f"alpha1 must be positive, got {alpha1}")
    a, b = _pair_margins(problem, spec)

    def margin(p):
        return float(np.max(a + 0.5 * (2.0 * p - 1.0) * b + alpha1))

    if margin(1.0) > 0.0:
        return 0.0
    if margin(cap) <= 0.0:
        return cap
    lo, hi = 1.0, cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if margin(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def check_poly_lipschitz(problem: SdeProblem,
                         kappa: Optional[float] = None,
                         c1: Optional[float] = None,
                         spec: SampleSpec = SampleSpec()) -> AssumptionReport:
    """Certify the polynomial-growth Lipschitz condition at (kappa, c1) on a sample.

    Margin per pair:
        [|f(x)-f(y)|^2 - c1 (1 + |x|^(2k-2) + |y|^(2k-2)) |x-y|^2] / |x-y|^2,
    pass iff the sampled maximum is <= 0. The report carries the derived
    growth constants c2 = 2 c1 (kappa+1)/kappa and
    c3 = 2 |f(0)|^2 + 2 c1 (kappa-1)/kappa.
    """
    kappa = problem.constants.kappa if kappa is None else float(kappa)
    c1 = problem.constants.c1 if c1 is None else float(c1)
    if kappa < 1.0:
        raise UsageError(f"kappa must be >= 1, got {kappa}")
    if c1 <= 0.0:
        raise UsageError(f"c1 must be positive, got {c1}")
    X, Y = _sample_pairs(spec, problem.d)
    dX = X - Y
    nsq = np.einsum("ij,ij->i", dX, dX)
    dF = drift_rows(problem, X) - drift_rows(problem, Y)
    fsq = np.einsum("ij,ij->i", dF, dF)
    pw = 2.0 * kappa - 2.0
    growth = 1.0 + np.linalg.norm(X, axis=1) ** pw + np.linalg.norm(Y, axis=1) ** pw
    margins = fsq / nsq - c1 * growth
    worst = float(np.max(margins))
    c2 = 2.0 * c1 * (kappa + 1.0) / kappa
    c3 = 2.0 * problem.f0_norm_sq + 2.0 * c1 * (kappa - 1.0) / kappa
    return AssumptionReport(condition="polynomial_lipschitz", n_pairs=len(nsq),
                            worst_margin=worst, passed=worst <= 0.0,
                            c2=c2, c3=c3)


def _certify_c1(drift_batch, kappa: float, d: int,
                spec: SampleSpec = SampleSpec()) -> float:
    """Smallest sampled c1 for the polynomial Lipschitz condition, with 5% headroom."""
    X, Y = _sample_pairs(spec, d)
    dX = X - Y
    nsq = np.einsum("ij,ij->i", dX, dX)
    dF = np.asarray(drift_batch(X)) - np.asarray(drift_batch(Y))
    fsq = np.einsum("ij,ij->i", dF, dF)
    pw = 2.0 * kappa - 2.0
    growth = 1.0 + np.linalg.norm(X, axis=1) ** pw + np.linalg.norm(Y, axis=1) ** pw
    return 1.05 * float(np.max(fsq / (nsq * growth)))


def theorem_admissible_p_max(constants: MonotoneConstants) -> float:
    """Largest moment half-order covered by the convergence theorems.

    Equals floor(p*) / (2 kappa - 1); values below 1 mean the guaranteed
    range is empty and experiment reports flag the requested p as outside it.
    """
    return math.floor(constants.p_star) / (2.0 * constants.kappa - 1.0)
