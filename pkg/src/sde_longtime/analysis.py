"""Estimators and rate fits for the experiment outputs.

Order fits regress log2(error) on log2(h) — the ladders are dyadic, so base-2
logs make the abscissa integer-spaced. Points whose error has fallen to the
solver's residual floor carry no rate information and are excluded (with a
logged note) before fitting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import linregress

from .errors import UsageError
from .model import MonotoneConstants, theorem_admissible_p_max
from .schemes import SchemeOrders
from .simulate import ErrorCurve, MomentEstimate, estimate_from_samples

__all__ = [
    "FitResult",
    "ConvergenceReport",
    "mc_mean_with_se",
    "fit_order",
    "make_convergence_report",
    "decay_slope",
    "stationarity_gap",
]

log = logging.getLogger(__name__)


def mc_mean_with_se(samples, p: float = 1.0) -> MomentEstimate:
    """(mean of s^(2p))^(1/(2p)) with its delta-method standard error.

    Sums are formed with math.fsum, so the result does not depend on the
    order of the samples.
    """
    return estimate_from_samples(samples, p)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_order(hs: Sequence[float], errors: Sequence[float]) -> FitResult:
    """Least-squares slope of log2(error) against log2(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.ndim != 1:
        raise UsageError("hs and errors must be 1-d arrays of equal length")
    if hs.size < 2:
        raise UsageError(f"need at least 2 points to fit an order, got {hs.size}")
    if np.any(hs <= 0.0) or np.any(errors <= 0.0):
        raise UsageError("step sizes and errors must be positive for a log-log fit")
    if np.unique(hs).size < 2:
        raise UsageError("step sizes must not all coincide")
    res = linregress(np.log2(hs), np.log2(errors))
    return FitResult(slope=float(res.slope), intercept=float(res.intercept),
                     r_squared=float(res.rvalue) ** 2, n_points=int(hs.size))


@dataclass(frozen=True)
class ConvergenceReport:
    """An error curve, its fitted rate, and the pass verdict against a band."""

    model: str
    scheme: str
    p: float
    T: float
    h_ref: float
    hs: tuple
    errors: tuple
    std_errors: tuple
    excluded_hs: tuple
    predicted_order: float
    slope: float
    intercept: float
    r_squared: float
    band: float
    r2_min: float
    passed: bool
    p_max_theorem: Optional[float] = None
    p_within_theorem: Optional[bool] = None
    notes: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "model": self.model, "scheme": self.scheme, "p": self.p,
            "T": self.T, "h_ref": self.h_ref,
            "hs": list(self.hs), "errors": list(self.errors),
            "std_errors": list(self.std_errors),
            "excluded_hs": list(self.excluded_hs),
            "predicted_order": self.predicted_order, "slope": self.slope,
            "intercept": self.intercept, "r_squared": self.r_squared,
            "band": self.band, "r2_min": self.r2_min, "passed": self.passed,
            "p_max_theorem": self.p_max_theorem,
            "p_within_theorem": self.p_within_theorem,
            "notes": list(self.notes),
        }


def make_convergence_report(curve: ErrorCurve, orders: SchemeOrders,
                            band: float = 0.1, r2_min: float = 0.98,
                            residual_tol: float = 1e-12,
                            constants: Optional[MonotoneConstants] = None
                            ) -> ConvergenceReport:
    """Fit the curve and compare against the scheme's predicted global order.

    Points whose error is at or below 10x the implicit-solver residual
    tolerance are excluded from the fit (they measure the solver, not the
    scheme) with a logged note. Passing means the fitted slope lies within
    `band` of the predicted order and r^2 >= r2_min.
    """
    notes = []
    kept_h, kept_e, kept_se, excluded = [], [], [], []
    floor = 10.0 * residual_tol
    for h, est in zip(curve.hs, curve.estimates):
        if est.value <= floor:
            excluded.append(h)
            log.warning("excluding h=%g from fit: error %.3e at/below solver floor %.1e",
                        h, est.value, floor)
            notes.append(f"excluded h={h:g}: error {est.value:.3e} at solver floor")
        else:
            kept_h.append(h)
            kept_e.append(est.value)
            kept_se.append(est.std_error)
    if len(kept_h) < 2:
        raise UsageError(
            "fewer than 2 error points above the solver floor; nothing to fit")
    fit = fit_order(kept_h, kept_e)
    passed = (abs(fit.slope - orders.global_order) <= band
              and fit.r_squared >= r2_min)
    p_max = theorem_admissible_p_max(constants) if constants is not None else None
    within = (curve.p <= p_max) if p_max is not None else None
    if within is False:
        notes.append(
            f"requested p={curve.p:g} exceeds the theorem-admissible maximum "
            f"{p_max:g}; the guaranteed range is empty and rates are empirical")
    return ConvergenceReport(
        model=curve.model, scheme=curve.scheme, p=curve.p, T=curve.T,
        h_ref=curve.h_ref, hs=tuple(kept_h), errors=tuple(kept_e),
        std_errors=tuple(kept_se), excluded_hs=tuple(excluded),
        predicted_order=orders.global_order, slope=fit.slope,
        intercept=fit.intercept, r_squared=fit.r_squared, band=band,
        r2_min=r2_min, passed=passed, p_max_theorem=p_max,
        p_within_theorem=within, notes=tuple(notes))


def decay_slope(times: Sequence[float], values: Sequence[float]) -> float:
    """OLS slope of ln(values) against time, for exponential-decay traces.

    Zero values (exactly coincident coupled paths, degenerate estimates) are
    dropped before the fit; at least two positive values must remain.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise UsageError("times and values must be 1-d arrays of equal length")
    keep = v > 0.0
    if keep.sum() < 2:
        raise UsageError("need at least 2 positive values for a decay fit")
    return float(linregress(t[keep], np.log(v[keep])).slope)


def stationarity_gap(times: Sequence[float], values: Sequence[float]):
    """Late-time drift diagnostic for a moment trace.

    Splits [0, T] into quarters and returns
    (|mean over Q3 - mean over Q4|, sup over all t, their ratio). The ratio is
    the scale-normalized gap: well under 1 for traces that have settled (or
    decayed), of order 1 and beyond for traces still moving or growing.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 8:
        raise UsageError("need a trace with at least 8 points")
    T = float(t.max())
    q3 = (t >= 0.5 * T) & (t < 0.75 * T)
    q4 = t >= 0.75 * T
    if not (q3.any() and q4.any()):
        raise UsageError("trace too short to contain third and fourth quarters")
    m3 = math.fsum(v[q3].tolist()) / int(q3.sum())
    m4 = math.fsum(v[q4].tolist()) / int(q4.sum())
    sup = float(v.max())
    gap = abs(m3 - m4)
    ratio = gap / sup if sup > 0.0 else 0.0
    return gap, sup, ratio
