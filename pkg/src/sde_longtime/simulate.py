"""Coupled-path Monte Carlo experiments over long time horizons.

The protocols here all share one coupling discipline: a reference trajectory
at a fine step h_ref and coarse trajectories at h = factor * h_ref are driven
by the *same* Brownian path, the coarse increments being exact pairwise sums
of the fine ones. Running the coarse grid at factor 1 therefore reproduces the
reference bit for bit (zero error), and every level of a dyadic ladder sees
the identical total noise.

Ensembles are processed in fixed-size path chunks, each path drawing from its
own (master_seed, path_index) substream, with noise generated in bounded time
blocks. Chunk size and block size are constants independent of thread count
and ensemble size, so results are bit-identical whether a run uses one worker
or many; partial results are merged in path order.

Paths whose state turns non-finite (explicit Euler blowing up on superlinear
drift) are tagged divergent: they are excluded from moment estimates from the
first non-finite record onward and counted in ``n_divergent``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UsageError
from .model import SdeProblem
from .noise import NoiseGrid, pairwise_block_sum, path_generator
from .schemes import SchemeConfig, step_batch, step_ceiling

__all__ = [
    "MomentEstimate",
    "ErrorCurve",
    "evolve_terminal",
    "strong_error_experiment",
    "moment_trace",
    "contraction_experiment",
    "one_step_order_experiment",
    "remainder_scaling_experiment",
    "resolve_threads",
]

# Paths per vectorized batch and fine steps per noise block. Fixed constants:
# changing them never changes results (per-path streams are position-keyed),
# but they are part of no contract and exist only to bound memory while
# keeping the per-step numpy call overhead amortized over many paths.
CHUNK_PATHS = 512
BLOCK_STEPS = 4096


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of (E s^(2p))^(1/(2p)) for a nonnegative statistic s.

    std_error is the delta-method standard error of the root, i.e.
    se(mean s^(2p)) * d/dmu mu^(1/(2p)). n_paths counts all paths attempted;
    n_divergent of them were excluded as non-finite.
    """

    value: float
    std_error: float
    p: float
    n_paths: int
    n_divergent: int = 0


@dataclass(frozen=True)
class ErrorCurve:
    """Uniform-in-time strong-error estimates against one shared reference.

    Each estimate is (E sup_k |Z_ref(t_k) - Z_h(t_k)|^(2p))^(1/(2p)) with the
    supremum over the coarse time grid, the pathwise-uniform companion of the
    long-time error bounds. For dissipative problems the supremum typically
    sits in the early transient, so the statistic stays informative on
    horizons long enough for the flow to forget its initial data.
    """

    model: str
    scheme: str
    p: float
    T: float
    h_ref: float
    hs: tuple
    estimates: tuple  # of MomentEstimate, parallel to hs


def estimate_from_samples(samples, p: float, n_paths: Optional[int] = None,
                          n_divergent: int = 0) -> MomentEstimate:
    """Build a MomentEstimate from magnitudes of surviving paths.

    Uses math.fsum, and the summands are nonnegative, so the result is exactly
    invariant under permutations of the sample list. With no survivors the
    estimate degenerates to 0 +- 0 and the divergence count carries the story.
    Samples that are finite but so large their 2p-th powers exceed float range
    (the explicit scheme en route to blow-up) yield an inf estimate rather
    than an exception.
    """
    if p <= 0.0:
        raise UsageError(f"p must be positive, got {p}")
    s = np.asarray(samples, dtype=float).ravel()
    if np.any(s < 0.0):
        raise UsageError("samples must be nonnegative magnitudes")
    n = s.size
    if n_paths is None:
        n_paths = n + n_divergent
    if n == 0:
        return MomentEstimate(value=0.0, std_error=0.0, p=p,
                              n_paths=n_paths, n_divergent=n_divergent)
    with np.errstate(over="ignore"):
        y = (s ** (2.0 * p)).tolist()
    try:
        mu = math.fsum(y) / n
    except OverflowError:
        mu = math.inf
    if not math.isfinite(mu):
        return MomentEstimate(value=math.inf, std_error=math.inf, p=p,
                              n_paths=n_paths, n_divergent=n_divergent)
    if n > 1:
        try:
            var = math.fsum((yi - mu) ** 2 for yi in y) / (n - 1)
        except OverflowError:
            var = math.inf
        se_mu = math.sqrt(var / n)
    else:
        se_mu = 0.0
    if mu > 0.0:
        value = mu ** (1.0 / (2.0 * p))
        std_error = se_mu * value / (2.0 * p * mu)
    else:
        value, std_error = 0.0, 0.0
    return MomentEstimate(value=value, std_error=std_error, p=p,
                          n_paths=n_paths, n_divergent=n_divergent)


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count: SDE_LONGTIME_THREADS wins, then the argument, then cores."""
    env = os.environ.get("SDE_LONGTIME_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"SDE_LONGTIME_THREADS must be an integer, got {env!r}")
    elif requested is not None:
        n = int(requested)
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _chunk_spans(n_paths: int):
    return [(lo, min(lo + CHUNK_PATHS, n_paths))
            for lo in range(0, n_paths, CHUNK_PATHS)]


def _map_chunks(worker, n_paths: int, threads: int):
    """Run `worker(lo, hi)` over path chunks, results in path order."""
    spans = _chunk_spans(n_paths)
    if threads <= 1 or len(spans) == 1:
        return [worker(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda s: worker(*s), spans))


def _time_blocks(n_steps: int, unit: int):
    """Block spans covering [0, n_steps), each a multiple of `unit`."""
    per = max(1, BLOCK_STEPS // unit) * unit
    return [(lo, min(lo + per, n_steps)) for lo in range(0, n_steps, per)]


def _noise_block(gens, n_t: int, m: int, sqrt_h: float) -> np.ndarray:
    """(B, n_t, m) increments, drawn path by path so each row is exactly the
    slice of that path's one-shot stream."""
    return np.stack([g.standard_normal((n_t, m)) for g in gens]) * sqrt_h


def _tile_x0(problem: SdeProblem, x0, n: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 0:
        x0 = np.full(problem.d, float(x0))
    if x0.shape != (problem.d,):
        raise UsageError(
            f"x0 shape {x0.shape} does not match problem dimension ({problem.d},)")
    if not np.all(np.isfinite(x0)):
        raise UsageError(f"x0 must be finite, got {x0}")
    return np.tile(x0, (n, 1))


def _row_norms(Z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", Z, Z))


def _exact_factor(h: float, h_ref: float) -> int:
    f = h / h_ref
    k = round(f)
    if k < 1 or abs(f - k) > 1e-9 * max(1.0, abs(f)):
        raise UsageError(f"h={h} is not an integer multiple of h_ref={h_ref}")
    return int(k)


def _exact_steps(T: float, h: float) -> int:
    n = T / h
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise UsageError(f"T={T} is not an integer multiple of h={h}")
    return int(k)


def _lcm_all(values) -> int:
    out = 1
    for v in values:
        out = math.lcm(out, v)
    return out


# ---------------------------------------------------------------------------
# single-path evolution (public building block)
# ---------------------------------------------------------------------------

def evolve_terminal(problem: SdeProblem, scheme_cfg: SchemeConfig, h: float,
                    n_steps: int, noise, x0) -> np.ndarray:
    """Terminal state of one path after n_steps of the configured scheme.

    `noise` is either a NoiseGrid matching (h, n_steps) or a plain (n_steps, m)
    increment array. A non-finite return value is the divergence tag of the
    explicit scheme; the implicit solver raises SolverFailure instead of
    returning garbage.
    """
    if h <= 0.0:
        raise UsageError(f"h must be positive, got {h}")
    if n_steps < 0:
        raise UsageError(f"n_steps must be >= 0, got {n_steps}")
    if isinstance(noise, NoiseGrid):
        if noise.n_fine != n_steps:
            raise UsageError(
                f"noise grid has {noise.n_fine} steps, expected {n_steps}")
        if not math.isclose(noise.h_fine, h, rel_tol=1e-12):
            raise UsageError(
                f"noise grid step {noise.h_fine} does not match h={h}")
        incs = noise.increments
    else:
        incs = np.asarray(noise, dtype=float)
        if incs.shape != (n_steps, problem.m):
            raise UsageError(
                f"noise shape {incs.shape}, expected ({n_steps}, {problem.m})")
    Z = _tile_x0(problem, x0, 1)
    for k in range(n_steps):
        Z = step_batch(problem, scheme_cfg, Z, incs[k][None, :], h, step_index=k)
    return Z[0]


# ---------------------------------------------------------------------------
# strong error against a fine coupled reference
# ---------------------------------------------------------------------------

def strong_error_experiment(problem: SdeProblem, scheme_cfg: SchemeConfig,
                            T: float, h_list: Sequence[float], h_ref: float,
                            n_paths: int, p: float = 1.0, master_seed: int = 0,
                            x0=1.0, threads: Optional[int] = None) -> ErrorCurve:
    """Uniform-in-time strong error of the scheme at each h against h_ref.

    Every path runs the same scheme at h_ref and at each coarse h on the same
    Brownian path (coarse increments are exact pairwise sums of fine ones).
    The per-h estimate is (E sup_k |Z_ref(t_k) - Z_h(t_k)|^(2p))^(1/(2p))
    over the coarse grid points t_k, the pathwise-uniform error the long-time
    bounds control; paths are dropped from the first non-finite state onward
    and counted as divergent.
    """
    if n_paths < 1:
        raise UsageError(f"n_paths must be >= 1, got {n_paths}")
    if not h_list:
        raise UsageError("h_list must be nonempty")
    hs = sorted(set(float(h) for h in h_list), reverse=True)
    if h_ref > min(hs):
        raise UsageError(f"h_ref={h_ref} must not exceed the smallest h={min(hs)}")
    factors = [_exact_factor(h, h_ref) for h in hs]
    n_fine = _exact_steps(T, h_ref)
    for h, f in zip(hs, factors):
        if n_fine % f != 0:
            raise UsageError(f"h={h} does not divide the horizon T={T} evenly")
    threads = resolve_threads(threads)
    unit = _lcm_all(factors)
    blocks = _time_blocks(n_fine, unit)
    sqrt_h = math.sqrt(h_ref)

    def worker(lo, hi):
        B = hi - lo
        gens = [path_generator(master_seed, i) for i in range(lo, hi)]
        Zr = _tile_x0(problem, x0, B)
        Zc = [_tile_x0(problem, x0, B) for _ in factors]
        alive = [np.ones(B, dtype=bool) for _ in factors]
        run_sup = [np.zeros(B) for _ in factors]
        for (t0, t1) in blocks:
            W = _noise_block(gens, t1 - t0, problem.m, sqrt_h)
            Wc = [W if f == 1 else pairwise_block_sum(W, f, axis=1)
                  for f in factors]
            for j in range(t1 - t0):
                Zr = step_batch(problem, scheme_cfg, Zr, W[:, j], h_ref,
                                step_index=t0 + j)
                done = t0 + j + 1
                for idx, f in enumerate(factors):
                    if done % f:
                        continue
                    k = done // f - 1
                    Zc[idx] = step_batch(problem, scheme_cfg, Zc[idx],
                                         Wc[idx][:, k - t0 // f], hs[idx],
                                         step_index=k)
                    with np.errstate(invalid="ignore"):
                        ok = (np.isfinite(Zr).all(axis=1)
                              & np.isfinite(Zc[idx]).all(axis=1))
                        alive[idx] &= ok
                        diff = np.where(alive[idx][:, None], Zr - Zc[idx], 0.0)
                    np.maximum(run_sup[idx], _row_norms(diff),
                               out=run_sup[idx])
        return [(run_sup[idx][alive[idx]], int(B - alive[idx].sum()))
                for idx in range(len(factors))]

    partials = _map_chunks(worker, n_paths, threads)
    estimates = []
    for idx in range(len(factors)):
        samples = np.concatenate([part[idx][0] for part in partials])
        n_div = sum(part[idx][1] for part in partials)
        estimates.append(estimate_from_samples(samples, p, n_paths=n_paths,
                                               n_divergent=n_div))
    return ErrorCurve(model=problem.name, scheme=scheme_cfg.variant, p=p, T=T,
                      h_ref=h_ref, hs=tuple(hs), estimates=tuple(estimates))


# ---------------------------------------------------------------------------
# moment traces and contractivity
# ---------------------------------------------------------------------------

def _record_indices(n_steps: int, n_records: int):
    idx = sorted({round(j * n_steps / n_records) for j in range(n_records + 1)})
    return [i for i in idx if 0 <= i <= n_steps]


def _trace_experiment(problem, scheme_cfg, T, h, n_paths, p, master_seed,
                      starts, statistic, threads, n_records):
    """Shared machinery for moment traces (one trajectory per path) and
    contraction traces (two coupled trajectories per path).

    `starts` is a list of initial states (one trajectory per entry);
    `statistic(Zs)` maps the list of state batches to per-path magnitudes.
    """
    n_steps = _exact_steps(T, h)
    rec = _record_indices(n_steps, n_records)
    rec_set = {k: i for i, k in enumerate(rec)}
    threads = resolve_threads(threads)
    blocks = _time_blocks(n_steps, 1)
    sqrt_h = math.sqrt(h)

    def worker(lo, hi):
        B = hi - lo
        gens = [path_generator(master_seed, i) for i in range(lo, hi)]
        Zs = [_tile_x0(problem, x0, B) for x0 in starts]
        alive = np.ones(B, dtype=bool)
        samples = [None] * len(rec)
        divergent = [0] * len(rec)

        def record(step):
            i = rec_set.get(step)
            if i is None:
                return
            for Z in Zs:
                alive[:] &= np.all(np.isfinite(Z), axis=1)
            with np.errstate(invalid="ignore"):
                s = statistic(Zs)
            samples[i] = s[alive]
            divergent[i] = int(B - alive.sum())

        record(0)
        for (t0, t1) in blocks:
            W = _noise_block(gens, t1 - t0, problem.m, sqrt_h)
            for j in range(t1 - t0):
                for ti in range(len(Zs)):
                    Zs[ti] = step_batch(problem, scheme_cfg, Zs[ti], W[:, j], h,
                                        step_index=t0 + j)
                record(t0 + j + 1)
        return samples, divergent

    partials = _map_chunks(worker, n_paths, threads)
    times = np.asarray([k * h for k in rec])
    estimates = []
    for i in range(len(rec)):
        samples = np.concatenate([part[0][i] for part in partials])
        n_div = sum(part[1][i] for part in partials)
        estimates.append(estimate_from_samples(samples, p, n_paths=n_paths,
                                               n_divergent=n_div))
    return times, estimates


def moment_trace(problem: SdeProblem, scheme_cfg: SchemeConfig, T: float,
                 h: float, n_paths: int, p: float = 1.0, master_seed: int = 0,
                 x0=1.0, n_records: int = 100, threads: Optional[int] = None,
                 enforce_step_ceiling: bool = False):
    """Time series of (E |Z_t|^(2p))^(1/(2p)) thinned to ~n_records points.

    Returns (times, estimates). Divergent paths are excluded from the first
    non-finite record onward and counted per record in n_divergent — this is
    how the explicit scheme's blow-up on superlinear problems is surfaced
    rather than hidden.
    """
    if enforce_step_ceiling:
        ceiling = step_ceiling(scheme_cfg.variant, p, problem.constants.alpha1)
        if h > ceiling * (1.0 + 1e-12):
            raise UsageError(
                f"h={h} exceeds the {scheme_cfg.variant} theorem ceiling {ceiling}")
    return _trace_experiment(problem, scheme_cfg, T, h, n_paths, p, master_seed,
                             [x0], lambda Zs: _row_norms(Zs[0]),
                             threads, n_records)


def contraction_experiment(problem: SdeProblem, scheme_cfg: SchemeConfig,
                           T: float, h: float, n_paths: int, p: float = 1.0,
                           master_seed: int = 0, x0=1.0, y0=0.0,
                           n_records: int = 100,
                           threads: Optional[int] = None):
    """Decay of (E |X_t - Y_t|^(2p))^(1/(2p)) for two flows on the same noise.

    Both trajectories start from x0 and y0 and are driven by identical
    increments path by path; the exact flow contracts this gap like
    exp(-alpha1 t) in the 2p-th moment, and the implicit scheme inherits the
    decay. Returns (times, estimates).
    """
    x0a = np.asarray(x0, dtype=float)
    y0a = np.asarray(y0, dtype=float)
    if np.array_equal(np.atleast_1d(x0a), np.atleast_1d(y0a)):
        raise UsageError("x0 and y0 must differ for a contraction experiment")
    return _trace_experiment(problem, scheme_cfg, T, h, n_paths, p, master_seed,
                             [x0, y0], lambda Zs: _row_norms(Zs[0] - Zs[1]),
                             threads, n_records)


# ---------------------------------------------------------------------------
# one-step order probes
# ---------------------------------------------------------------------------

def one_step_order_experiment(problem: SdeProblem, scheme_cfg: SchemeConfig,
                              h_list: Sequence[float], x, n_paths: int,
                              master_seed: int = 0, substeps: int = 64,
                              threads: Optional[int] = None):
    """Single-step strong and weak errors against a substepped coupled reference.

    For each h, one scheme step of size h is compared with `substeps` steps of
    size h/substeps driven by the same noise (the coarse increment is the
    pairwise sum of the fine ones). Returns a list of
    (h, strong_estimate, weak_error) with the strong error in RMS
    ((E |diff|^2)^(1/2)) and the weak error the norm of the mean difference.
    """
    if substeps < 2:
        raise UsageError(f"substeps must be >= 2, got {substeps}")
    hs = sorted(set(float(h) for h in h_list), reverse=True)
    threads = resolve_threads(threads)
    results = []
    for h in hs:
        h_fine = h / substeps
        sqrt_hf = math.sqrt(h_fine)

        def worker(lo, hi):
            B = hi - lo
            gens = [path_generator(master_seed, i) for i in range(lo, hi)]
            W = _noise_block(gens, substeps, problem.m, sqrt_hf)
            Zf = _tile_x0(problem, x, B)
            for j in range(substeps):
                Zf = step_batch(problem, scheme_cfg, Zf, W[:, j], h_fine,
                                step_index=j)
            Wc = pairwise_block_sum(W, substeps, axis=1)
            Zc = step_batch(problem, scheme_cfg, _tile_x0(problem, x, B),
                            Wc[:, 0], h, step_index=0)
            return Zf - Zc

        diffs = np.concatenate(_map_chunks(worker, n_paths, threads))
        strong = estimate_from_samples(_row_norms(diffs), p=1.0, n_paths=n_paths)
        mean_vec = np.asarray([math.fsum(diffs[:, j].tolist()) / n_paths
                               for j in range(problem.d)])
        weak = float(np.sqrt(np.dot(mean_vec, mean_vec)))
        results.append((h, strong, weak))
    return results


def remainder_scaling_experiment(problem: SdeProblem, scheme_cfg: SchemeConfig,
                                 x0, y0, h_list: Sequence[float],
                                 n_paths: int, p: float = 1.0,
                                 master_seed: int = 0, substeps: int = 64,
                                 threads: Optional[int] = None):
    """Scaling in h of the two-point flow remainder (X_h - Y_h) - (x0 - y0).

    The flows are approximated by `substeps` fine steps of the configured
    scheme on shared noise. The 2p-th moment of the remainder scales like h^p
    for small h; only that fitted slope is meaningful, not the constant.
    Returns a list of (h, MomentEstimate).
    """
    hs = sorted(set(float(h) for h in h_list), reverse=True)
    threads = resolve_threads(threads)
    gap0 = np.asarray(x0, dtype=float) - np.asarray(y0, dtype=float)
    results = []
    for h in hs:
        h_fine = h / substeps
        sqrt_hf = math.sqrt(h_fine)

        def worker(lo, hi):
            B = hi - lo
            gens = [path_generator(master_seed, i) for i in range(lo, hi)]
            W = _noise_block(gens, substeps, problem.m, sqrt_hf)
            Zx = _tile_x0(problem, x0, B)
            Zy = _tile_x0(problem, y0, B)
            for j in range(substeps):
                Zx = step_batch(problem, scheme_cfg, Zx, W[:, j], h_fine, step_index=j)
                Zy = step_batch(problem, scheme_cfg, Zy, W[:, j], h_fine, step_index=j)
            return _row_norms((Zx - Zy) - gap0)

        samples = np.concatenate(_map_chunks(worker, n_paths, threads))
        results.append((h, estimate_from_samples(samples, p, n_paths=n_paths)))
    return results
