"""Seed-deterministic Brownian increments on a fine grid, with exact coarsening.

Every path of every ensemble draws its increments from a private counter-based
substream keyed by ``(master_seed, path_index)`` through numpy's
``SeedSequence``/``Philox`` machinery, so path k's increments never depend on
how many other paths exist, which worker generated them, or whether they were
produced in one call or streamed in blocks.

Coarsening sums consecutive fine increments with a fixed pairwise
(balanced-tree) order. For power-of-two factors the tree composes exactly, so
``coarsen(coarsen(g, 2), 2)`` and ``coarsen(g, 4)`` agree bit for bit and the
total increment over the interval is identical at every level of a dyadic
ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

__all__ = ["NoiseGrid", "make_noise_grid", "coarsen", "pairwise_block_sum"]


def path_seed_sequence(master_seed: int, path_index: int) -> np.random.SeedSequence:
    """Seed material for one path's substream: child `path_index` of the master seed."""
    return np.random.SeedSequence(master_seed, spawn_key=(path_index,))


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path, independent of all other paths."""
    return np.random.Generator(np.random.Philox(path_seed_sequence(master_seed, path_index)))


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments of one path on a uniform fine grid.

    ``increments[k, j]`` is the j-th component of W(t_{k+1}) - W(t_k) with
    t_k = k * h_fine; each entry is N(0, h_fine) and the array is exactly
    reproducible from ``(master_seed, path_index)``.
    """

    master_seed: int
    path_index: int
    m: int
    h_fine: float
    n_fine: int
    increments: np.ndarray


def make_noise_grid(master_seed: int, path_index: int, m: int,
                    h_fine: float, n_fine: int) -> NoiseGrid:
    """Draw one path's fine-grid increments from its dedicated substream.

    Parameters
    ----------
    master_seed, path_index : int
        Identify the substream; same pair, same increments, always.
    m : int
        Number of driving Brownian components.
    h_fine : float
        Fine step size, must be positive.
    n_fine : int
        Number of fine steps, must be positive.
    """
    if h_fine <= 0.0 or not math.isfinite(h_fine):
        raise UsageError(f"h_fine must be positive and finite, got {h_fine}")
    if n_fine <= 0:
        raise UsageError(f"n_fine must be positive, got {n_fine}")
    if m <= 0:
        raise UsageError(f"m must be positive, got {m}")
    if path_index < 0:
        raise UsageError(f"path_index must be nonnegative, got {path_index}")
    gen = path_generator(master_seed, path_index)
    increments = gen.standard_normal((n_fine, m)) * math.sqrt(h_fine)
    return NoiseGrid(master_seed=master_seed, path_index=path_index, m=m,
                     h_fine=h_fine, n_fine=n_fine, increments=increments)


def pairwise_block_sum(arr: np.ndarray, factor: int, axis: int = 0) -> np.ndarray:
    """Sum consecutive groups of `factor` entries along `axis` in pairwise order.

    The group sum is formed by recursive split-at-half (a balanced binary
    tree), the order every consumer of coarsened increments must share for the
    telescoping identities to hold exactly.
    """
    if factor == 1:
        return arr.copy()
    arr = np.moveaxis(arr, axis, 0)
    n = arr.shape[0]
    if n % factor != 0:
        raise UsageError(f"factor {factor} does not divide grid length {n}")
    blocks = arr.reshape((n // factor, factor) + arr.shape[1:])

    def tree(a):
        # a has the group axis at position 1
        f = a.shape[1]
        if f == 1:
            return a[:, 0]
        half = f // 2
        return tree(a[:, :half]) + tree(a[:, half:])

    out = tree(blocks)
    return np.moveaxis(out, 0, axis)


def coarsen(grid: NoiseGrid, factor: int) -> np.ndarray:
    """Exact increments of the same Brownian path on a grid `factor` times coarser.

    Returns an array of shape ``(n_fine // factor, m)`` whose k-th row is the
    pairwise-ordered sum of fine rows ``k*factor .. (k+1)*factor - 1``. Raises
    a usage error when `factor` does not divide ``n_fine``.
    """
    if factor < 1:
        raise UsageError(f"factor must be a positive integer, got {factor}")
    if grid.n_fine % factor != 0:
        raise UsageError(
            f"factor {factor} does not divide n_fine {grid.n_fine}")
    return pairwise_block_sum(grid.increments, factor, axis=0)
