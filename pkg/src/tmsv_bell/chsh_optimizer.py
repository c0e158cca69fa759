"""Maximize the CHSH combination over analyser angles.

The search is a coarse grid over [0, pi)^4 followed by coordinate descent
with a halving step from the best grid point.  ``E`` only enters through
its values on grid pairs, so an ``E_source`` that accepts numpy arrays is
evaluated once per (delta, delta') pair of grid angles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bell_polarization import TSIRELSON, AngleQuad, ChshResult, chsh_combination

ESource = Callable[[float, float], float]

_MIN_STEP = 1e-13


@dataclass(frozen=True)
class OptimizerConfig:
    coarse_step: float = math.pi / 48
    refine_tolerance: float = 1e-10
    max_refine_iters: int = 200
    grid_offset: float = 0.0

    def __post_init__(self):
        if not self.coarse_step > 0:
            raise ValueError("coarse_step must be positive")
        ratio = math.pi / self.coarse_step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("coarse_step must divide pi")
        if not self.refine_tolerance > 0:
            raise ValueError("refine_tolerance must be positive")
        if self.max_refine_iters < 1:
            raise ValueError("max_refine_iters must be >= 1")

    @property
    def grid_size(self) -> int:
        return int(round(math.pi / self.coarse_step))


@dataclass(frozen=True)
class Optimum:
    best: ChshResult
    evaluations: int
    converged: bool


def _pair_table(e_source: ESource, angles: np.ndarray) -> np.ndarray:
    """``table[i, k] = E(angles[i], angles[k])``, vectorized when possible."""
    a, b = np.meshgrid(angles, angles, indexing="ij")
    try:
        table = np.asarray(e_source(a, b), dtype=float)
        if table.shape == a.shape:
            return table
    except (TypeError, ValueError):
        pass
    return np.array([[float(e_source(x, y)) for y in angles] for x in angles])


def _slab(table: np.ndarray, i: int) -> np.ndarray:
    # s[j, k, l] = |E(i,k) + E(i,l) + E(j,k) - E(j,l)|
    return np.abs(
        table[i][None, :, None] + table[i][None, None, :] + table[:, :, None] - table[:, None, :]
    )


def _grid_search(table: np.ndarray, tie_tol: float = 1e-12):
    """Best |S| over all index quads.

    Values within ``tie_tol`` of the maximum count as ties, resolved to the
    lexicographically smallest index tuple.
    """
    n = table.shape[0]
    row_max = np.array([_slab(table, i).max() for i in range(n)])
    best_val = float(row_max.max())
    i = int(np.flatnonzero(row_max >= best_val - tie_tol)[0])
    s = _slab(table, i)
    flat = int(np.flatnonzero(s.ravel() >= best_val - tie_tol)[0])
    idx = (i,) + tuple(int(k) for k in np.unravel_index(flat, s.shape))
    return best_val, idx


def verify_angle_set(quad: AngleQuad, e_source: ESource) -> float:
    """CHSH value at exactly the given angles."""
    return float(chsh_combination(e_source, quad))


def optimize(e_source: ESource, cfg: OptimizerConfig | None = None) -> Optimum:
    """Grid search plus coordinate-descent refinement of |S|.

    ``converged`` is set once the refinement step has shrunk below
    ~1e-13 rad while the last sweep gained less than ``refine_tolerance``.
    """
    cfg = cfg or OptimizerConfig()
    n = cfg.grid_size
    angles = cfg.grid_offset + cfg.coarse_step * np.arange(n)
    table = _pair_table(e_source, angles)
    evaluations = n * n
    best_val, idx = _grid_search(table)
    x = np.array([angles[k] for k in idx])

    def score(v):
        return float(chsh_combination(e_source, AngleQuad(*v)))

    current = score(x)
    evaluations += 4
    step = cfg.coarse_step / 2
    converged = False
    for _ in range(cfg.max_refine_iters):
        start = current
        for axis in range(4):
            for sign in (1.0, -1.0):
                trial = x.copy()
                trial[axis] += sign * step
                val = score(trial)
                evaluations += 4
                if val > current:
                    x, current = trial, val
                    break
        if current - start < cfg.refine_tolerance:
            step *= 0.5
            if step < _MIN_STEP:
                converged = True
                break
    quad = AngleQuad(*x)
    return Optimum(best=ChshResult.from_value(current, quad), evaluations=evaluations, converged=converged)


def exceeds_ceiling(s_values, margin: float = 1e-9) -> bool:
    return bool(np.max(s_values) > TSIRELSON + margin)


def random_quads(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.uniform(0.0, math.pi, size=(count, 4))


def chsh_batch(e_source: ESource, quads: np.ndarray) -> np.ndarray:
    """|S| for each row ``(dA, dA', dB, dB')`` of ``quads`` (vectorized E)."""
    a, a2, b, b2 = quads.T
    return np.abs(e_source(a, b) + e_source(a, b2) + e_source(a2, b) - e_source(a2, b2))
