"""Wigner function of one polarization sector of the product state.

Each sector (a+, b+) or (a-, b-) is a TMSV whose Wigner function is the
gaussian

    W(alpha_A, alpha_B) = 4/pi^2 exp[-2 cosh(2 zeta)(|alpha_A|^2 + |alpha_B|^2)
                                     + 2 sinh(2 zeta)(alpha_A alpha_B + c.c.)]

with ``alpha = q + i p`` and measure ``d^2 alpha = dq dp``.  The cross term
uses the plain product ``alpha_A alpha_B``; the displaced-parity evaluation
in :func:`wigner_from_state` checks that reading numerically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fock_core import FourModeState, Polarization, expm_multiply_taylor, single_mode_annihilator

PREFACTOR = 4.0 / math.pi**2
NARROW_RATIO = 1e-8


class GridTooNarrowWarning(UserWarning):
    pass


class DisplacementTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    alpha_A: complex
    alpha_B: complex

    def __post_init__(self):
        for name in ("alpha_A", "alpha_B"):
            value = complex(getattr(self, name))
            if not (math.isfinite(value.real) and math.isfinite(value.imag)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform grid with ``points`` nodes on [-half_width, half_width] per axis."""

    half_width: float
    points: int = 64

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if int(self.points) != self.points or self.points < 8:
            raise ValueError("points must be an integer >= 8")

    @classmethod
    def default(cls, zeta: float, points: int = 64) -> "QuadratureGrid":
        # widest quadrature std is e^zeta / 2
        return cls(4.0 * max(1.0, math.exp(zeta)), points)

    def axis(self) -> np.ndarray:
        # symmetric by construction; the centre node is exactly 0 for odd counts
        m = self.points
        return self.half_width * (2.0 * np.arange(m) - (m - 1)) / (m - 1)

    def weights(self) -> np.ndarray:
        h = 2.0 * self.half_width / (self.points - 1)
        w = np.full(self.points, h)
        w[0] = w[-1] = 0.5 * h
        return w


def _exponent(zeta, q_a, p_a, q_b, p_b):
    c, s = math.cosh(2 * zeta), math.sinh(2 * zeta)
    return -2.0 * c * (q_a**2 + p_a**2 + q_b**2 + p_b**2) + 4.0 * s * (q_a * q_b - p_a * p_b)


def wigner_sector(zeta: float, alpha_A, alpha_B):
    """Vectorized sector Wigner function; inputs broadcast."""
    alpha_A = np.asarray(alpha_A, dtype=complex)
    alpha_B = np.asarray(alpha_B, dtype=complex)
    return PREFACTOR * np.exp(
        _exponent(zeta, alpha_A.real, alpha_A.imag, alpha_B.real, alpha_B.imag)
    )


def wigner_analytic(zeta: float, pt: PhasePoint) -> float:
    """Sector Wigner value at ``pt``.  Far from the origin it underflows to 0.0."""
    return float(wigner_sector(zeta, pt.alpha_A, pt.alpha_B))


def wigner_total(zeta: float, plus: PhasePoint, minus: PhasePoint) -> float:
    """Wigner function of the full four-mode state: product of the two sectors."""
    return wigner_analytic(zeta, plus) * wigner_analytic(zeta, minus)


@dataclass(frozen=True)
class WignerQuadrature:
    total: float
    minimum: float
    maximum: float
    boundary_ratio: float

    @property
    def too_narrow(self) -> bool:
        return self.boundary_ratio > NARROW_RATIO


def integrate_wigner(zeta: float, grid: QuadratureGrid | None = None) -> WignerQuadrature:
    """4-d trapezoidal integral of the sector Wigner function.

    Slices over ``q_A`` are summed in a fixed order, so the result is
    reproducible bit for bit.
    """
    grid = grid or QuadratureGrid.default(zeta)
    x = grid.axis()
    w = grid.weights()
    p_a, q_b, p_b = np.meshgrid(x, x, x, indexing="ij")
    w3 = w[:, None, None] * w[None, :, None] * w[None, None, :]
    interior = np.zeros((grid.points,) * 3, dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = True
    total, lo, hi, edge = 0.0, math.inf, 0.0, 0.0
    for i, q_a in enumerate(x):
        vals = PREFACTOR * np.exp(_exponent(zeta, q_a, p_a, q_b, p_b))
        total += w[i] * float(np.sum(w3 * vals))
        lo = min(lo, float(vals.min()))
        hi = max(hi, float(vals.max()))
        on_edge = vals if i in (0, grid.points - 1) else vals[~interior]
        edge = max(edge, float(on_edge.max()))
    return WignerQuadrature(total=float(total), minimum=lo, maximum=hi, boundary_ratio=edge / hi)


def wigner_normalization(zeta: float, grid: QuadratureGrid | None = None) -> float:
    """Integral of the sector Wigner function; warns if the grid clips it."""
    result = integrate_wigner(zeta, grid)
    if result.too_narrow:
        warnings.warn(
            f"grid boundary carries {result.boundary_ratio:.2e} of the peak value",
            GridTooNarrowWarning,
            stacklevel=2,
        )
    return result.total


def displacement_matrix(alpha: complex, levels_in: int, levels_out: int) -> np.ndarray:
    """Columns ``0..levels_in-1`` of ``D(alpha) = exp(alpha a^dag - alpha* a)``.

    Computed by exponentiating the generator on a ``levels_out``-level
    truncation; accurate when the displaced columns stay well inside it.
    """
    a = sp.csr_matrix(single_mode_annihilator(levels_out))
    gen = alpha * a.T - np.conj(alpha) * a
    basis = np.eye(levels_out, levels_in, dtype=complex)
    return expm_multiply_taylor(gen, basis, 1.0)


def wigner_from_state(
    state: FourModeState, pt: PhasePoint, sector: Polarization = Polarization.PLUS
) -> float:
    """Sector Wigner value from the state's amplitudes via displaced parity.

    ``W = (2/pi)^2 <D_A D_B (-1)^(n_A + n_B) D_B^dag D_A^dag>`` on the chosen
    sector, with the other sector traced out.
    """
    d = state.cutoff
    r2 = abs(pt.alpha_A) ** 2 + abs(pt.alpha_B) ** 2
    if r2 > d:
        raise DisplacementTooLargeError(
            f"|alpha|^2 = {r2:.3g} exceeds the cutoff {d}; the displaced state is not resolved"
        )
    pad = d + 24 + int(math.ceil(8 * r2 + 8 * math.sqrt(r2 * d)))
    d_a = displacement_matrix(-pt.alpha_A, d, pad)
    d_b = displacement_matrix(-pt.alpha_B, d, pad)
    psi = state.tensor()
    if sector is Polarization.MINUS:
        psi = psi.transpose(1, 0, 3, 2)
    # axes of psi: (sector A, other A, sector B, other B)
    phi = np.einsum("mi,kj,ixjy->mxky", d_a, d_b, psi, optimize=True)
    prob = np.sum(np.abs(phi) ** 2, axis=(1, 3))
    edge = prob[-4:, :].sum() + prob[:, -4:].sum()
    if edge > 1e-14:
        raise DisplacementTooLargeError(
            f"displaced state reaches the padded cutoff (edge mass {edge:.2e})"
        )
    sign = np.where(np.arange(pad) % 2 == 0, 1.0, -1.0)
    return float(PREFACTOR * np.sum(prob * np.outer(sign, sign)))
