"""The product of two two-mode squeezed vacua, built on a truncated space.

The state ``exp(zeta K_x)|0>`` factorizes into one TMSV per polarization,
each with Schmidt coefficients ``lambda_n = tanh(zeta)**n / cosh(zeta)``, so
its amplitude on ``|n, m, n, m>`` is ``lambda_n * lambda_m``.

Two truncated supports are offered:

``"box"``
    every mode below the cutoff (``n, m <= d-1``).  This is the plain Fock
    truncation and what ``choose_cutoff`` targets by default.
``"shell"``
    total photon number per channel below the cutoff (``n + m <= d-1``).
    Each number sector of a channel is then kept whole, so the truncated
    state stays exactly invariant under the polarization rotations; the box
    support breaks that invariance at order ``d**2 * tanh(zeta)**(2d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock_core import (
    FourModeState,
    TruncationSpec,
    build_kx,
    expm_apply,
)

SUPPORTS = ("box", "shell")


@dataclass(frozen=True)
class SchmidtProfile:
    lambdas: np.ndarray
    tail_mass: float


def _check_zeta(zeta: float):
    if not (np.isfinite(zeta) and zeta >= 0):
        raise ValueError(f"squeezing parameter must be a finite value >= 0, got {zeta!r}")


def _check_support(support: str):
    if support not in SUPPORTS:
        raise ValueError(f"support must be one of {SUPPORTS}, got {support!r}")


def schmidt_profile(zeta: float, trunc: TruncationSpec) -> SchmidtProfile:
    """Schmidt coefficients of one TMSV and the exact discarded mass tanh^(2d)."""
    _check_zeta(zeta)
    t = math.tanh(zeta)
    n = np.arange(trunc.cutoff)
    lambdas = t**n / math.cosh(zeta)
    return SchmidtProfile(lambdas=lambdas, tail_mass=t ** (2 * trunc.cutoff))


def tail_mass(zeta: float, cutoff: int, support: str = "box") -> float:
    """Exact probability of the untruncated state outside the support."""
    _check_zeta(zeta)
    _check_support(support)
    t2 = math.tanh(zeta) ** 2
    td = t2**cutoff
    if support == "box":
        # 1 - (1 - t^2d)^2 without cancellation
        return td * (2.0 - td)
    return td * (1.0 + cutoff * (1.0 - t2))


def choose_cutoff(zeta: float, eps: float, support: str = "box") -> TruncationSpec:
    """Smallest cutoff ``d >= 2`` whose tail is at most ``eps``.

    With ``support="box"`` the criterion is ``tanh(zeta)**(2d) <= eps`` (the
    discarded mass of a single TMSV); with ``"shell"`` it is the full
    discarded mass of the shell-truncated four-mode state.
    """
    _check_zeta(zeta)
    _check_support(support)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"tail tolerance must lie in (0, 1), got {eps!r}")
    if zeta == 0:
        return TruncationSpec(2, eps)
    t2 = math.tanh(zeta) ** 2

    def tail(d):
        return t2**d if support == "box" else tail_mass(zeta, d, "shell")

    d = max(2, int(math.floor(math.log(eps) / math.log(t2))) - 1)
    while d > 2 and tail(d - 1) <= eps:
        d -= 1
    while tail(d) > eps:
        d += 1
    return TruncationSpec(d, eps)


def _schmidt_pairs(cutoff: int, support: str):
    n, m = np.meshgrid(np.arange(cutoff), np.arange(cutoff), indexing="ij")
    n, m = n.ravel(), m.ravel()
    if support == "shell":
        keep = n + m <= cutoff - 1
        n, m = n[keep], m[keep]
    return n, m


def build_state_schmidt(
    zeta: float, trunc: TruncationSpec, support: str = "box"
) -> FourModeState:
    """Truncated ``|zeta>`` from its Schmidt form, renormalized.

    ``truncation_error`` is the exact discarded probability of the untruncated
    state (for the box support, ``1 - (sum lambda_n^2)^2``).
    """
    _check_zeta(zeta)
    _check_support(support)
    d = trunc.cutoff
    lam = schmidt_profile(zeta, trunc).lambdas
    n, m = _schmidt_pairs(d, support)
    occ = np.stack([n, m, n, m], axis=1)
    amp = lam[n] * lam[m]
    return FourModeState.from_amplitudes(
        d,
        occ,
        amp,
        truncation_error=tail_mass(zeta, d, support),
        zeta=float(zeta),
        support=support,
    )


def build_state_exponential(zeta: float, trunc: TruncationSpec) -> FourModeState:
    """Truncated ``|zeta>`` as ``exp(zeta K_x)|0>`` on the dense backend.

    Validation path only: d^4 must fit in memory (d <= 12 is comfortable).
    The truncation error reported is the larger of the exponential's own
    boundary estimate and the exact box tail.
    """
    _check_zeta(zeta)
    if trunc.cutoff > 16:
        raise ValueError("dense exponential construction is limited to cutoff <= 16")
    vac = FourModeState.vacuum(trunc)
    out = expm_apply(build_kx(trunc), zeta, vac)
    err = max(out.truncation_error, tail_mass(zeta, trunc.cutoff, "box"))
    return FourModeState(out.cutoff, out.occupations, out.amplitudes, truncation_error=err)


def exact_overlap(state: FourModeState, zeta: float) -> complex:
    """``<zeta_exact|state>`` against the untruncated (unnormalized-in-box) state."""
    t = math.tanh(zeta)
    occ = state.occupations
    paired = (occ[:, 0] == occ[:, 2]) & (occ[:, 1] == occ[:, 3])
    n, m = occ[paired, 0], occ[paired, 1]
    ref = t ** (n + m) / math.cosh(zeta) ** 2
    return complex(np.sum(ref * state.amplitudes[paired]))


def photon_sectors(zeta: float, cutoff: int, support: str = "box"):
    """Split the exact Schmidt mass by photon total per channel.

    The Schmidt state has the same total ``N = n + m`` in both channels.
    Returns ``(N, inside, outside)``: for each sector the untruncated mass kept by
    the support and the mass discarded.  Sectors are listed until the
    discarded mass weighted by ``N**6`` is negligible.
    """
    _check_zeta(zeta)
    _check_support(support)
    if zeta == 0:
        sectors = np.arange(1)
        return sectors, np.ones(1), np.zeros(1)
    t2 = math.tanh(zeta) ** 2
    decay = -math.log(t2)
    n_max = cutoff * 2 + int(math.ceil(120.0 / decay)) + 50
    sectors = np.arange(n_max + 1)
    per_pair = (1.0 - t2) ** 2 * np.exp(-decay * sectors)
    if support == "box":
        lo = np.maximum(0, sectors - (cutoff - 1))
        hi = np.minimum(sectors, cutoff - 1)
        count_in = np.maximum(hi - lo + 1, 0)
    else:
        count_in = np.where(sectors <= cutoff - 1, sectors + 1, 0)
    inside = per_pair * count_in
    outside = per_pair * (sectors + 1 - count_in)
    return sectors, inside, outside
