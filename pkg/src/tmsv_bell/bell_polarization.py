"""Polarization correlations, the CHSH combination and related expectations.

A polarization analyser at angle ``delta`` in channel A measures the
rotated photon-number difference

    P_A(delta) = n_A,delta - n_A,delta+pi/2
               = cos(2 delta) (n_a+ - n_a-) + sin(2 delta) (a+^dag a- + a-^dag a+)

so every correlation needed here is bilinear in the three channel operators
``(N, D, X)`` = (total number, number difference, exchange).  A
:class:`CorrelationKernel` evaluates the 3 x 3 table ``<O_i^A O_j^B>`` once
per state; all angles then follow by contraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fock_core import (
    A_PLUS,
    Channel,
    FourModeOperator,
    FourModeState,
    ModeIndex,
    Polarization,
    TruncationSpec,
    build_k0,
    build_k0_channel,
    channel_modes,
    expectation,
    expm_apply,
    number_operator,
    rotated_annihilators,
)
from .tmsv_state import photon_sectors

TSIRELSON = 2.0 * math.sqrt(2.0)
MAXIMAL_TOL = 1e-6


class DegenerateStateError(ValueError):
    """The normalizing correlation vanishes (vacuum), so E is undefined."""


def _reduce(angle: float) -> float:
    r = math.fmod(angle, math.pi)
    if r < 0:
        r += math.pi
    # fmod can return pi itself for inputs just below a multiple of pi
    return 0.0 if r >= math.pi else r


@dataclass(frozen=True)
class AngleQuad:
    """CHSH analyser angles in radians, stored reduced to [0, pi)."""

    delta_A: float
    delta_A_prime: float
    delta_B: float
    delta_B_prime: float

    def __post_init__(self):
        for name in ("delta_A", "delta_A_prime", "delta_B", "delta_B_prime"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, _reduce(value))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.delta_A, self.delta_A_prime, self.delta_B, self.delta_B_prime)

    def shifted(self, phi: float) -> "AngleQuad":
        return AngleQuad(*(x + phi for x in self.as_tuple()))


CANONICAL_ANGLES = AngleQuad(0.0, math.pi / 4, math.pi / 8, -math.pi / 8)


@dataclass(frozen=True)
class CorrelationReport:
    c_pp: float
    c_mm: float
    c_pm: float
    c_mp: float
    c_combined: float
    normalizer: float
    e_value: Optional[float]
    trunc_bound: float
    degenerate: bool = False


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    angles: AngleQuad
    violates: bool
    maximal: bool

    @classmethod
    def from_value(cls, s_value: float, angles: AngleQuad, tol: float = MAXIMAL_TOL):
        return cls(
            s_value=float(s_value),
            angles=angles,
            violates=bool(s_value > 2.0),
            maximal=bool(abs(s_value - TSIRELSON) <= tol),
        )


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def normalizer_closed_form(zeta: float) -> float:
    return 2.0 * math.cosh(zeta) ** 2 * math.sinh(zeta) ** 2


def parity_closed_form(zeta: float) -> float:
    t2 = math.tanh(zeta) ** 2
    return (1.0 - t2) / (1.0 + t2)


def e_law(delta, delta_prime):
    return np.cos(2.0 * (np.asarray(delta) - np.asarray(delta_prime)))


def chsh_combination(e_source, quad: AngleQuad) -> float:
    a, a2, b, b2 = quad.as_tuple()
    return abs(e_source(a, b) + e_source(a, b2) + e_source(a2, b) - e_source(a2, b2))


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def channel_observables(channel: Channel, trunc: TruncationSpec):
    """``(N, D, X)`` for one channel: total number, difference, exchange."""
    plus, minus = channel_modes(channel)
    n_p = number_operator(plus, trunc)
    n_m = number_operator(minus, trunc)
    a_p = rotated_annihilators(channel, 0.0, trunc)[0]
    a_m = rotated_annihilators(channel, 0.0, trunc)[1]
    exchange = a_p.dag() @ a_m + a_m.dag() @ a_p
    return (
        (n_p + n_m).with_flags(hermitian=True, name=f"N_{channel.value}"),
        (n_p - n_m).with_flags(hermitian=True, name=f"D_{channel.value}"),
        exchange.with_flags(hermitian=True, name=f"X_{channel.value}"),
    )


def rotated_number(
    channel: Channel, polarization: Polarization, delta: float, trunc: TruncationSpec
) -> FourModeOperator:
    """Photon number along ``delta`` (plus) or ``delta + pi/2`` (minus)."""
    shift = 0.0 if polarization is Polarization.PLUS else math.pi / 2
    a = rotated_annihilators(channel, delta + shift, trunc)[0]
    return (a.dag() @ a).with_flags(hermitian=True, name=f"n_{channel.value}{polarization.value}")


def polarization_operator(channel: Channel, delta: float, trunc: TruncationSpec) -> FourModeOperator:
    """``a_delta^dag a_delta - a_bar^dag a_bar`` with ``bar = delta + pi/2``."""
    op = rotated_number(channel, Polarization.PLUS, delta, trunc) - rotated_number(
        channel, Polarization.MINUS, delta, trunc
    )
    return op.with_flags(hermitian=True, name=f"P_{channel.value}")


def parity_operator(mode: ModeIndex, trunc: TruncationSpec) -> FourModeOperator:
    axis = mode.axis
    return FourModeOperator(
        cutoff=trunc.cutoff,
        diagonal=lambda occ: np.where(occ[:, axis] % 2 == 0, 1.0, -1.0),
        hermitian=True,
        name=f"Pi_{mode}",
    )


# ---------------------------------------------------------------------------
# Truncation bounds
# ---------------------------------------------------------------------------


def observable_truncation_bound(
    state: FourModeState, value: float, degree: int, diagonal: bool = False
) -> float:
    """Bound on |<O>_truncated - <O>_exact| for a Schmidt-built state.

    ``degree`` is the power of the channel photon total that bounds the
    operator norm of ``O`` on each number sector (2 for a product of one
    number-type operator per channel, 1 for a single one, 0 for parity).
    Writing the exact state as kept part plus discarded part, the error is
    at most ``sum_N N**degree (2 |kept_N| |out_N| + |out_N|**2)`` plus the
    renormalization term ``|value| * tail``.  The cross term drops when the
    operator is diagonal in the Fock basis or when no sector is split (shell
    support).

    States without Schmidt metadata get ``(2(d-1))**degree * (2 sqrt(err) + err)``.
    """
    if state.zeta is None or state.support is None:
        err = state.truncation_error
        return float((2 * (state.cutoff - 1)) ** degree * (2 * math.sqrt(err) + err))
    sectors, inside, outside = photon_sectors(state.zeta, state.cutoff, state.support)
    weight = sectors.astype(float) ** degree
    bound = float(np.sum(weight * outside))
    if not diagonal and state.support == "box":
        bound += float(2.0 * np.sum(weight * np.sqrt(inside * outside)))
    return bound + abs(value) * state.truncation_error


def scaled_tolerance(state: FourModeState, floor: float = 1e-8, factor: float = 100.0) -> float:
    """``max(floor, factor * tail_mass)`` for bounded, normalized quantities."""
    return max(floor, factor * state.truncation_error)


# ---------------------------------------------------------------------------
# Correlation kernel
# ---------------------------------------------------------------------------


def _coefficients(delta, sign: float) -> np.ndarray:
    """(N, D, X) weights of ``(N + sign * P(delta)) / 2``; ``sign=0`` gives ``P`` itself."""
    delta = np.asarray(delta, dtype=float)
    c, s = np.cos(2 * delta), np.sin(2 * delta)
    if sign == 0:
        return np.stack([np.zeros_like(c), c, s], axis=-1)
    return 0.5 * np.stack([np.ones_like(c), sign * c, sign * s], axis=-1)


class CorrelationKernel:
    """Second moments ``<O_i^A O_j^B>`` of one state, O in (N, D, X)."""

    def __init__(self, state: FourModeState, backend: str = "structured"):
        trunc = TruncationSpec(state.cutoff)
        obs_a = channel_observables(Channel.A, trunc)
        obs_b = channel_observables(Channel.B, trunc)
        moments = np.empty((3, 3))
        for i, oa in enumerate(obs_a):
            for j, ob in enumerate(obs_b):
                prod = (oa @ ob).with_flags(hermitian=True)
                moments[i, j] = expectation(prod, state, backend)
        self.state = state
        self.backend = backend
        self.moments = moments

    def correlation(self, delta_a, delta_b):
        """``<P_A(delta_a) P_B(delta_b)>``; broadcasts over angle arrays."""
        u = _coefficients(delta_a, 0)
        v = _coefficients(delta_b, 0)
        return np.einsum("...i,ij,...j->...", u, self.moments, v)

    def component(self, alpha: Polarization, beta: Polarization, delta_a, delta_b):
        sa = 1.0 if alpha is Polarization.PLUS else -1.0
        sb = 1.0 if beta is Polarization.PLUS else -1.0
        u = _coefficients(delta_a, sa)
        v = _coefficients(delta_b, sb)
        return np.einsum("...i,ij,...j->...", u, self.moments, v)

    @property
    def normalizer(self) -> float:
        return float(self.correlation(0.0, 0.0))

    def E(self, delta, delta_prime):
        """Normalized correlation by same-angle correlations; broadcasts."""
        num = self.correlation(delta, delta_prime)
        den = self.correlation(delta, delta) * self.correlation(delta_prime, delta_prime)
        if np.any(np.asarray(den) <= 0):
            raise DegenerateStateError("same-angle correlation vanishes; E is undefined")
        return num / np.sqrt(den)


def correlation_components(
    state: FourModeState,
    delta_A: float,
    delta_B: float,
    backend: str = "structured",
    kernel: CorrelationKernel | None = None,
) -> CorrelationReport:
    """All four ``C^{alpha beta}`` at the given angles plus derived quantities.

    ``e_value`` is ``None`` and ``degenerate`` is set when the normalizer
    vanishes.
    """
    kernel = kernel or CorrelationKernel(state, backend)
    P, M = Polarization.PLUS, Polarization.MINUS
    c_pp = float(kernel.component(P, P, delta_A, delta_B))
    c_mm = float(kernel.component(M, M, delta_A, delta_B))
    c_pm = float(kernel.component(P, M, delta_A, delta_B))
    c_mp = float(kernel.component(M, P, delta_A, delta_B))
    combined = c_pp + c_mm - c_pm - c_mp
    normalizer = kernel.normalizer
    same_a = float(kernel.correlation(delta_A, delta_A))
    same_b = float(kernel.correlation(delta_B, delta_B))
    degenerate = normalizer <= 0 or same_a <= 0 or same_b <= 0
    e_value = None if degenerate else combined / math.sqrt(same_a * same_b)
    bound = observable_truncation_bound(state, max(abs(c_pp), abs(combined)), degree=2)
    return CorrelationReport(
        c_pp=c_pp,
        c_mm=c_mm,
        c_pm=c_pm,
        c_mp=c_mp,
        c_combined=combined,
        normalizer=normalizer,
        e_value=e_value,
        trunc_bound=bound,
        degenerate=degenerate,
    )


def normalized_E(state: FourModeState, delta: float, delta_prime: float, backend="structured") -> float:
    report = correlation_components(state, delta, delta_prime, backend)
    if report.degenerate:
        raise DegenerateStateError("normalizer vanishes (vacuum); E is undefined")
    return report.e_value


def chsh_value(
    state: FourModeState, quad: AngleQuad, backend="structured", kernel: CorrelationKernel | None = None
) -> ChshResult:
    kernel = kernel or CorrelationKernel(state, backend)
    if kernel.normalizer <= 0:
        raise DegenerateStateError("normalizer vanishes (vacuum); CHSH value is undefined")
    return ChshResult.from_value(chsh_combination(kernel.E, quad), quad)


def mean_polarization(state: FourModeState, channel: Channel, backend="structured") -> float:
    op = polarization_operator(channel, 0.0, TruncationSpec(state.cutoff))
    return expectation(op, state, backend)


def parity_expectation(state: FourModeState, mode: ModeIndex = A_PLUS, backend="structured") -> float:
    return expectation(parity_operator(mode, TruncationSpec(state.cutoff)), state, backend)


def symmetry_fidelity(state: FourModeState, delta: float, channel: Channel | None = None) -> float:
    """``|<psi| exp(-i delta K0) |psi>|``; with ``channel`` only that channel rotates."""
    if delta == 0:
        return 1.0
    trunc = TruncationSpec(state.cutoff)
    gen = build_k0(trunc) if channel is None else build_k0_channel(channel, trunc)
    rotated = expm_apply(gen.scale(-1j), delta, state)
    return abs(state.overlap(rotated))
