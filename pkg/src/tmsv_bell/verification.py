"""Invariant suite covering every module; drives ``tmsv-bell verify``.

Each check records the measured error next to its tolerance.  ``kx_builder``
lets a test inject a mutated squeezing generator to confirm the suite can
fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bell_polarization as bp
from . import chsh_optimizer as co
from . import fock_core as fc
from . import tmsv_state as ts
from . import wigner as wg

ZETAS = (0.2, 0.5, 1.0, 2.0)
EQUIV_ZETAS = (0.0, 0.3, 0.7)


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<40s} measured={self.measured:.3e} {self.relation} {self.tolerance:.3e}"


def _le(name, measured, tol) -> CheckResult:
    measured = float(measured)
    return CheckResult(name, measured, float(tol), bool(measured <= tol))


def _lt(name, measured, bound) -> CheckResult:
    measured = float(measured)
    return CheckResult(name, measured, float(bound), bool(measured < bound), "<")


def _gt(name, measured, bound) -> CheckResult:
    measured = float(measured)
    return CheckResult(name, measured, float(bound), bool(measured > bound), ">")


def _sparse_max(m) -> float:
    m = m.tocsr()
    return float(np.abs(m.data).max()) if m.nnz else 0.0


# ---------------------------------------------------------------------------


def fock_checks(kx_builder: Callable = fc.build_kx) -> list[CheckResult]:
    out = []
    t4, t5, t6 = fc.TruncationSpec(4), fc.TruncationSpec(5), fc.TruncationSpec(6)
    k0 = fc.build_k0(t4)
    out.append(_le("K0 hermitian (d=4)", fc.hermiticity_error(k0), fc.HERMITIAN_TOL))
    kx = kx_builder(t5).matrix
    anti = (kx + kx.conj().T).tocsr()
    idx = np.flatnonzero(fc.interior_mask(5))
    out.append(_le("K_x anti-hermitian on interior (d=5)", _sparse_max(anti[idx][:, idx]), 0.0))
    split = k0.matrix - fc.build_k0_channel(fc.Channel.A, t4).matrix - fc.build_k0_channel(fc.Channel.B, t4).matrix
    out.append(_le("K0 = K0^A + K0^B (d=4)", _sparse_max(split), 0.0))
    vac = fc.FourModeState.vacuum(t4).vector()
    out.append(_le("K0 |0> = 0", float(np.abs(k0.matrix @ vac).max()), 0.0))
    out.append(
        _le("[K0, K_x] interior (d=6)", fc.commutator_interior_norm(fc.build_k0(t6), kx_builder(t6), t6), 1e-12)
    )
    rot = max(fc.rotation_conjugation_error(ch, math.pi / 8, t6) for ch in fc.Channel)
    out.append(_le("rotation closed form vs conjugation", rot, 1e-10))
    out.append(_le("backend equivalence (d<=8)", backend_equivalence_error(kx_builder), 1e-9))
    return out


def equivalence_observables(trunc: fc.TruncationSpec, kx_builder: Callable = fc.build_kx):
    ops = [fc.number_operator(m, trunc) for m in fc.MODES]
    ops += [fc.build_k0(trunc), fc.build_k0_channel(fc.Channel.A, trunc), fc.build_k0_channel(fc.Channel.B, trunc)]
    ops.append((kx_builder(trunc) * 1j).with_flags(hermitian=True, name="iK_x"))
    for delta in (0.0, math.pi / 8, 0.9):
        ops += [bp.polarization_operator(ch, delta, trunc) for ch in fc.Channel]
    P, M = fc.Polarization.PLUS, fc.Polarization.MINUS
    for da, db in ((0.0, 0.0), (0.3, -0.4), (math.pi / 8, 1.1)):
        for alpha in (P, M):
            for beta in (P, M):
                na = bp.rotated_number(fc.Channel.A, alpha, da, trunc)
                nb = bp.rotated_number(fc.Channel.B, beta, db, trunc)
                ops.append((na @ nb).with_flags(hermitian=True))
        ops.append(
            (bp.polarization_operator(fc.Channel.A, da, trunc) @ bp.polarization_operator(fc.Channel.B, db, trunc))
            .with_flags(hermitian=True)
        )
    ops += [bp.parity_operator(m, trunc) for m in fc.MODES]
    return ops


def backend_equivalence_error(kx_builder: Callable = fc.build_kx, cutoffs=(4, 8)) -> float:
    worst = 0.0
    for d in cutoffs:
        trunc = fc.TruncationSpec(d)
        ops = equivalence_observables(trunc, kx_builder)
        for zeta in EQUIV_ZETAS:
            for support in ts.SUPPORTS:
                state = ts.build_state_schmidt(zeta, trunc, support)
                for op in ops:
                    dense = fc.expectation(op, state, "dense")
                    struct = fc.expectation(op, state, "structured")
                    worst = max(worst, abs(dense - struct))
    return worst


def tmsv_checks(kx_builder: Callable = fc.build_kx, tail_tolerance: float = 1e-10) -> list[CheckResult]:
    out = []
    worst = 0.0
    for zeta in ZETAS:
        trunc = ts.choose_cutoff(zeta, tail_tolerance)
        prof = ts.schmidt_profile(zeta, trunc)
        worst = max(worst, abs(np.sum(prof.lambdas**2) + prof.tail_mass - 1.0))
    out.append(_le("Schmidt tail identity", worst, 1e-12))

    trunc = fc.TruncationSpec(10)
    vac = fc.FourModeState.vacuum(trunc)
    built = fc.expm_apply(kx_builder(trunc), 0.3, vac)
    ref = ts.build_state_schmidt(0.3, trunc)
    out.append(_le("exp(zeta K_x)|0> vs Schmidt (zeta=0.3,d=10)", 1.0 - built.fidelity(ref), 1e-8))

    worst_ratio = 0.0
    for zeta in ZETAS:
        state = ts.build_state_schmidt(zeta, ts.choose_cutoff(zeta, tail_tolerance, "shell"), "shell")
        for mode in fc.MODES:
            val = fc.expectation(fc.number_operator(mode, fc.TruncationSpec(state.cutoff)), state)
            bound = bp.observable_truncation_bound(state, val, degree=1, diagonal=True)
            worst_ratio = max(worst_ratio, abs(val - math.sinh(zeta) ** 2) / (10 * bound))
    out.append(_le("mean photon number / (10 x trunc bound)", worst_ratio, 1.0))
    return out


def production_state(zeta: float, tail_tolerance: float) -> fc.FourModeState:
    trunc = ts.choose_cutoff(zeta, tail_tolerance, "shell")
    return ts.build_state_schmidt(zeta, trunc, "shell")


def e_law_pairs(count: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """``count`` pairs with both angles uniformly spaced over [0, pi)."""
    delta = np.arange(count) * math.pi / count
    delta_prime = (delta * 7 + math.pi / 7) % math.pi
    return delta, delta_prime


def bell_checks(tail_tolerance: float = 1e-10, kx_builder: Callable = fc.build_kx) -> list[CheckResult]:
    out = []
    states = {z: production_state(z, tail_tolerance) for z in ZETAS}
    kernels = {z: bp.CorrelationKernel(s) for z, s in states.items()}
    a, b = e_law_pairs()

    e_ratio = max(
        float(np.abs(kernels[z].E(a, b) - bp.e_law(a, b)).max()) / bp.scaled_tolerance(states[z])
        for z in ZETAS
    )
    out.append(_le("E-law / max(1e-8, 100 tail)", e_ratio, 1.0))

    n_ratio = 0.0
    for z in ZETAS:
        rep = bp.correlation_components(states[z], 0.0, 0.0, kernel=kernels[z])
        n_ratio = max(n_ratio, abs(rep.normalizer - bp.normalizer_closed_form(z)) / (10 * rep.trunc_bound))
    out.append(_le("normalizer / (10 x trunc bound)", n_ratio, 1.0))

    s_vals = [bp.chsh_value(states[z], bp.CANONICAL_ANGLES, kernel=kernels[z]).s_value for z in ZETAS]
    out.append(_le("CHSH canonical |S - 2 sqrt 2|", max(abs(s - bp.TSIRELSON) for s in s_vals), 1e-6))
    out.append(_lt("CHSH spread across zeta", max(s_vals) - min(s_vals), 1e-8))

    mp = max(abs(bp.mean_polarization(states[z], ch)) for z in ZETAS for ch in fc.Channel)
    out.append(_le("mean polarization", mp, 1e-9))

    par_ratio, parities = 0.0, []
    for z in ZETAS:
        val = bp.parity_expectation(states[z])
        parities.append(val)
        bound = bp.observable_truncation_bound(states[z], val, degree=0, diagonal=True)
        par_ratio = max(par_ratio, abs(val - bp.parity_closed_form(z)) / (10 * bound))
    out.append(_le("parity / (10 x trunc bound)", par_ratio, 1.0))
    out.append(_gt("parity strictly decreasing (min step)", -max(np.diff(parities)), 0.0))

    drift = 0.0
    for z in ZETAS:
        r0 = bp.correlation_components(states[z], 0.1, 0.5, kernel=kernels[z])
        r1 = bp.correlation_components(states[z], 0.4, 0.8, kernel=kernels[z])
        fields = ("c_pp", "c_mm", "c_pm", "c_mp", "c_combined", "normalizer", "e_value")
        drift = max(drift, max(abs(getattr(r0, f) - getattr(r1, f)) for f in fields))
    out.append(_le("common rotation leaves report invariant", drift, 1e-9))

    k1 = kernels[1.0]
    base = bp.correlation_components(states[1.0], 0.0, 0.0, kernel=k1)
    moved = bp.correlation_components(states[1.0], 0.3, 0.0, kernel=k1)
    shift = max(abs(getattr(base, f) - getattr(moved, f)) for f in ("c_pp", "c_mm", "c_pm", "c_mp"))
    out.append(_gt("single-channel rotation shifts components", shift, 1e-3))

    small = ts.build_state_schmidt(0.3, fc.TruncationSpec(10))
    out.append(_le("exp(-i delta K0) infidelity", 1.0 - bp.symmetry_fidelity(small, 0.7), 1e-8))
    out.append(_lt("exp(-i delta K0^A) fidelity", bp.symmetry_fidelity(small, 0.7, fc.Channel.A), 1.0 - 1e-3))

    trunc = fc.TruncationSpec(10)
    built = fc.expm_apply(kx_builder(trunc), 0.3, fc.FourModeState.vacuum(trunc))
    kd = bp.CorrelationKernel(built, backend="dense")
    a12, b12 = e_law_pairs(12)
    try:
        err = float(np.abs(kd.E(a12, b12) - bp.e_law(a12, b12)).max())
    except bp.DegenerateStateError:
        err = math.inf
    out.append(_le("E-law on exp(zeta K_x)|0> (dense, d=10)", err, bp.scaled_tolerance(built)))
    return out


def wigner_checks(seed: int = 0, points: int = 20) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(seed)
    lowest = math.inf
    norms = {}
    for z in (0.0, 0.5, 1.0):
        quad = wg.integrate_wigner(z)
        norms[z] = quad.total
        lowest = min(lowest, quad.minimum)
        alphas = rng.normal(size=(200, 2)) + 1j * rng.normal(size=(200, 2))
        lowest = min(lowest, float(wg.wigner_sector(z, alphas[:, 0], alphas[:, 1]).min()))
    out.append(CheckResult("Wigner non-negative (min value)", lowest, 0.0, lowest >= 0.0, ">="))
    out.append(_le("Wigner sector normalization", max(abs(v - 1.0) for v in norms.values()), 1e-4))
    out.append(_le("Wigner total normalization", max(abs(v * v - 1.0) for v in norms.values()), 2e-4))

    state = ts.build_state_schmidt(0.3, fc.TruncationSpec(12))
    worst = 0.0
    for pt in random_phase_points(rng, points):
        worst = max(worst, abs(wg.wigner_from_state(state, pt) - wg.wigner_analytic(0.3, pt)))
    out.append(_le("displaced parity vs analytic (zeta=0.3,d=12)", worst, max(1e-6, 100 * state.truncation_error)))
    return out


def random_phase_points(rng: np.random.Generator, count: int) -> list[wg.PhasePoint]:
    """Points with |alpha_A|, |alpha_B| <= 1, uniform in the disc."""
    r = np.sqrt(rng.uniform(0, 1, size=(count, 2)))
    th = rng.uniform(0, 2 * math.pi, size=(count, 2))
    z = r * np.exp(1j * th)
    return [wg.PhasePoint(complex(x), complex(y)) for x, y in z]


def optimizer_checks(seed: int = 0, tail_tolerance: float = 1e-10) -> list[CheckResult]:
    out = []
    worst = 0.0
    for step in (math.pi / 24, math.pi / 48):
        opt = co.optimize(bp.e_law, co.OptimizerConfig(coarse_step=step))
        worst = max(worst, abs(opt.best.s_value - bp.TSIRELSON))
    out.append(_le("optimizer on cosine law |S - 2 sqrt 2|", worst, 1e-9))

    state = production_state(1.0, tail_tolerance)
    kernel = bp.CorrelationKernel(state)
    opt = co.optimize(kernel.E)
    out.append(
        _le("optimizer on numeric E (zeta=1)", abs(opt.best.s_value - bp.TSIRELSON), max(1e-6, 100 * state.truncation_error))
    )
    quads = co.random_quads(np.random.default_rng(seed), 10_000)
    ceiling = max(float(co.chsh_batch(bp.e_law, quads).max()), float(co.chsh_batch(kernel.E, quads).max()))
    out.append(_le("Tsirelson ceiling over 1e4 random quads", ceiling - bp.TSIRELSON, 1e-9))
    return out


def run_verification(
    tail_tolerance: float = 1e-10, seed: int = 0, kx_builder: Callable = fc.build_kx
) -> list[CheckResult]:
    groups = [
        ("fock_core", lambda: fock_checks(kx_builder)),
        ("tmsv_state", lambda: tmsv_checks(kx_builder, tail_tolerance)),
        ("bell_polarization", lambda: bell_checks(tail_tolerance, kx_builder)),
        ("wigner", lambda: wigner_checks(seed)),
        ("chsh_optimizer", lambda: optimizer_checks(seed, tail_tolerance)),
    ]
    results = []
    for name, run in groups:
        try:
            results += run()
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            results.append(CheckResult(f"{name} raised {type(exc).__name__}", math.inf, 0.0, False))
    return results


def sign_flipped_kx(trunc: fc.TruncationSpec) -> fc.FourModeOperator:
    """Mutant generator with the minus-polarization terms negated."""
    kx = fc.build_kx(trunc)
    minus_axes = (fc.A_MINUS.axis, fc.B_MINUS.axis)
    terms = []
    for powers, coef in kx.terms:
        touches_minus = any(powers[ax] != (0, 0) for ax in minus_axes)
        terms.append((powers, -coef if touches_minus else coef))
    return fc.FourModeOperator.from_terms(trunc.cutoff, terms, name="K_x (mutant)")
