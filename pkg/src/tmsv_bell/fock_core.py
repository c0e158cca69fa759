"""Truncated Fock-space algebra for the four modes (a+, a-, b+, b-).

Tensor factors are always ordered ``(a+, a-, b+, b-)`` and flattened
row-major, so the basis state ``|n0, n1, n2, n3>`` sits at flat index
``((n0 * d + n1) * d + n2) * d + n3``.  This matches
``kron(M_a+, M_a-, M_b+, M_b-)`` for per-mode matrices.

Operators carry a symbolic form: a sum of normally ordered monomials
``c * prod_k (a_k^dag)^p_k a_k^q_k`` plus an optional diagonal function of the
occupations.  Two backends evaluate them:

* ``"dense"``: the explicit d^4 x d^4 matrix (stored as ``scipy.sparse``
  CSR, since even d = 10 gives 10^4 x 10^4).  Each monomial is materialized
  as the product of truncated ladder matrices in the written order.
* ``"structured"``: direct action of each monomial on the nonzero
  amplitudes of a sparse state.  Cost scales with the state's support, not
  with d^4.

Both backends implement truncated ladders (``a^dag |d-1> = 0``), so they agree
to roundoff on every basis state, including the boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

HERMITIAN_TOL = 1e-12
EXPECTATION_IMAG_TOL = 1e-10
NUM_MODES = 4


class Channel(enum.Enum):
    A = "A"
    B = "B"


class Polarization(enum.Enum):
    PLUS = "+"
    MINUS = "-"


@dataclass(frozen=True)
class ModeIndex:
    channel: Channel
    polarization: Polarization

    @property
    def axis(self) -> int:
        """Position of this mode in the fixed factor ordering."""
        base = 0 if self.channel is Channel.A else 2
        return base + (0 if self.polarization is Polarization.PLUS else 1)

    def __str__(self) -> str:
        letter = "a" if self.channel is Channel.A else "b"
        return f"{letter}{self.polarization.value}"


A_PLUS = ModeIndex(Channel.A, Polarization.PLUS)
A_MINUS = ModeIndex(Channel.A, Polarization.MINUS)
B_PLUS = ModeIndex(Channel.B, Polarization.PLUS)
B_MINUS = ModeIndex(Channel.B, Polarization.MINUS)
MODES = (A_PLUS, A_MINUS, B_PLUS, B_MINUS)


def channel_modes(channel: Channel) -> tuple[ModeIndex, ModeIndex]:
    if channel is Channel.A:
        return A_PLUS, A_MINUS
    return B_PLUS, B_MINUS


@dataclass(frozen=True)
class TruncationSpec:
    """Fock cutoff ``d`` (levels 0..d-1 per mode) and target tail mass."""

    cutoff: int
    tail_tolerance: float = 0.0

    def __post_init__(self):
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise ValueError(f"cutoff must be an integer >= 2, got {self.cutoff!r}")
        if not 0.0 <= self.tail_tolerance < 1.0:
            raise ValueError(f"tail_tolerance must lie in [0, 1), got {self.tail_tolerance!r}")

    @property
    def dim(self) -> int:
        return self.cutoff**NUM_MODES


class ExpmConvergenceError(RuntimeError):
    """The Taylor series of the exponential did not converge."""


class DimensionMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Symbolic operators
# ---------------------------------------------------------------------------

# One monomial: per-mode (creation power, annihilation power).
Powers = tuple[tuple[int, int], ...]
_IDENTITY_POWERS: Powers = ((0, 0),) * NUM_MODES


def _normal_order_single(left: tuple[int, int], right: tuple[int, int]):
    """Normal-order (a^dag^p a^q)(a^dag^r a^s) for one mode.

    Uses a^q a^dag^r = sum_j C(q,j) C(r,j) j! a^dag^(r-j) a^(q-j).
    """
    p, q = left
    r, s = right
    out = []
    for j in range(min(q, r) + 1):
        w = math.comb(q, j) * math.comb(r, j) * math.factorial(j)
        out.append((w, (p + r - j, q + s - j)))
    return out


def _mul_powers(left: Powers, right: Powers) -> list[tuple[int, Powers]]:
    acc: list[tuple[int, tuple]] = [(1, ())]
    for lp, rp in zip(left, right):
        single = _normal_order_single(lp, rp)
        acc = [(w0 * w1, prev + (pw,)) for w0, prev in acc for w1, pw in single]
    return acc


@dataclass(frozen=True)
class FourModeOperator:
    """Operator on the truncated four-mode space.

    ``terms`` maps normally ordered monomials to complex coefficients.
    ``diagonal`` optionally adds ``sum_n f(n)|n><n|`` with ``f`` evaluated on
    an ``(k, 4)`` array of occupations.  ``cutoff`` is the truncation the
    operator was built for; ``hermitian`` records the physical promise that
    lets :func:`expectation` discard the imaginary part.
    """

    cutoff: int
    terms: tuple[tuple[Powers, complex], ...] = ()
    diagonal: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hermitian: bool = False
    name: str = ""
    _explicit: Optional[sp.csr_matrix] = field(default=None, compare=False, repr=False)

    # --- construction helpers -------------------------------------------
    @classmethod
    def from_terms(cls, cutoff, terms: Iterable[tuple[Powers, complex]], **kw):
        merged: dict[Powers, complex] = {}
        for powers, coef in terms:
            merged[powers] = merged.get(powers, 0.0) + complex(coef)
        clean = tuple((pw, c) for pw, c in merged.items() if c != 0)
        return cls(cutoff=cutoff, terms=clean, **kw)

    @classmethod
    def from_matrix(cls, matrix, *, hermitian=False, name=""):
        """Wrap an explicit matrix; such operators only support the dense backend."""
        matrix = sp.csr_matrix(matrix)
        dim = matrix.shape[0]
        d = round(dim ** (1 / NUM_MODES))
        if d**NUM_MODES != dim or matrix.shape != (dim, dim):
            raise DimensionMismatchError(f"matrix shape {matrix.shape} is not d^4 x d^4")
        return cls(cutoff=d, hermitian=hermitian, name=name, _explicit=matrix)

    @property
    def is_symbolic(self) -> bool:
        return self._explicit is None

    # --- algebra --------------------------------------------------------
    def _check_compatible(self, other: "FourModeOperator"):
        if self.cutoff != other.cutoff:
            raise DimensionMismatchError(
                f"operators built for cutoffs {self.cutoff} and {other.cutoff}"
            )
        if not (self.is_symbolic and other.is_symbolic):
            raise TypeError("symbolic algebra is unavailable for matrix-only operators")

    def __add__(self, other: "FourModeOperator") -> "FourModeOperator":
        self._check_compatible(other)
        if self.diagonal is None or other.diagonal is None:
            diag = self.diagonal or other.diagonal
        else:
            f, g = self.diagonal, other.diagonal
            diag = lambda occ: f(occ) + g(occ)  # noqa: E731
        return FourModeOperator.from_terms(
            self.cutoff,
            self.terms + other.terms,
            diagonal=diag,
            hermitian=self.hermitian and other.hermitian,
        )

    def __neg__(self) -> "FourModeOperator":
        return self.scale(-1.0)

    def __sub__(self, other: "FourModeOperator") -> "FourModeOperator":
        return self + (-other)

    def scale(self, c: complex) -> "FourModeOperator":
        if not self.is_symbolic:
            return FourModeOperator.from_matrix(
                c * self._explicit, hermitian=self.hermitian and np.isreal(c)
            )
        diag = None
        if self.diagonal is not None:
            f = self.diagonal
            diag = lambda occ: c * f(occ)  # noqa: E731
        return FourModeOperator.from_terms(
            self.cutoff,
            [(pw, c * coef) for pw, coef in self.terms],
            diagonal=diag,
            hermitian=self.hermitian and complex(c).imag == 0,
        )

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __matmul__(self, other: "FourModeOperator") -> "FourModeOperator":
        """Operator product, normally ordered mode by mode."""
        self._check_compatible(other)
        if self.diagonal is not None or other.diagonal is not None:
            raise TypeError("products involving diagonal functions are not supported")
        out = []
        for lp, lc in self.terms:
            for rp, rc in other.terms:
                for w, pw in _mul_powers(lp, rp):
                    out.append((pw, w * lc * rc))
        return FourModeOperator.from_terms(self.cutoff, out)

    def dag(self) -> "FourModeOperator":
        if not self.is_symbolic:
            return FourModeOperator.from_matrix(
                self._explicit.conj().T, hermitian=self.hermitian
            )
        diag = None
        if self.diagonal is not None:
            f = self.diagonal
            diag = lambda occ: np.conj(f(occ))  # noqa: E731
        terms = [(tuple((q, p) for p, q in pw), np.conj(c)) for pw, c in self.terms]
        return FourModeOperator.from_terms(
            self.cutoff, terms, diagonal=diag, hermitian=self.hermitian
        )

    def with_flags(self, *, hermitian: bool | None = None, name: str | None = None):
        return FourModeOperator(
            cutoff=self.cutoff,
            terms=self.terms,
            diagonal=self.diagonal,
            hermitian=self.hermitian if hermitian is None else hermitian,
            name=self.name if name is None else name,
            _explicit=self._explicit,
        )

    # --- dense backend --------------------------------------------------
    @property
    def matrix(self) -> sp.csr_matrix:
        """Explicit d^4 x d^4 matrix (CSR)."""
        if self._explicit is not None:
            return self._explicit
        cached = self.__dict__.get("_matrix_cache")
        if cached is not None:
            return cached
        d = self.cutoff
        mat = sp.csr_matrix((d**NUM_MODES, d**NUM_MODES), dtype=complex)
        for powers, coef in self.terms:
            factors = [_single_mode_monomial(d, p, q) for p, q in powers]
            mat = mat + coef * _kron_all(factors)
        if self.diagonal is not None:
            vals = self.diagonal(all_occupations(d))
            mat = mat + sp.diags(np.asarray(vals, dtype=complex), format="csr")
        mat = sp.csr_matrix(mat)
        object.__setattr__(self, "_matrix_cache", mat)
        return mat

    def dense_array(self) -> np.ndarray:
        return self.matrix.toarray()


def _ladder(d: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, shape=(d, d), format="csr")


def _single_mode_monomial(d: int, p: int, q: int) -> sp.csr_matrix:
    a = _ladder(d)
    out = sp.identity(d, format="csr", dtype=float)
    for _ in range(p):
        out = out @ a.T
    for _ in range(q):
        out = out @ a
    return sp.csr_matrix(out)


def _kron_all(factors: Sequence[sp.spmatrix]) -> sp.csr_matrix:
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return sp.csr_matrix(out)


def all_occupations(d: int) -> np.ndarray:
    """All basis occupations in flat-index order, shape ``(d**4, 4)``."""
    grids = np.indices((d,) * NUM_MODES).reshape(NUM_MODES, -1)
    return grids.T.copy()


def single_mode_annihilator(d: int) -> np.ndarray:
    """Dense ``d x d`` annihilation matrix with sqrt(n) on the superdiagonal."""
    return _ladder(d).toarray()


def _mode_powers(mode: ModeIndex, cre: int, ann: int) -> Powers:
    pw = list(_IDENTITY_POWERS)
    pw[mode.axis] = (cre, ann)
    return tuple(pw)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def identity(trunc: TruncationSpec) -> FourModeOperator:
    return FourModeOperator.from_terms(
        trunc.cutoff, [(_IDENTITY_POWERS, 1.0)], hermitian=True, name="I"
    )


def annihilator(mode: ModeIndex, trunc: TruncationSpec) -> FourModeOperator:
    return FourModeOperator.from_terms(
        trunc.cutoff, [(_mode_powers(mode, 0, 1), 1.0)], name=str(mode)
    )


def creator(mode: ModeIndex, trunc: TruncationSpec) -> FourModeOperator:
    return FourModeOperator.from_terms(
        trunc.cutoff, [(_mode_powers(mode, 1, 0), 1.0)], name=f"{mode}^dag"
    )


def number_operator(mode: ModeIndex, trunc: TruncationSpec) -> FourModeOperator:
    return FourModeOperator.from_terms(
        trunc.cutoff, [(_mode_powers(mode, 1, 1), 1.0)], hermitian=True, name=f"n_{mode}"
    )


def _pair(m1: ModeIndex, cre1: int, ann1: int, m2: ModeIndex, cre2: int, ann2: int) -> Powers:
    pw = list(_IDENTITY_POWERS)
    pw[m1.axis] = (cre1, ann1)
    pw[m2.axis] = (cre2, ann2)
    return tuple(pw)


def build_kx(trunc: TruncationSpec) -> FourModeOperator:
    """Squeezing generator ``a+^dag b+^dag + a-^dag b-^dag - a+ b+ - a- b-``."""
    terms = [
        (_pair(A_PLUS, 1, 0, B_PLUS, 1, 0), 1.0),
        (_pair(A_MINUS, 1, 0, B_MINUS, 1, 0), 1.0),
        (_pair(A_PLUS, 0, 1, B_PLUS, 0, 1), -1.0),
        (_pair(A_MINUS, 0, 1, B_MINUS, 0, 1), -1.0),
    ]
    return FourModeOperator.from_terms(trunc.cutoff, terms, name="K_x")


def build_k0_channel(channel: Channel, trunc: TruncationSpec) -> FourModeOperator:
    """Polarization-rotation generator ``i (p^dag m - m^dag p)`` of one channel."""
    plus, minus = channel_modes(channel)
    terms = [
        (_pair(plus, 1, 0, minus, 0, 1), 1j),
        (_pair(plus, 0, 1, minus, 1, 0), -1j),
    ]
    return FourModeOperator.from_terms(
        trunc.cutoff, terms, hermitian=True, name=f"K0^{channel.value}"
    )


def build_k0(trunc: TruncationSpec) -> FourModeOperator:
    op = build_k0_channel(Channel.A, trunc) + build_k0_channel(Channel.B, trunc)
    return op.with_flags(hermitian=True, name="K0")


# ---------------------------------------------------------------------------
# Polarization rotation
# ---------------------------------------------------------------------------


def rotate_modes(channel: Channel, delta: float) -> np.ndarray:
    """Coefficients of the rotated annihilators of ``channel``.

    Row ``k`` gives the rotated mode ``k`` (0 = plus, 1 = minus) as a
    combination of the unrotated (plus, minus) annihilators::

        a+(delta) =  cos(delta) a+ + sin(delta) a-
        a-(delta) = -sin(delta) a+ + cos(delta) a-

    This equals ``exp(i delta K0^ch) a exp(-i delta K0^ch)``.  The transform is
    the same for both channels; ``channel`` is accepted so call sites read
    naturally.
    """
    del channel
    c, s = math.cos(delta), math.sin(delta)
    return np.array([[c, s], [-s, c]])


def rotated_annihilators(
    channel: Channel, delta: float, trunc: TruncationSpec
) -> tuple[FourModeOperator, FourModeOperator]:
    plus, minus = channel_modes(channel)
    ops = (annihilator(plus, trunc), annihilator(minus, trunc))
    rot = rotate_modes(channel, delta)
    return tuple(ops[0] * rot[k, 0] + ops[1] * rot[k, 1] for k in range(2))


def rotation_conjugation_error(channel: Channel, delta: float, trunc: TruncationSpec) -> float:
    """Largest entry of closed-form rotation minus explicit conjugation.

    The conjugation ``exp(i delta K0^ch) a exp(-i delta K0^ch)`` is computed with
    dense ``scipy.linalg.expm`` on the full d^4 space, so keep d small.  The
    comparison is restricted to basis states whose photon total in the rotated
    channel is at most d - 1: only those number sectors fit completely
    inside the per-mode box, and only there is the truncated rotation exact.
    """
    k0 = build_k0_channel(channel, trunc).dense_array()
    u = scipy.linalg.expm(1j * delta * k0)
    plus, minus = channel_modes(channel)
    base = (annihilator(plus, trunc).dense_array(), annihilator(minus, trunc).dense_array())
    closed = rotated_annihilators(channel, delta, trunc)
    mask = channel_total_mask(trunc.cutoff, channel)
    worst = 0.0
    for k in range(2):
        conj = u @ base[k] @ u.conj().T
        diff = (closed[k].dense_array() - conj)[np.ix_(mask, mask)]
        worst = max(worst, float(np.abs(diff).max()))
    return worst


# ---------------------------------------------------------------------------
# Interior projections and commutators
# ---------------------------------------------------------------------------


def interior_mask(d: int) -> np.ndarray:
    """Basis states with every occupation <= d - 2."""
    return np.all(all_occupations(d) <= d - 2, axis=1)


def channel_total_mask(d: int, channel: Channel | None = None) -> np.ndarray:
    """Basis states whose per-channel photon totals are <= d - 1."""
    occ = all_occupations(d)
    tot_a = occ[:, 0] + occ[:, 1]
    tot_b = occ[:, 2] + occ[:, 3]
    if channel is Channel.A:
        return tot_a <= d - 1
    if channel is Channel.B:
        return tot_b <= d - 1
    return (tot_a <= d - 1) & (tot_b <= d - 1)


def commutator_interior_norm(
    x: FourModeOperator, y: FourModeOperator, trunc: TruncationSpec
) -> float:
    """Max |entry| of ``XY - YX`` on the interior (all occupations <= d-2)."""
    mx, my = x.matrix, y.matrix
    if mx.shape != my.shape or mx.shape[0] != trunc.dim:
        raise DimensionMismatchError(
            f"operator shapes {mx.shape}, {my.shape} do not match cutoff {trunc.cutoff}"
        )
    comm = (mx @ my - my @ mx).tocsr()
    idx = np.flatnonzero(interior_mask(trunc.cutoff))
    block = comm[idx][:, idx]
    if block.nnz == 0:
        return 0.0
    return float(np.abs(block.data).max())


def hermiticity_error(op: FourModeOperator) -> float:
    m = op.matrix
    diff = (m - m.conj().T).tocsr()
    return float(np.abs(diff.data).max()) if diff.nnz else 0.0


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourModeState:
    """Normalized pure state stored by its nonzero amplitudes.

    ``occupations`` has shape ``(k, 4)`` (factor order a+, a-, b+, b-) and is
    sorted by flat index; ``amplitudes`` has shape ``(k,)``.
    ``truncation_error`` estimates the probability mass lost to the cutoff.
    ``zeta`` and ``support`` are set by the Schmidt builders and let
    downstream code compute observable-specific truncation bounds.
    """

    cutoff: int
    occupations: np.ndarray
    amplitudes: np.ndarray
    truncation_error: float = 0.0
    zeta: Optional[float] = None
    support: Optional[str] = None

    @classmethod
    def from_amplitudes(cls, cutoff, occupations, amplitudes, *, normalize=True, **meta):
        occ = np.asarray(occupations, dtype=np.int64).reshape(-1, NUM_MODES)
        amp = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if occ.shape[0] != amp.shape[0]:
            raise DimensionMismatchError("occupations and amplitudes differ in length")
        if occ.size and (occ.min() < 0 or occ.max() >= cutoff):
            raise ValueError("occupation outside 0..cutoff-1")
        keep = amp != 0
        occ, amp = occ[keep], amp[keep]
        flat = np.ravel_multi_index(occ.T, (cutoff,) * NUM_MODES)
        order = np.argsort(flat, kind="stable")
        occ, amp = occ[order], amp[order]
        if np.any(np.diff(flat[order]) == 0):
            raise ValueError("duplicate basis states")
        if normalize:
            norm = np.linalg.norm(amp)
            if norm == 0:
                raise ValueError("cannot normalize the zero vector")
            amp = amp / norm
        occ.setflags(write=False)
        amp.setflags(write=False)
        return cls(cutoff=cutoff, occupations=occ, amplitudes=amp, **meta)

    @classmethod
    def from_vector(cls, vector, cutoff, *, normalize=True, **meta):
        vec = np.asarray(vector, dtype=complex).reshape(-1)
        if vec.size != cutoff**NUM_MODES:
            raise DimensionMismatchError(f"vector of size {vec.size} is not {cutoff}^4")
        nz = np.flatnonzero(vec)
        occ = np.stack(np.unravel_index(nz, (cutoff,) * NUM_MODES), axis=1)
        return cls.from_amplitudes(cutoff, occ, vec[nz], normalize=normalize, **meta)

    @classmethod
    def vacuum(cls, trunc: TruncationSpec) -> "FourModeState":
        return cls.from_amplitudes(trunc.cutoff, [[0, 0, 0, 0]], [1.0])

    @property
    def flat_indices(self) -> np.ndarray:
        return np.ravel_multi_index(self.occupations.T, (self.cutoff,) * NUM_MODES)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def vector(self) -> np.ndarray:
        out = np.zeros(self.cutoff**NUM_MODES, dtype=complex)
        out[self.flat_indices] = self.amplitudes
        return out

    def tensor(self) -> np.ndarray:
        return self.vector().reshape((self.cutoff,) * NUM_MODES)

    def overlap(self, other: "FourModeState") -> complex:
        """``<self|other>``."""
        if other.cutoff != self.cutoff:
            raise DimensionMismatchError("states on different cutoffs")
        fa, fb = self.flat_indices, other.flat_indices
        _, ia, ib = np.intersect1d(fa, fb, assume_unique=True, return_indices=True)
        return complex(np.vdot(self.amplitudes[ia], other.amplitudes[ib]))

    def fidelity(self, other: "FourModeState") -> float:
        return abs(self.overlap(other))

    def boundary_mass(self) -> float:
        """Probability on basis states with some mode at the top level d-1."""
        hit = np.any(self.occupations == self.cutoff - 1, axis=1)
        return float(self.probabilities[hit].sum())


# ---------------------------------------------------------------------------
# Structured backend
# ---------------------------------------------------------------------------


def _apply_monomial(powers: Powers, occ: np.ndarray, d: int):
    """Act with a normally ordered monomial on basis states.

    Returns the new occupations, the real coefficients and a validity mask.
    """
    occ = occ.copy()
    coef = np.ones(occ.shape[0])
    valid = np.ones(occ.shape[0], dtype=bool)
    for axis, (cre, ann) in enumerate(powers):
        col = occ[:, axis]
        for _ in range(ann):
            valid &= col > 0
            coef *= np.sqrt(np.maximum(col, 0))
            col -= 1
        for _ in range(cre):
            col += 1
            valid &= col <= d - 1
            coef *= np.sqrt(np.maximum(col, 0))
    return occ, coef, valid


def apply_structured(op: FourModeOperator, state: FourModeState) -> FourModeState:
    """``op |state>`` without normalization, via the structured backend."""
    _check_dims(op, state)
    if not op.is_symbolic:
        raise TypeError("matrix-only operator has no structured form")
    d = state.cutoff
    flats, vals = [], []
    for powers, c in op.terms:
        new_occ, coef, valid = _apply_monomial(powers, state.occupations, d)
        if not valid.any():
            continue
        flats.append(np.ravel_multi_index(new_occ[valid].T, (d,) * NUM_MODES))
        vals.append(c * coef[valid] * state.amplitudes[valid])
    if op.diagonal is not None:
        flats.append(state.flat_indices)
        vals.append(np.asarray(op.diagonal(state.occupations)) * state.amplitudes)
    if not flats:
        return FourModeState(d, np.zeros((0, NUM_MODES), np.int64), np.zeros(0, complex))
    flat = np.concatenate(flats)
    val = np.concatenate(vals)
    uniq, inv = np.unique(flat, return_inverse=True)
    summed = np.zeros(uniq.size, dtype=complex)
    np.add.at(summed, inv, val)
    occ = np.stack(np.unravel_index(uniq, (d,) * NUM_MODES), axis=1)
    return FourModeState(d, occ, summed, truncation_error=state.truncation_error)


def _expectation_structured(op: FourModeOperator, state: FourModeState) -> complex:
    d = state.cutoff
    src_flat = state.flat_indices
    amp = state.amplitudes
    total = 0.0 + 0.0j
    for powers, c in op.terms:
        new_occ, coef, valid = _apply_monomial(powers, state.occupations, d)
        if not valid.any():
            continue
        tgt = np.ravel_multi_index(new_occ[valid].T, (d,) * NUM_MODES)
        pos = np.searchsorted(src_flat, tgt)
        pos_c = np.minimum(pos, src_flat.size - 1)
        hit = src_flat[pos_c] == tgt
        if not hit.any():
            continue
        contrib = np.conj(amp[pos_c[hit]]) * coef[valid][hit] * amp[valid][hit]
        total += c * contrib.sum()
    if op.diagonal is not None:
        total += np.sum(np.asarray(op.diagonal(state.occupations)) * np.abs(amp) ** 2)
    return complex(total)


def _expectation_dense(op: FourModeOperator, state: FourModeState) -> complex:
    v = state.vector()
    return complex(np.vdot(v, op.matrix @ v))


def _check_dims(op: FourModeOperator, state: FourModeState):
    if op.cutoff != state.cutoff:
        raise DimensionMismatchError(
            f"operator cutoff {op.cutoff} does not match state cutoff {state.cutoff}"
        )


def expectation(op: FourModeOperator, state: FourModeState, backend: str = "auto"):
    """``<state|op|state>``.

    Returns a real float for hermitian operators (after checking that the
    imaginary part is below 1e-10) and a complex number otherwise.
    ``backend`` is ``"dense"``, ``"structured"`` or ``"auto"`` (structured
    whenever the operator has a symbolic form).
    """
    _check_dims(op, state)
    if backend == "auto":
        backend = "structured" if op.is_symbolic else "dense"
    if backend == "structured":
        value = _expectation_structured(op, state)
    elif backend == "dense":
        value = _expectation_dense(op, state)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if op.hermitian:
        if abs(value.imag) > EXPECTATION_IMAG_TOL:
            raise ArithmeticError(
                f"hermitian {op.name or 'operator'} has expectation with imaginary part "
                f"{value.imag:.3e}"
            )
        return float(value.real)
    return value


# ---------------------------------------------------------------------------
# Matrix exponential action
# ---------------------------------------------------------------------------


def expm_multiply_taylor(matrix, vectors, scale: float = 1.0, *, max_terms: int = 80):
    """``exp(scale * matrix) @ vectors`` by a stepped Taylor series.

    The interval is split into ``s`` substeps with ``|scale| * ||matrix||_1 / s
    <= 1``; within each substep the series is summed until the newest term is
    below double-precision roundoff relative to the partial sum.
    """
    mat = sp.csr_matrix(matrix) if sp.issparse(matrix) else np.asarray(matrix)
    out = np.array(vectors, dtype=complex, copy=True)
    if scale == 0:
        return out
    if sp.issparse(mat):
        norm1 = float(abs(mat).sum(axis=0).max()) if mat.nnz else 0.0
    else:
        norm1 = float(np.abs(mat).sum(axis=0).max()) if mat.size else 0.0
    theta = abs(scale) * norm1
    if not np.isfinite(theta):
        raise ExpmConvergenceError("generator norm is not finite")
    steps = max(1, int(math.ceil(theta)))
    h = scale / steps
    eps = np.finfo(float).eps
    for _ in range(steps):
        term = out
        acc = out.copy()
        for k in range(1, max_terms + 1):
            term = (h / k) * (mat @ term)
            acc = acc + term
            tn = np.linalg.norm(term)
            if tn <= eps * 0.5 * np.linalg.norm(acc):
                break
        else:
            raise ExpmConvergenceError(
                f"Taylor series not converged after {max_terms} terms (|h|*||G||={abs(h) * norm1:.3g})"
            )
        out = acc
    return out


def expm_apply(g: FourModeOperator, scale: float, state: FourModeState) -> FourModeState:
    """Normalized ``exp(scale * G) |state>`` on the dense backend.

    The returned ``truncation_error`` adds the probability that lands on the
    top Fock level to the input's error, as an estimate of what the cutoff
    clipped during the evolution.
    """
    _check_dims(g, state)
    if scale == 0:
        return state
    vec = expm_multiply_taylor(g.matrix, state.vector(), scale)
    out = FourModeState.from_vector(vec, state.cutoff)
    err = state.truncation_error + out.boundary_mass()
    return FourModeState(
        out.cutoff, out.occupations, out.amplitudes, truncation_error=err,
        zeta=None, support=None,
    )
