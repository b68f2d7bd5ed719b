"""Stability functions and A-stability certificates.

Every scheme here has a rational stability function R(z).  For two-point
schemes R is read off the coefficients directly (with exact rational
entries); for multiderivative Runge-Kutta tableaux it is obtained from the
determinant identity R = det(M + 1 w^T) / det(M) with M = I - z a1 - z^2 a2
and w = z b1 + z^2 b2.  A-stability is certified by dense sampling of |R|
on the imaginary axis and a left-half-plane lattice, a pole-location check,
and the z -> -infinity limit by degree comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from mddg.timeint import MdrkTableau, TwoPointScheme

A_STABILITY_TOL = 1e-12

# Fixed, documented sampling grids: imaginary axis |y| in [1e-3, 1e6]
# (both signs, log-spaced) and the lattice Re z in -[1e-3, 1e4] times
# Im z in {0} u +-[1e-3, 1e6].
IMAG_AXIS_POINTS = 250
LATTICE_RE_POINTS = 60
LATTICE_IM_POINTS = 60


@dataclass(frozen=True)
class RationalFunction:
    """Real-coefficient rational function, coefficients ascending in z.

    The denominator is normalized to constant term 1.  Coefficients are
    Fractions when constructed exactly, floats otherwise.
    """

    num: tuple
    den: tuple

    def __post_init__(self):
        if self.den[0] != 1:
            raise ValueError("denominator must be normalized to constant term 1")

    @property
    def num_f(self) -> np.ndarray:
        return np.array([float(c) for c in self.num])

    @property
    def den_f(self) -> np.ndarray:
        return np.array([float(c) for c in self.den])

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return np.polyval(self.num_f[::-1], z) / np.polyval(self.den_f[::-1], z)

    def limit_at_minus_inf(self) -> float:
        """|R(-inf)| by degree comparison of numerator and denominator."""
        dn = len(self.num) - 1
        dd = len(self.den) - 1
        if dn < dd:
            return 0.0
        if dn > dd:
            return float("inf")
        return abs(float(self.num[-1]) / float(self.den[-1]))

    def poles(self) -> np.ndarray:
        return np.roots(self.den_f[::-1])

    def taylor(self, n: int) -> list:
        """First n+1 Taylor coefficients of R at z = 0 (exact when the
        stored coefficients are exact)."""
        out = []
        for k in range(n + 1):
            s = self.num[k] if k < len(self.num) else 0 * self.num[0]
            for j in range(1, min(k, len(self.den) - 1) + 1):
                s = s - self.den[j] * out[k - j]
            out.append(s)
        return out


def _trim(coeffs, tol=0.0):
    out = list(coeffs)
    while len(out) > 1 and abs(out[-1]) <= tol:
        out.pop()
    return tuple(out)


def stability_function_two_point(scheme: TwoPointScheme) -> RationalFunction:
    """R(z) = (1 + a1 z + a2 z^2 + a3 z^3) / (1 + b1 z + b2 z^2 + b3 z^3)."""
    num = _trim((Fraction(1),) + tuple(scheme.alpha))
    den = _trim((Fraction(1),) + tuple(scheme.beta))
    return RationalFunction(num=num, den=den)


def stability_function_mdrk(tableau: MdrkTableau, z):
    """Evaluate R(z) for a multiderivative RK tableau via the stage solve.

    Accepts scalars or arrays of z; a singular stage matrix at a sample
    point yields NaN there (reported by the scan, point skipped).
    """
    z = np.asarray(z, dtype=complex)
    shape = z.shape
    zf = z.ravel()
    s = tableau.stages
    a1 = tableau.a[0]
    a2 = tableau.a[1] if tableau.n_derivatives >= 2 else np.zeros_like(a1)
    b1 = tableau.b[0]
    b2 = tableau.b[1] if tableau.n_derivatives >= 2 else np.zeros(s)
    M = (
        np.eye(s)[None, :, :]
        - zf[:, None, None] * a1[None, :, :]
        - (zf**2)[:, None, None] * a2[None, :, :]
    )
    ones = np.ones(s)
    out = np.empty(len(zf), dtype=complex)
    ok = np.abs(np.linalg.det(M)) > 0
    out[~ok] = np.nan
    if np.any(ok):
        rhs = np.broadcast_to(ones, (int(ok.sum()), s))[..., None]
        y = np.linalg.solve(M[ok], rhs)[..., 0]
        w = zf[ok, None] * b1[None, :] + (zf[ok] ** 2)[:, None] * b2[None, :]
        out[ok] = 1.0 + np.einsum("ts,ts->t", w, y)
    return out.reshape(shape) if shape else complex(out[0])


def _poly_mul(p, q):
    out = [Fraction(0)] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def _poly_add(p, q, sign=1):
    n = max(len(p), len(q))
    out = [Fraction(0)] * n
    for i, a in enumerate(p):
        out[i] += a
    for i, b in enumerate(q):
        out[i] += sign * b
    return out


def _det3(M):
    def minor(a, b, c, d):
        return _poly_add(_poly_mul(a, d), _poly_mul(b, c), sign=-1)

    t1 = _poly_mul(M[0][0], minor(M[1][1], M[1][2], M[2][1], M[2][2]))
    t2 = _poly_mul(M[0][1], minor(M[1][0], M[1][2], M[2][0], M[2][2]))
    t3 = _poly_mul(M[0][2], minor(M[1][0], M[1][1], M[2][0], M[2][1]))
    return _poly_add(_poly_add(t1, t2, sign=-1), t3)


def rational_function_mdrk(tableau: MdrkTableau) -> RationalFunction:
    """Rational stability function of a 3-stage tableau.

    Uses R = det(M + 1 w^T) / det(M) with polynomial determinants.  Exact
    rational tableau entries (available for the collocation tableau) give
    exact coefficients; otherwise the arithmetic is floating point and
    trailing near-zero coefficients are trimmed before degree comparison.
    """
    if tableau.stages != 3:
        raise ValueError("rational form implemented for 3-stage tableaux")
    exact = tableau.a_exact is not None
    zero3 = tuple((Fraction(0),) * 3 for _ in range(3))
    if exact:
        a1 = tableau.a_exact[0]
        a2 = tableau.a_exact[1] if tableau.n_derivatives >= 2 else zero3
        b1 = tableau.b_exact[0]
        b2 = tableau.b_exact[1] if tableau.n_derivatives >= 2 else (Fraction(0),) * 3
        conv, one = Fraction, Fraction(1)
    else:
        a1 = tableau.a[0]
        a2 = tableau.a[1] if tableau.n_derivatives >= 2 else np.zeros((3, 3))
        b1 = tableau.b[0]
        b2 = tableau.b[1] if tableau.n_derivatives >= 2 else np.zeros(3)
        conv, one = float, 1.0
    M = [
        [[one if i == j else conv(0), -conv(a1[i][j]), -conv(a2[i][j])] for j in range(3)]
        for i in range(3)
    ]
    den = _det3(M)
    Mn = [
        [_poly_add(M[i][j], [conv(0), conv(b1[j]), conv(b2[j])]) for j in range(3)]
        for i in range(3)
    ]
    num = _det3(Mn)
    if exact:
        num, den = _trim(num), _trim(den)
    else:
        scale = max(abs(float(c)) for c in list(num) + list(den))
        num = _trim([float(c) for c in num], tol=1e-9 * scale)
        den = _trim([float(c) for c in den], tol=1e-9 * scale)
    return RationalFunction(num=tuple(num), den=tuple(den))


@dataclass(frozen=True)
class StabilityReport:
    """Sampled A-stability certificate for one scheme."""

    method: str
    max_abs_imag_axis: float
    max_abs_left_half: float
    limit_at_minus_inf: float
    a_stable: bool
    min_pole_real_part: float

    CSV_HEADER = "method,max_abs_R_imag_axis,max_abs_R_left_half,limit_at_minus_inf,a_stable"

    def csv_row(self) -> str:
        return (
            f"{self.method},{self.max_abs_imag_axis:.17g},{self.max_abs_left_half:.17g},"
            f"{self.limit_at_minus_inf:.17g},{'true' if self.a_stable else 'false'}"
        )


def _scan_grids():
    ys = np.logspace(-3, 6, IMAG_AXIS_POINTS)
    imag_axis = np.concatenate([1j * ys, -1j * ys])
    res = -np.logspace(-3, 4, LATTICE_RE_POINTS)
    ims = np.logspace(-3, 6, LATTICE_IM_POINTS)
    ims = np.concatenate([[0.0], ims, -ims])
    lattice = (res[:, None] + 1j * ims[None, :]).ravel()
    return imag_axis, lattice


def a_stability_scan(method) -> StabilityReport:
    """Sample |R| on the imaginary axis and a left-half-plane lattice.

    The a_stable flag holds exactly when both sampled maxima stay within
    1 + 1e-12.  The z -> -infinity limit comes from degree comparison of
    the rational form; poles are located from the denominator roots.
    """
    if isinstance(method, TwoPointScheme):
        rat = stability_function_two_point(method)
        label = method.label or f"tp{method.order}"
    elif isinstance(method, MdrkTableau):
        rat = rational_function_mdrk(method)
        label = method.label or "mdrk"
    else:
        raise TypeError(f"unknown method type {type(method)!r}")
    imag_axis, lattice = _scan_grids()
    vals_imag = np.abs(rat(imag_axis))
    vals_lhp = np.abs(rat(lattice))
    max_imag = float(np.nanmax(vals_imag))
    max_lhp = float(np.nanmax(vals_lhp))
    poles = rat.poles()
    return StabilityReport(
        method=label,
        max_abs_imag_axis=max_imag,
        max_abs_left_half=max_lhp,
        limit_at_minus_inf=rat.limit_at_minus_inf(),
        a_stable=bool(max_imag <= 1.0 + A_STABILITY_TOL and max_lhp <= 1.0 + A_STABILITY_TOL),
        min_pole_real_part=float(np.min(poles.real)) if len(poles) else float("inf"),
    )
