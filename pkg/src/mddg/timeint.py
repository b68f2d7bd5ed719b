"""Implicit multiderivative time integrators.

Two families are provided.  Two-point collocation schemes prescribe k
derivatives at t^n and l at t^{n+1}; their coefficients come from exact
rational differentiation of the Hermite-Birkhoff kernel t^k (t-1)^l / (k+l)!
and reach order k + l.  Multiderivative Runge-Kutta tableaux cover the
sixth-order two-derivative collocation method on abscissae (0, 1/2, 1) and
the classical three-stage Gauss-Legendre method.

For the linear method-of-lines system  dw/dt = A w + b(t)  each implicit
step solves one sparse block system whose unknowns are w at the new time
level together with the auxiliary derivative vectors sigma (= A w + b) and,
for three-derivative schemes, tau (= A sigma + b').  Eliminating the
auxiliaries would reproduce powers of A and enlarge the stencil; the block
form keeps every block as sparse as A itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse
from numpy.polynomial.legendre import leggauss

from mddg.sparse import CsrMatrix, LinearSolver

_STEP_TOL = 1e-12  # relative tolerance for "lands exactly on t_end"


class BlowUpError(RuntimeError):
    """The time integration produced a non-finite state."""


@dataclass(frozen=True)
class TwoPointScheme:
    """Two-point multiderivative scheme of order k + l.

    alpha weights the derivatives at t^n, beta those at t^{n+1} (entering
    with a minus sign); both are exact rationals, padded to length 3.
    """

    order: int
    k: int
    l: int
    alpha: tuple
    beta: tuple
    label: str = ""

    @property
    def n_derivatives(self) -> int:
        return max(self.k, self.l)

    @property
    def alpha_f(self) -> np.ndarray:
        return np.array([float(a) for a in self.alpha])

    @property
    def beta_f(self) -> np.ndarray:
        return np.array([float(b) for b in self.beta])


@dataclass(frozen=True)
class MdrkTableau:
    """Multiderivative Runge-Kutta tableaux a^(m), update weights b^(m).

    ``a[m-1]`` is the s x s tableau of the m-th derivative; exact rational
    copies are kept when the coefficients are rational.
    """

    stages: int
    n_derivatives: int
    c: np.ndarray
    a: tuple
    b: tuple
    label: str = ""
    a_exact: Optional[tuple] = None
    b_exact: Optional[tuple] = None

    def implicit_stages(self):
        """Stage indices with a nonzero tableau row (solved implicitly)."""
        out = []
        for i in range(self.stages):
            if any(np.any(a_m[i] != 0.0) for a_m in self.a):
                out.append(i)
        return out


def _poly_derivative(coeffs):
    return [c * i for i, c in enumerate(coeffs)][1:]


def _poly_eval(coeffs, x):
    return sum(c * x**i for i, c in enumerate(coeffs))


def derive_two_point_coefficients(k: int, l: int) -> TwoPointScheme:
    """Coefficients of the (k, l) two-point scheme by exact differentiation
    of P(t) = t^k (t-1)^l / (k+l)!; alpha_j = P^(k+l-j)(1), beta_j = P^(k+l-j)(0).
    """
    if not (1 <= k <= 3 and 1 <= l <= 3):
        raise ValueError("derivative counts k, l must lie in 1..3")
    m = k + l
    # t^k (t-1)^l expanded: coefficient of t^(k+i) is C(l,i) (-1)^(l-i)
    coeffs = [Fraction(0)] * (m + 1)
    for i in range(l + 1):
        coeffs[k + i] = Fraction(math.comb(l, i) * (-1) ** (l - i), math.factorial(m))
    alpha = []
    beta = []
    d = coeffs
    derivs = [d]
    for _ in range(m):
        d = _poly_derivative(d)
        derivs.append(d)
    for j in range(1, 4):
        if j <= max(k, l):
            pj = derivs[m - j]
            alpha.append(_poly_eval(pj, Fraction(1)))
            beta.append(_poly_eval(pj, Fraction(0)))
        else:
            alpha.append(Fraction(0))
            beta.append(Fraction(0))
    return TwoPointScheme(
        order=m, k=k, l=l, alpha=tuple(alpha), beta=tuple(beta), label=f"tp{m}"
    )


def builtin_two_point_schemes() -> list[TwoPointScheme]:
    """The four two-point schemes of orders 3..6: (k,l) = (1,2), (2,2), (2,3), (3,3)."""
    return [derive_two_point_coefficients(k, l) for k, l in ((1, 2), (2, 2), (2, 3), (3, 3))]


def builtin_mdrk6() -> MdrkTableau:
    """Sixth-order two-derivative collocation tableau on abscissae (0, 1/2, 1).

    The update weights are the last tableau rows: the final abscissa is 1,
    so the method is stiffly accurate and y^{n+1} equals the last stage.
    """
    F = Fraction
    a1 = (
        (F(0), F(0), F(0)),
        (F(101, 480), F(8, 30), F(55, 2400)),
        (F(7, 30), F(16, 30), F(7, 30)),
    )
    a2 = (
        (F(0), F(0), F(0)),
        (F(65, 4800), F(-25, 600), F(-25, 8000)),
        (F(5, 300), F(0), F(-5, 300)),
    )
    to_f = lambda rows: np.array([[float(x) for x in r] for r in rows])
    return MdrkTableau(
        stages=3,
        n_derivatives=2,
        c=np.array([0.0, 0.5, 1.0]),
        a=(to_f(a1), to_f(a2)),
        b=(to_f([a1[2]])[0], to_f([a2[2]])[0]),
        label="mdrk6",
        a_exact=(a1, a2),
        b_exact=(a1[2], a2[2]),
    )


def builtin_gauss_legendre6() -> MdrkTableau:
    """Classical three-stage Gauss-Legendre tableau (order 6, one derivative).

    Abscissae are the Gauss nodes on [0,1]; the tableau solves the
    collocation conditions sum_j a_ij c_j^(q-1) = c_i^q / q for q = 1..3.
    """
    x, w = leggauss(3)
    c = 0.5 * (x + 1.0)
    b = 0.5 * w
    V = np.vander(c, 3, increasing=True)
    a = np.zeros((3, 3))
    for i in range(3):
        rhs = np.array([c[i] ** q / q for q in (1, 2, 3)])
        a[i] = np.linalg.solve(V.T, rhs)
    return MdrkTableau(stages=3, n_derivatives=1, c=c, a=(a,), b=(b,), label="gl6")


def _as_scipy(A: CsrMatrix):
    return A.to_scipy()


class TwoPointWorkspace:
    """Prepared block system for repeated steps of a two-point scheme.

    The auxiliary unknowns are carried as dt*sigma and dt^2*tau, so every
    off-diagonal block is dt*A times an O(1) coefficient; without this
    rescaling the sigma/tau columns outweigh the solution columns by powers
    of ||A|| and starve the Krylov solver.
    """

    def __init__(self, op, scheme: TwoPointScheme, dt: float, solver: LinearSolver):
        self.op = op
        self.scheme = scheme
        self.dt = dt
        n = op.matrix.n_rows
        self.n = n
        nd = scheme.n_derivatives
        A = _as_scipy(op.matrix)
        I = scipy.sparse.identity(n, format="csr")
        Z = dt * A
        be = scheme.beta_f
        if nd == 2:
            blocks = [
                [I + be[0] * Z, be[1] * Z],
                [-Z, I],
            ]
        else:
            blocks = [
                [I + be[0] * Z, be[1] * Z, be[2] * Z],
                [-Z, I, None],
                [None, -Z, I],
            ]
        system = CsrMatrix.from_scipy(
            scipy.sparse.bmat(blocks, format="csr"), block_size=op.matrix.block_size
        )
        self.system = system
        self.prepared = solver.prepare(system)
        self._alpha = scheme.alpha_f
        self._beta = scheme.beta_f

    def step(self, w: np.ndarray, t: float) -> np.ndarray:
        op = self.op
        dt = self.dt
        al, be = self._alpha, self._beta
        nd = self.scheme.n_derivatives
        t1 = t + dt
        A = op.matrix
        bn = op.source_vector(t, 0)
        b1 = op.source_vector(t1, 0)
        sigma_n = A.matvec(w) + bn
        rhs_w = w + dt * al[0] * A.matvec(w) + dt * (al[0] * bn - be[0] * b1)
        bpn = op.source_vector(t, 1)
        bp1 = op.source_vector(t1, 1)
        rhs_w += dt**2 * al[1] * A.matvec(sigma_n) + dt**2 * (al[1] * bpn - be[1] * bp1)
        parts = [rhs_w, dt * b1]
        x0 = [w, dt * sigma_n]
        if nd == 3:
            tau_n = A.matvec(sigma_n) + bpn
            bppn = op.source_vector(t, 2)
            bpp1 = op.source_vector(t1, 2)
            rhs_w += dt**3 * al[2] * A.matvec(tau_n) + dt**3 * (al[2] * bppn - be[2] * bpp1)
            parts = [rhs_w, dt * b1, dt**2 * bp1]
            x0 = [w, dt * sigma_n, dt**2 * tau_n]
        rhs = np.concatenate(parts)
        x, _ = self.prepared.solve(rhs, x0=np.concatenate(x0))
        return x[: self.n]


class MdrkWorkspace:
    """Prepared block system for repeated steps of a multiderivative RK tableau.

    Stage unknowns are ordered stage-major, (y_i, dt*sigma_i) per implicit
    stage; the dt scaling of sigma keeps all blocks at the dt*A scale (see
    TwoPointWorkspace).
    """

    def __init__(self, op, tableau: MdrkTableau, dt: float, solver: LinearSolver):
        self.op = op
        self.tableau = tableau
        self.dt = dt
        n = op.matrix.n_rows
        self.n = n
        self.implicit = tableau.implicit_stages()
        A = _as_scipy(op.matrix)
        I = scipy.sparse.identity(n, format="csr")
        Z = dt * A
        M = tableau.n_derivatives
        a1 = tableau.a[0]
        a2 = tableau.a[1] if M >= 2 else None
        S = self.implicit
        per_stage = 2 if M >= 2 else 1
        nb = len(S) * per_stage
        blocks = [[None] * nb for _ in range(nb)]
        for bi, i in enumerate(S):
            ri = bi * per_stage
            for bj, j in enumerate(S):
                cj = bj * per_stage
                y_blk = (-a1[i, j]) * Z
                if i == j:
                    y_blk = I + y_blk
                blocks[ri][cj] = y_blk
                if M >= 2:
                    blocks[ri][cj + 1] = (-a2[i, j]) * Z if a2[i, j] != 0.0 else None
            if M >= 2:
                blocks[ri + 1][ri] = -Z
                blocks[ri + 1][ri + 1] = I
        system = CsrMatrix.from_scipy(
            scipy.sparse.bmat(blocks, format="csr"), block_size=op.matrix.block_size
        )
        self.system = system
        self.prepared = solver.prepare(system)

    def step(self, w: np.ndarray, t: float) -> np.ndarray:
        op = self.op
        tab = self.tableau
        dt = self.dt
        n = self.n
        M = tab.n_derivatives
        S = self.implicit
        per_stage = 2 if M >= 2 else 1
        A = op.matrix
        c = tab.c
        a1 = tab.a[0]
        a2 = tab.a[1] if M >= 2 else None
        t_i = [t + ci * dt for ci in c]
        b_i = [op.source_vector(ti, 0) for ti in t_i]
        bp_i = [op.source_vector(ti, 1) for ti in t_i] if M >= 2 else None

        explicit = [i for i in range(tab.stages) if i not in S]
        y_stage = [None] * tab.stages
        sig_stage = [None] * tab.stages
        for i in explicit:  # zero tableau row: stage equals the step input
            y_stage[i] = w
            sig_stage[i] = A.matvec(w) + b_i[i]

        rhs = np.zeros(len(S) * per_stage * n)
        x0 = np.zeros_like(rhs)
        for bi, i in enumerate(S):
            r = w.copy()
            for j in range(tab.stages):
                contrib = None
                if j in S:
                    if a1[i, j] != 0.0:
                        r += dt * a1[i, j] * b_i[j]
                    if M >= 2 and a2[i, j] != 0.0:
                        r += dt**2 * a2[i, j] * bp_i[j]
                else:
                    if a1[i, j] != 0.0:
                        r += dt * a1[i, j] * sig_stage[j]
                    if M >= 2 and a2[i, j] != 0.0:
                        r += dt**2 * a2[i, j] * (A.matvec(sig_stage[j]) + bp_i[j])
            base = bi * per_stage * n
            rhs[base : base + n] = r
            x0[base : base + n] = w
            if M >= 2:
                rhs[base + n : base + 2 * n] = dt * b_i[i]
                x0[base + n : base + 2 * n] = dt * (A.matvec(w) + b_i[i])
        x, _ = self.prepared.solve(rhs, x0=x0)
        for bi, i in enumerate(S):
            base = bi * per_stage * n
            y_stage[i] = x[base : base + n]
            if M >= 2:
                sig_stage[i] = x[base + n : base + 2 * n] / dt
            else:
                sig_stage[i] = A.matvec(y_stage[i]) + b_i[i]

        out = w.copy()
        for i in range(tab.stages):
            if tab.b[0][i] != 0.0:
                out = out + dt * tab.b[0][i] * sig_stage[i]
            if M >= 2 and tab.b[1][i] != 0.0:
                out = out + dt**2 * tab.b[1][i] * (A.matvec(sig_stage[i]) + bp_i[i])
        return out


def make_workspace(op, method, dt: float, solver: Optional[LinearSolver] = None):
    solver = solver if solver is not None else LinearSolver()
    if isinstance(method, TwoPointScheme):
        return TwoPointWorkspace(op, method, dt, solver)
    if isinstance(method, MdrkTableau):
        return MdrkWorkspace(op, method, dt, solver)
    raise TypeError(f"unknown method type {type(method)!r}")


def two_point_step(op, scheme: TwoPointScheme, w, t, dt, solver: Optional[LinearSolver] = None):
    """One implicit step of a two-point multiderivative scheme."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return TwoPointWorkspace(op, scheme, dt, solver or LinearSolver()).step(np.asarray(w, float), t)


def mdrk_step(op, tableau: MdrkTableau, w, t, dt, solver: Optional[LinearSolver] = None):
    """One implicit step of a multiderivative Runge-Kutta tableau."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return MdrkWorkspace(op, tableau, dt, solver or LinearSolver()).step(np.asarray(w, float), t)


def integrate(
    op,
    method,
    w0,
    t0: float,
    t_end: float,
    dt: float,
    solver: Optional[LinearSolver] = None,
    stats_out: Optional[list] = None,
):
    """March from t0 to t_end; the final step is shortened to land on t_end.

    The block system is factorized once and reused for every full step; a
    non-finite state aborts with BlowUpError.  Per-step solver statistics
    are appended to ``stats_out`` when given.
    """
    if t_end < t0:
        raise ValueError("t_end must not precede t0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = np.asarray(w0, dtype=float).copy()
    if t_end == t0:
        return w
    solver = solver if solver is not None else LinearSolver()
    span = t_end - t0
    n_full = int(math.floor(span / dt * (1.0 + 1e-14)))
    remainder = span - n_full * dt
    if remainder <= _STEP_TOL * dt:
        remainder = 0.0
    ws = make_workspace(op, method, dt, solver) if n_full else None
    ws_last = None
    try:
        t = t0
        for i in range(n_full):
            w = ws.step(w, t)
            t = t0 + (i + 1) * dt
            if not np.all(np.isfinite(w)):
                raise BlowUpError(f"non-finite state after step {i + 1} (t = {t:.6g})")
        if remainder > 0.0:
            ws_last = make_workspace(op, method, remainder, solver)
            w = ws_last.step(w, t)
            if not np.all(np.isfinite(w)):
                raise BlowUpError(f"non-finite state in final shortened step (t = {t_end:.6g})")
    finally:
        if stats_out is not None:
            if ws is not None:
                stats_out.extend(ws.prepared.history)
            if ws_last is not None:
                stats_out.extend(ws_last.prepared.history)
    return w
