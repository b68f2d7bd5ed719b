"""Sparse kernels and linear solvers.

Storage is compressed-row with rows sorted by column; matrices assembled
from DG operators carry a block size (the per-element mode count) and the
ILU factorization exploits it: fill levels are computed on the block graph
and the numeric phase works on dense blocks.  With block size 1 this is
the ordinary scalar ILU(k).  GMRES is restarted and right-preconditioned,
so reported residuals are true residuals of the original system.  A sparse
direct LU (SuperLU) serves as the fallback when GMRES fails to converge.
"""

from __future__ import annotations

import time
from bisect import insort
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

FALLBACK_MAX_N = 50000  # largest system the automatic direct fallback accepts


class SolverFailure(RuntimeError):
    """Linear solve did not produce a solution within the requested tolerance."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class IluZeroPivot(RuntimeError):
    """A (near-)zero pivot block was encountered during ILU factorization."""


class CsrMatrix:
    """Square or rectangular CSR matrix with deterministic construction.

    ``block_size`` is structural metadata: rows and columns are grouped in
    aligned dense blocks of that size (1 for plain scalar matrices).
    """

    def __init__(self, n_rows, n_cols, indptr, indices, data, block_size=1):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        if block_size < 1 or self.n_rows % block_size or self.n_cols % block_size:
            raise ValueError("block_size must divide the matrix dimensions")
        self.block_size = int(block_size)
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= n_cols):
            raise ValueError("column index out of bounds")
        self._scipy = None

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.data)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape, block_size=1):
        """Build from coordinate triplets; duplicates are summed in a fixed order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        order = np.lexsort((cols, rows))  # stable: insertion order breaks ties
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            new = np.empty(len(rows), dtype=bool)
            new[0] = True
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(shape[0], shape[1], indptr, cols, vals, block_size=block_size)

    @classmethod
    def from_scipy(cls, mat, block_size=1):
        mat = scipy.sparse.csr_matrix(mat)
        mat.sort_indices()
        mat.sum_duplicates()
        return cls(mat.shape[0], mat.shape[1], mat.indptr, mat.indices, mat.data, block_size)

    @classmethod
    def identity(cls, n, block_size=1):
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n), block_size)

    def to_scipy(self):
        if self._scipy is None:
            self._scipy = scipy.sparse.csr_matrix(
                (self.data, self.indices, self.indptr), shape=self.shape
            )
        return self._scipy

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_cols,):
            raise ValueError(f"dimension mismatch: {self.shape} @ {x.shape}")
        return self.to_scipy() @ x

    def toarray(self):
        return self.to_scipy().toarray()


def spmv(A: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Row-wise sparse matrix-vector product with deterministic summation."""
    return A.matvec(x)


def _block_structure(A: CsrMatrix):
    """Block-CSR view (indptr, indices, dense blocks) at A.block_size."""
    b = A.block_size
    bsr = scipy.sparse.bsr_matrix(A.to_scipy(), blocksize=(b, b))
    bsr.sort_indices()
    return bsr.indptr, bsr.indices, np.asarray(bsr.data, dtype=float)


def _symbolic_ilu(indptr, indices, nb, level):
    """Level-of-fill pattern on the block graph.

    Returns per-row sorted column lists of the kept (level <= k) pattern.
    """
    kept_cols = []
    kept_levels = []
    for i in range(nb):
        levels = {int(j): 0 for j in indices[indptr[i] : indptr[i + 1]]}
        levels.setdefault(i, 0)  # structural diagonal, required for the pivot
        cols = sorted(levels)
        pos = 0
        while pos < len(cols) and cols[pos] < i:
            k = cols[pos]
            pos += 1
            lev_ik = levels[k]
            if lev_ik > level:
                continue
            kcols = kept_cols[k]
            klevs = kept_levels[k]
            for j, lev_kj in zip(kcols, klevs):
                if j <= k:
                    continue
                cand = lev_ik + lev_kj + 1
                if j in levels:
                    if cand < levels[j]:
                        levels[j] = cand
                elif cand <= level:
                    levels[j] = cand
                    if j < i:
                        insort(cols, j, lo=pos)
                    else:
                        insort(cols, j)
        kept = [c for c in cols if levels[c] <= level]
        kept_cols.append(kept)
        kept_levels.append([levels[c] for c in kept])
    return kept_cols


def _schedule(deps_cols, order):
    """Group rows into dependency levels for triangular substitution."""
    n = len(deps_cols)
    lvl = np.zeros(n, dtype=np.int64)
    for i in order:
        cs = deps_cols[i]
        if len(cs):
            lvl[i] = 1 + max(lvl[c] for c in cs)
    groups = []
    for v in range(lvl.max() + 1 if n else 0):
        rows = np.flatnonzero(lvl == v)
        groups.append(rows)
    return groups


def _flatten_level(rows, cols_per_row, blocks_per_row):
    """Stack one schedule level's (row, col, block) triples row-contiguously."""
    rows_with = [r for r in rows if len(cols_per_row[r])]
    if not rows_with:
        return None
    cols = np.concatenate([cols_per_row[r] for r in rows_with])
    blocks = np.concatenate([blocks_per_row[r] for r in rows_with], axis=0)
    counts = np.array([len(cols_per_row[r]) for r in rows_with])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.array(rows_with), cols, blocks, starts


class IluFactors:
    """Incomplete LU factors on the level-k fill pattern.

    L has unit (identity-block) diagonal; U holds the pivot blocks.  The
    application M^{-1} v runs level-scheduled forward/backward block
    substitutions.
    """

    def __init__(self, n, block_size, level, l_cols, l_blocks, u_cols, u_blocks, u_diag, u_diag_inv):
        self.n = n
        self.block_size = block_size
        self.level = level
        self._l_cols = l_cols
        self._l_blocks = l_blocks
        self._u_cols = u_cols  # strictly upper columns per row
        self._u_blocks = u_blocks
        self._u_diag = u_diag
        self._u_diag_inv = u_diag_inv
        nb = n // block_size
        fwd_groups = _schedule(l_cols, range(nb))
        bwd_groups = _schedule(u_cols, reversed(range(nb)))
        self._fwd = [(rows, _flatten_level(rows, l_cols, l_blocks)) for rows in fwd_groups]
        self._bwd = [(rows, _flatten_level(rows, u_cols, u_blocks)) for rows in bwd_groups]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Solve L U x = v."""
        b = self.block_size
        nb = self.n // b
        y = np.array(v, dtype=float).reshape(nb, b)
        for rows, flat in self._fwd:
            if flat is None:
                continue
            rws, cols, blocks, starts = flat
            contrib = np.einsum("tij,tj->ti", blocks, y[cols])
            y[rws] -= np.add.reduceat(contrib, starts, axis=0)
        x = np.empty_like(y)
        for rows, flat in self._bwd:
            rhs = y[rows]  # fancy indexing copies
            if flat is not None:
                rws, cols, blocks, starts = flat
                contrib = np.einsum("tij,tj->ti", blocks, x[cols])
                sums = np.add.reduceat(contrib, starts, axis=0)
                rhs[np.searchsorted(rows, rws)] -= sums
            x[rows] = np.einsum("rij,rj->ri", self._u_diag_inv[rows], rhs)
        return x.ravel()

    def _expand(self, cols_per_row, blocks_per_row, diag):
        b = self.block_size
        nb = self.n // b
        rows_o, cols_o, vals_o = [], [], []
        for i in range(nb):
            entries = list(zip(cols_per_row[i], blocks_per_row[i]))
            if diag is not None:
                entries.append((i, diag[i]))
            for j, blk in sorted(entries, key=lambda t: t[0]):
                r, c = np.divmod(np.arange(b * b), b)
                rows_o.append(i * b + r)
                cols_o.append(j * b + c)
                vals_o.append(np.asarray(blk).ravel())
        if not rows_o:
            return CsrMatrix.identity(self.n)
        mat = CsrMatrix.from_coo(
            np.concatenate(rows_o), np.concatenate(cols_o), np.concatenate(vals_o), (self.n, self.n)
        )
        return mat

    @property
    def lower(self) -> CsrMatrix:
        """Unit lower-triangular factor as a scalar CSR matrix."""
        b = self.block_size
        eye = np.broadcast_to(np.eye(b), (self.n // b, b, b))
        L = self._expand(self._l_cols, self._l_blocks, eye).to_scipy()
        L.eliminate_zeros()
        return CsrMatrix.from_scipy(L)

    @property
    def upper(self) -> CsrMatrix:
        """Upper-triangular factor as a scalar CSR matrix."""
        U = self._expand(self._u_cols, self._u_blocks, self._u_diag).to_scipy()
        U.eliminate_zeros()
        return CsrMatrix.from_scipy(U)


def ilu_factor(A: CsrMatrix, level: int) -> IluFactors:
    """Incomplete LU of a square matrix on the level-``level`` fill pattern."""
    if A.n_rows != A.n_cols:
        raise ValueError("ILU requires a square matrix")
    if level < 0:
        raise ValueError("fill level must be non-negative")
    b = A.block_size
    nb = A.n_rows // b
    indptr, indices, data = _block_structure(A)
    pattern = _symbolic_ilu(indptr, indices, nb, level)

    l_cols, l_blocks, u_cols, u_blocks = [], [], [], []
    u_diag = np.zeros((nb, b, b))
    u_diag_inv = np.zeros((nb, b, b))
    u_lookup = []  # per row: dict col -> index into u_blocks[row]
    for i in range(nb):
        row = {}
        stored = indices[indptr[i] : indptr[i + 1]]
        for pos, j in enumerate(stored):
            row[int(j)] = data[indptr[i] + pos].copy()
        for j in pattern[i]:
            if j not in row:
                row[j] = np.zeros((b, b))
        lc, lb = [], []
        for k in pattern[i]:
            if k >= i:
                break
            lik = row[k] @ u_diag_inv[k]
            lc.append(k)
            lb.append(lik)
            ublks_k = u_blocks[k]
            look = u_lookup[k]
            for j in u_cols[k]:
                if j in row:  # updates outside the kept pattern are dropped
                    row[j] -= lik @ ublks_k[look[j]]
        piv = row[i]
        scale = max(np.abs(piv).max(), 1e-300)
        try:
            inv = np.linalg.inv(piv)
        except np.linalg.LinAlgError as exc:
            raise IluZeroPivot(f"singular pivot block in row {i}") from exc
        if not np.all(np.isfinite(inv)) or np.abs(np.linalg.det(piv)) < (1e-14 * scale) ** b:
            raise IluZeroPivot(f"near-zero pivot block in row {i}")
        uc = [j for j in pattern[i] if j > i]
        ub = [row[j] for j in uc]
        l_cols.append(np.array(lc, dtype=np.int64))
        l_blocks.append(np.array(lb).reshape(len(lb), b, b) if lb else np.zeros((0, b, b)))
        u_cols.append(np.array(uc, dtype=np.int64))
        u_blocks.append(np.array(ub).reshape(len(ub), b, b) if ub else np.zeros((0, b, b)))
        u_diag[i] = piv
        u_diag_inv[i] = inv
        u_lookup.append({j: idx for idx, j in enumerate(uc)})
    return IluFactors(A.n_rows, b, level, l_cols, l_blocks, u_cols, u_blocks, u_diag, u_diag_inv)


@dataclass
class SolveStats:
    """Outcome of one linear solve."""

    iterations: int
    residual: float
    converged: bool
    wall_time: float
    fallback_used: bool = False
    residual_history: tuple = ()


def gmres_solve(A, b, precond=None, rtol=1e-10, restart=60, maxit=5000, x0=None):
    """Right-preconditioned restarted GMRES.

    Returns (x, SolveStats).  The reported residual is the true relative
    residual ||b - Ax|| / ||b||; within each restart cycle the Arnoldi
    least-squares residual is non-increasing by construction.
    """
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    t0 = time.perf_counter()
    n = A.n_rows
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros(n) if x0 is None else np.zeros(n)
        return x, SolveStats(0, 0.0, True, time.perf_counter() - t0)
    apply_m = precond.apply if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    history = []
    total = 0
    converged = False
    while True:
        r = b - A.matvec(x)
        beta = np.linalg.norm(r)
        relres = beta / bnorm
        if relres <= rtol:
            converged = True
            break
        if total >= maxit:
            break
        V = np.zeros((restart + 1, n))
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        V[0] = r / beta
        g[0] = beta
        j_used = 0
        breakdown = False
        for j in range(restart):
            if total >= maxit:
                break
            w = A.matvec(apply_m(V[j]))
            total += 1
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            if hnext > 1e-300:
                V[j + 1] = w / hnext
            else:
                breakdown = True
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -sn[i] * hi + cs[i] * hi1
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if abs(g[j + 1]) / bnorm <= rtol or breakdown:
                break
        if j_used:
            y = scipy.linalg.solve_triangular(H[:j_used, :j_used], g[:j_used])
            x = x + apply_m(V[:j_used].T @ y)
        else:
            break
        if breakdown:
            r = b - A.matvec(x)
            relres = np.linalg.norm(r) / bnorm
            converged = relres <= rtol
            break
    stats = SolveStats(
        iterations=total,
        residual=float(relres),
        converged=bool(converged),
        wall_time=time.perf_counter() - t0,
        residual_history=tuple(history),
    )
    return x, stats


def lu_solve_direct(A: CsrMatrix, b: np.ndarray) -> np.ndarray:
    """Sparse direct LU solve (SuperLU with partial pivoting).

    One step of iterative refinement keeps the residual near machine
    precision on ill-conditioned systems.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (A.n_rows,):
        raise ValueError("dimension mismatch in direct solve")
    try:
        lu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(A.to_scipy()))
        x = lu.solve(b)
        x = x + lu.solve(b - A.matvec(x))
    except RuntimeError as exc:  # SuperLU signals singularity this way
        raise SolverFailure(f"direct LU failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverFailure("direct LU produced non-finite solution (singular matrix?)")
    return x


class PreparedSystem:
    """A factorized linear system ready for repeated right-hand sides.

    Once a GMRES solve on this system has fallen back to the direct
    factorization, later solves go direct immediately: non-convergence is a
    property of the matrix, not of the right-hand side.
    """

    def __init__(self, A, solver):
        self.A = A
        self.solver = solver
        self.ilu = None
        self._splu = None
        self._prefer_direct = False
        self.history = []
        if solver.kind == "gmres":
            try:
                self.ilu = ilu_factor(A, solver.ilu_level)
            except IluZeroPivot:
                if not solver.fallback:
                    raise
                self._prefer_direct = True
                self._factorize_direct()
        else:
            self._factorize_direct()

    def _factorize_direct(self):
        if self._splu is None:
            self._splu = scipy.sparse.linalg.splu(scipy.sparse.csc_matrix(self.A.to_scipy()))

    def _solve_direct(self, b, fallback=False):
        t0 = time.perf_counter()
        self._factorize_direct()
        x = self._splu.solve(b)
        x = x + self._splu.solve(b - self.A.matvec(x))  # one refinement pass
        res = np.linalg.norm(b - self.A.matvec(x))
        bnorm = np.linalg.norm(b)
        rel = res / bnorm if bnorm > 0 else 0.0
        stats = SolveStats(
            iterations=1,
            residual=float(rel),
            converged=bool(np.all(np.isfinite(x)) and rel <= max(self.solver.rtol, 1e-10)),
            wall_time=time.perf_counter() - t0,
            fallback_used=fallback,
        )
        return x, stats

    def solve(self, b, x0=None):
        s = self.solver
        if s.kind == "gmres" and self.ilu is not None and not self._prefer_direct:
            x, stats = gmres_solve(
                self.A, b, precond=self.ilu, rtol=s.rtol, restart=s.restart, maxit=s.maxit, x0=x0
            )
            if not stats.converged:
                if s.fallback and self.A.n_rows <= FALLBACK_MAX_N:
                    self._prefer_direct = True
                    x, stats = self._solve_direct(b, fallback=True)
                else:
                    self.history.append(stats)
                    raise SolverFailure(
                        f"GMRES did not converge: residual {stats.residual:.3e} "
                        f"after {stats.iterations} iterations",
                        stats=stats,
                    )
        else:
            x, stats = self._solve_direct(b, fallback=self._prefer_direct and s.kind == "gmres")
            if not stats.converged:
                self.history.append(stats)
                raise SolverFailure("direct solve produced non-finite solution", stats=stats)
        self.history.append(stats)
        return x, stats


@dataclass
class LinearSolver:
    """Solver configuration: restarted GMRES with block ILU(k), or direct LU.

    GMRES defaults follow the solver settings used throughout the
    experiments: relative tolerance 1e-10 with an ILU(2) preconditioner.
    On non-convergence the solve falls back to the direct factorization
    for systems up to FALLBACK_MAX_N unknowns.
    """

    kind: str = "gmres"
    rtol: float = 1e-10
    restart: int = 60
    maxit: int = 5000
    ilu_level: int = 2
    fallback: bool = True

    def __post_init__(self):
        if self.kind not in ("gmres", "direct"):
            raise ValueError(f"unknown solver kind {self.kind!r}")

    def prepare(self, A: CsrMatrix) -> PreparedSystem:
        return PreparedSystem(A, self)
