"""Upwind / interior-penalty DG semi-discretization of the convection-diffusion
equation on a periodic triangulation.

With the per-element orthonormal basis the mass matrix is the identity, so
the method of lines reads  dw/dt = A w + b(t)  where A is the assembled
sparse operator and b projects the source.  The first and second time
derivatives of the solution are carried as auxiliary coefficient vectors:
sigma = A w + b  and  tau = A sigma + b'.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mddg.basis import BasisSet, edge_rule, triangle_rule
from mddg.mesh import TriangularMesh
from mddg.sparse import CsrMatrix

ASSEMBLY_DEGREE_MARGIN = 2  # cell/edge quadrature degree 2p + 2
ERROR_DEGREE_MARGIN = 4  # error quadrature degree 2p + 4


@dataclass
class Problem:
    """Constant-velocity linear convection-diffusion problem on [0,1]^2.

    ``source`` and its analytic time derivatives take (x, y, t) arrays;
    ``exact``, when available, is the reference solution used for error
    measurement.  Time derivatives may be omitted for sources that are
    constant in time.
    """

    velocity: np.ndarray
    epsilon: float
    initial: Callable
    source: Optional[Callable] = None
    source_t: Optional[Callable] = None
    source_tt: Optional[Callable] = None
    exact: Optional[Callable] = None
    t_end: float = 1.0
    name: str = ""

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.epsilon < 0:
            raise ValueError("diffusion coefficient must be non-negative")

    def source_term(self, derivative: int) -> Optional[Callable]:
        if derivative == 0:
            return self.source
        if derivative == 1:
            return self.source_t
        if derivative == 2:
            return self.source_tt
        raise ValueError("source derivative must be 0, 1 or 2")


def upwind_trace(c, n, w_minus: float, w_plus: float) -> float:
    """Upwind edge value: the minus-side trace unless the flow crosses
    against the normal.  At c.n = 0 the minus side is returned; the flux
    contribution carries a factor c.n and vanishes there anyway."""
    cn = float(np.dot(c, n))
    return w_minus if cn >= 0.0 else w_plus


class DgOperator:
    """Assembled DG operator: sparse matrix plus source projections."""

    def __init__(self, mesh, basis, problem, eta, matrix, cell_points, cell_scaled_w, cell_basis):
        self.mesh = mesh
        self.basis = basis
        self.problem = problem
        self.eta = eta
        self.matrix = matrix
        # cached cell quadrature data for source projections:
        # physical points (ne, nq, 2), weights*sqrt(detJ) (ne, nq), basis values (nq, nm)
        self._cell_points = cell_points
        self._cell_scaled_w = cell_scaled_w
        self._cell_basis = cell_basis

    @property
    def n_dof(self) -> int:
        return self.matrix.n_rows

    def source_vector(self, t: float, derivative: int = 0) -> np.ndarray:
        """Modal projection of the source (or its 1st/2nd time derivative)."""
        g = self.problem.source_term(derivative)
        if g is None:
            return np.zeros(self.n_dof)
        x = self._cell_points[..., 0]
        y = self._cell_points[..., 1]
        vals = np.asarray(g(x, y, t), dtype=float)
        return np.einsum("kq,qi->ki", vals * self._cell_scaled_w, self._cell_basis).ravel()

    def compute_sigma(self, w: np.ndarray, t: float) -> np.ndarray:
        """First time derivative of the modal solution: A w + b(t)."""
        return self.matrix.matvec(w) + self.source_vector(t, 0)

    def compute_tau(self, sigma: np.ndarray, t: float) -> np.ndarray:
        """Second time derivative from sigma: A sigma + b'(t)."""
        return self.matrix.matvec(sigma) + self.source_vector(t, 1)


def source_vector(op: DgOperator, t: float, derivative: int = 0) -> np.ndarray:
    return op.source_vector(t, derivative)


def compute_sigma(op: DgOperator, w: np.ndarray, t: float) -> np.ndarray:
    return op.compute_sigma(w, t)


def compute_tau(op: DgOperator, sigma: np.ndarray, t: float) -> np.ndarray:
    return op.compute_tau(sigma, t)


def _cell_geometry(mesh, basis, degree):
    rule = triangle_rule(degree)
    origins, J, detJ = mesh.jacobians()
    pts = origins[:, None, :] + np.einsum("kab,qb->kqa", J, rule.points)
    sqrtJ = np.sqrt(detJ)
    scaled_w = rule.weights[None, :] * sqrtJ[:, None]
    values = basis.eval(rule.points)
    return rule, pts, scaled_w, values, J, detJ


def _edge_ref_coords(points, origin, J):
    """Map physical points into an element's reference coordinates."""
    inv = np.linalg.inv(J)
    return (points - origin) @ inv.T


def assemble(mesh: TriangularMesh, basis: BasisSet, problem: Problem, eta: float) -> DgOperator:
    """Assemble the sparse method-of-lines operator.

    Cell terms integrate (c w - eps grad w) . grad(test); edge terms apply
    the upwind convective flux and, for eps > 0, the symmetric interior
    penalty treatment of diffusion with penalty eta / h_e.
    """
    if eta <= 0:
        raise ValueError("penalty parameter eta must be positive")
    eps = problem.epsilon
    if eps > 0 and basis.p == 0:
        raise ValueError("interior-penalty diffusion requires polynomial degree p >= 1")
    c = problem.velocity
    nm = basis.n_modes
    ne = mesh.n_elements

    degree = 2 * basis.p + ASSEMBLY_DEGREE_MARGIN
    cell_rule, cell_pts, cell_scaled_w, cell_vals, J, detJ = _cell_geometry(mesh, basis, degree)
    origins = mesh.vertices[mesh.triangles[:, 0]]
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    sqrtJ = np.sqrt(detJ)

    grads_ref = basis.grad(cell_rule.points)  # (nq, nm, 2)
    w_q = cell_rule.weights

    rows, cols, vals = [], [], []
    mode_idx = np.arange(nm)
    row_grid, col_grid = np.meshgrid(mode_idx, mode_idx, indexing="ij")

    def add_block(kr, kc, block):
        rows.append((kr * nm + row_grid).ravel())
        cols.append((kc * nm + col_grid).ravel())
        vals.append(block.ravel())

    # cell terms: + (c phi_j, grad phi_i) - eps (grad phi_j, grad phi_i)
    for k in range(ne):
        gphys = grads_ref @ Jinv_T[k].T  # (nq, nm, 2) physical gradients (unscaled)
        conv = np.einsum("q,qia,a,qj->ij", w_q, gphys, c, cell_vals)
        block = conv
        if eps > 0:
            block = block - eps * np.einsum("q,qia,qja->ij", w_q, gphys, gphys)
        add_block(k, k, block)

    erule = edge_rule(degree)
    for edge in mesh.edges:
        kl, kr = edge.left, edge.right
        n = edge.normal
        h = edge.length
        xq = edge.v0[None, :] + erule.points[:, None] * (edge.v1 - edge.v0)[None, :]
        sides = []
        for k, pts in ((kl, xq), (kr, xq - edge.offset[None, :])):
            ref = _edge_ref_coords(pts, origins[k], J[k])
            v = basis.eval(ref) / sqrtJ[k]
            gn = (basis.grad(ref) @ Jinv_T[k].T @ n) / sqrtJ[k]
            sides.append((v, gn))
        (vl, gl), (vr, gr) = sides
        wq = erule.weights * h
        cn = float(c @ n)
        sign = (1.0, -1.0)  # jump factor for (left, right)
        trace = (vl, vr)
        gtrace = (gl, gr)
        up = 0 if cn >= 0.0 else 1  # upwind side index
        for si in (0, 1):  # test side
            for sj in (0, 1):  # trial side
                block = np.zeros((nm, nm))
                # convective upwind flux: -(c.n) w_up (phi- - phi+)
                if sj == up and cn != 0.0:
                    block -= cn * np.einsum("q,qi,qj->ij", wq, sign[si] * trace[si], trace[sj])
                if eps > 0:
                    # consistency: + eps ({grad w}.n) (phi- - phi+)
                    block += 0.5 * eps * np.einsum(
                        "q,qi,qj->ij", wq, sign[si] * trace[si], gtrace[sj]
                    )
                    # penalty: - eps (eta/h) [w][phi]
                    block -= (eps * eta / h) * np.einsum(
                        "q,qi,qj->ij", wq, sign[si] * trace[si], sign[sj] * trace[sj]
                    )
                    # symmetry: + eps [w] ({grad phi}.n)
                    block += 0.5 * eps * np.einsum(
                        "q,qi,qj->ij", wq, gtrace[si], sign[sj] * trace[sj]
                    )
                kt = (kl, kr)[si]
                ks = (kl, kr)[sj]
                add_block(kt, ks, block)

    matrix = CsrMatrix.from_coo(
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(vals),
        shape=(ne * nm, ne * nm),
        block_size=nm,
    )
    return DgOperator(mesh, basis, problem, eta, matrix, cell_pts, cell_scaled_w, cell_vals)


def project_l2(mesh: TriangularMesh, basis: BasisSet, f: Callable) -> np.ndarray:
    """Element-wise modal L2 projection of f(x, y)."""
    degree = 2 * basis.p + ASSEMBLY_DEGREE_MARGIN
    _, pts, scaled_w, values, _, _ = _cell_geometry(mesh, basis, degree)
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    return np.einsum("kq,qi->ki", vals * scaled_w, values).ravel()


def l2_error(mesh: TriangularMesh, basis: BasisSet, w: np.ndarray, exact: Callable, t: float) -> float:
    """Global L2 distance between the modal solution and a reference field."""
    degree = 2 * basis.p + ERROR_DEGREE_MARGIN
    rule = triangle_rule(degree)
    origins, J, detJ = mesh.jacobians()
    pts = origins[:, None, :] + np.einsum("kab,qb->kqa", J, rule.points)
    values = basis.eval(rule.points)  # (nq, nm)
    coeffs = w.reshape(mesh.n_elements, basis.n_modes)
    wh = (coeffs @ values.T) / np.sqrt(detJ)[:, None]  # (ne, nq)
    diff = wh - np.asarray(exact(pts[..., 0], pts[..., 1], t), dtype=float)
    per_elem = (diff**2 * rule.weights[None, :]).sum(axis=1) * detJ
    return float(np.sqrt(per_elem.sum()))


def evaluate_solution(mesh: TriangularMesh, basis: BasisSet, w: np.ndarray, elem: int, ref_pts) -> np.ndarray:
    """Evaluate the modal solution inside one element at reference points."""
    _, J, detJ = mesh.jacobians()
    values = basis.eval(np.atleast_2d(ref_pts))
    coeffs = w.reshape(mesh.n_elements, basis.n_modes)[elem]
    return values @ coeffs / np.sqrt(detJ[elem])


def dump_operator(op: DgOperator, path) -> None:
    """Coordinate-format text dump: `row col value`, 17 significant digits."""
    A = op.matrix
    with open(path, "w") as fh:
        for i in range(A.n_rows):
            for p in range(A.indptr[i], A.indptr[i + 1]):
                fh.write(f"{i} {A.indices[p]} {A.data[p]:.17g}\n")
