import numpy as np
import pytest
import scipy.linalg

from mddg.basis import make_basis
from mddg.mesh import Edge, build_base_mesh, refine_uniform
from mddg.operator import (
    Problem,
    assemble,
    dump_operator,
    evaluate_solution,
    l2_error,
    project_l2,
    upwind_trace,
)
from mddg.harness import problem_convection, problem_convection_diffusion


@pytest.fixture(scope="module")
def meshes():
    out = [build_base_mesh()]
    for _ in range(3):
        out.append(refine_uniform(out[-1]))
    return out


class TestUpwindTrace:
    def test_inflow_from_minus(self):
        assert upwind_trace((1.0, 1.0), (1.0, 0.0), 2.0, 5.0) == 2.0

    def test_inflow_from_plus(self):
        assert upwind_trace((1.0, 1.0), (-1.0, 0.0), 2.0, 5.0) == 5.0

    def test_continuous_trace(self):
        for n in ((1.0, 0.0), (-1.0, 0.0), (0.0, -1.0)):
            assert upwind_trace((1.0, 1.0), n, 3.0, 3.0) == 3.0

    def test_tangential_flow_takes_minus(self):
        assert upwind_trace((1.0, 0.0), (0.0, 1.0), 2.0, 5.0) == 2.0


class TestAssemble:
    def test_constants_are_steady_states(self, meshes):
        prob = problem_convection()
        for p in (0, 1, 2):
            basis = make_basis(p)
            op = assemble(meshes[1], basis, prob, eta=20.0)
            const = project_l2(meshes[1], basis, lambda x, y: np.ones_like(x))
            assert np.max(np.abs(op.matrix.matvec(const))) < 1e-12

    def test_coercivity_sampled(self, meshes):
        prob = problem_convection_diffusion()
        basis = make_basis(1)
        op = assemble(meshes[0], basis, prob, eta=20.0)
        rng = np.random.default_rng(21)
        worst = -np.inf
        for _ in range(100):
            v = rng.normal(size=op.n_dof)
            worst = max(worst, (v @ op.matrix.matvec(v)) / (v @ v))
        assert worst < 0.0

    def test_rejects_bad_eta(self, meshes):
        with pytest.raises(ValueError):
            assemble(meshes[0], make_basis(1), problem_convection(), eta=0.0)

    def test_rejects_p0_diffusion(self, meshes):
        with pytest.raises(ValueError):
            assemble(meshes[0], make_basis(0), problem_convection_diffusion(), eta=20.0)

    def test_pure_convection_allows_p0(self, meshes):
        op = assemble(meshes[1], make_basis(0), problem_convection(), eta=20.0)
        assert op.n_dof == meshes[1].n_elements

    def test_consistency_with_gradient(self, meshes):
        # A applied to the projection of a smooth field approximates -c.grad w
        prob = problem_convection()
        p = 2
        basis = make_basis(p)
        errs = []
        for mesh in meshes[1:]:
            op = assemble(mesh, basis, prob, eta=20.0)
            w = project_l2(mesh, basis, lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
            lhs = op.matrix.matvec(w)
            rhs = project_l2(
                mesh,
                basis,
                lambda x, y: -2 * np.pi * (
                    np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
                    + np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
                ),
            )
            errs.append(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
        rate = np.log2(errs[-2] / errs[-1])
        assert rate > p - 0.5  # O(h^p) consistency

    def test_linearity(self, meshes):
        prob = problem_convection_diffusion()
        op = assemble(meshes[1], make_basis(2), prob, eta=20.0)
        rng = np.random.default_rng(22)
        w1 = rng.normal(size=op.n_dof)
        w2 = rng.normal(size=op.n_dof)
        lhs = op.matrix.matvec(1.5 * w1 - 2.5 * w2)
        rhs = 1.5 * op.matrix.matvec(w1) - 2.5 * op.matrix.matvec(w2)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_stencil_compactness(self, meshes):
        # block graph of A equals the mesh edge-adjacency graph
        mesh = meshes[2]
        basis = make_basis(1)
        op = assemble(mesh, basis, problem_convection_diffusion(), eta=20.0)
        nm = basis.n_modes
        adj = {k: {k} for k in range(mesh.n_elements)}
        for e in mesh.edges:
            adj[e.left].add(e.right)
            adj[e.right].add(e.left)
        A = op.matrix
        for k in range(mesh.n_elements):
            cols = set()
            for row in range(k * nm, (k + 1) * nm):
                cols.update(int(c) // nm for c in A.indices[A.indptr[row] : A.indptr[row + 1]])
            assert cols <= adj[k]

    @staticmethod
    def _flip(e, translate):
        shift = e.offset if translate else 0.0
        return Edge(
            v0=e.v0 - shift,
            v1=e.v1 - shift,
            length=e.length,
            normal=-e.normal,
            left=e.right,
            left_side=e.right_side,
            right=e.left,
            right_side=e.left_side,
            offset=-e.offset,
        )

    def test_orientation_independence_interior_bitwise(self, meshes):
        # flipping interior edge normals together with the -/+ side labels
        # leaves the assembled matrix bit-for-bit unchanged
        import dataclasses

        mesh = meshes[1]
        flipped_edges = tuple(
            self._flip(e, translate=False) if np.all(e.offset == 0.0) else e
            for e in mesh.edges
        )
        flipped = dataclasses.replace(mesh, edges=flipped_edges)
        for prob in (problem_convection(), problem_convection_diffusion()):
            basis = make_basis(2)
            a = assemble(mesh, basis, prob, eta=20.0).matrix
            b = assemble(flipped, basis, prob, eta=20.0).matrix
            assert np.array_equal(a.indptr, b.indptr)
            assert np.array_equal(a.indices, b.indices)
            assert np.array_equal(a.data, b.data)

    def test_orientation_independence_periodic(self, meshes):
        # periodic edges must carry their trace to the far frame when
        # flipped; the operator is unchanged up to roundoff
        import dataclasses

        mesh = meshes[1]
        flipped_edges = tuple(self._flip(e, translate=True) for e in mesh.edges)
        flipped = dataclasses.replace(mesh, edges=flipped_edges)
        for prob in (problem_convection(), problem_convection_diffusion()):
            basis = make_basis(2)
            a = assemble(mesh, basis, prob, eta=20.0).matrix
            b = assemble(flipped, basis, prob, eta=20.0).matrix
            assert np.array_equal(a.indices, b.indices)
            scale = np.max(np.abs(a.data))
            assert np.max(np.abs(a.data - b.data)) < 1e-12 * scale

    def test_conservation(self, meshes):
        # total of the constant modes is conserved: 1^T M^(1/2) A w = 0
        mesh = meshes[1]
        for prob in (problem_convection(), problem_convection_diffusion()):
            for p in (1, 2):
                basis = make_basis(p)
                op = assemble(mesh, basis, prob, eta=20.0)
                weights = np.zeros(op.n_dof)
                weights[:: basis.n_modes] = np.sqrt(mesh.element_areas)
                rng = np.random.default_rng(23)
                for _ in range(5):
                    w = rng.normal(size=op.n_dof)
                    assert abs(weights @ op.matrix.matvec(w)) < 1e-12 * np.linalg.norm(w)

    def test_determinism(self, meshes):
        prob = problem_convection_diffusion()
        a = assemble(meshes[1], make_basis(2), prob, eta=20.0).matrix
        b = assemble(meshes[1], make_basis(2), prob, eta=20.0).matrix
        assert np.array_equal(a.data, b.data)


class TestSourceVector:
    def test_zero_source(self, meshes):
        op = assemble(meshes[1], make_basis(2), problem_convection(), eta=20.0)
        assert np.array_equal(op.source_vector(0.3, 0), np.zeros(op.n_dof))
        assert np.array_equal(op.source_vector(0.3, 2), np.zeros(op.n_dof))

    def test_constant_source_hits_constant_mode(self, meshes):
        mesh = meshes[1]
        basis = make_basis(2)
        prob = Problem(
            velocity=np.array([1.0, 1.0]),
            epsilon=0.0,
            initial=lambda x, y: np.zeros_like(x),
            source=lambda x, y, t: np.ones_like(x),
        )
        op = assemble(mesh, basis, prob, eta=20.0)
        b = op.source_vector(0.0, 0).reshape(mesh.n_elements, basis.n_modes)
        assert np.max(np.abs(b[:, 1:])) < 1e-12
        assert np.allclose(b[:, 0], np.sqrt(mesh.element_areas), atol=1e-13)

    def test_manufactured_source_projection(self, meshes):
        # projected source reconstructs the pointwise manufactured g
        mesh = meshes[2]
        basis = make_basis(3)
        prob = problem_convection_diffusion()
        op = assemble(mesh, basis, prob, eta=20.0)
        b = op.source_vector(0.0, 0)
        rng = np.random.default_rng(24)
        lam = rng.dirichlet([2, 2, 2], size=20)
        ref = np.column_stack([lam[:, 1], lam[:, 2]])
        origins, J, _ = mesh.jacobians()
        for k in (0, 7, 20):
            recon = evaluate_solution(mesh, basis, b, k, ref)
            phys = origins[k] + ref @ J[k].T
            exact = prob.source(phys[:, 0], phys[:, 1], 0.0)
            assert np.max(np.abs(recon - exact)) < 6e-2  # projection error at p=3

    def test_invalid_derivative(self, meshes):
        op = assemble(meshes[0], make_basis(1), problem_convection(), eta=20.0)
        with pytest.raises(ValueError):
            op.source_vector(0.0, 3)


class TestSigmaTau:
    def test_steady_state_gives_zero_sigma(self, meshes):
        op = assemble(meshes[1], make_basis(1), problem_convection(), eta=20.0)
        const = project_l2(meshes[1], make_basis(1), lambda x, y: np.ones_like(x))
        assert np.max(np.abs(op.compute_sigma(const, 0.0))) < 1e-12

    def test_sigma_is_matvec_without_source(self, meshes):
        op = assemble(meshes[1], make_basis(2), problem_convection(), eta=20.0)
        w = np.random.default_rng(25).normal(size=op.n_dof)
        assert np.array_equal(op.compute_sigma(w, 0.2), op.matrix.matvec(w))

    def test_tau_is_a_squared(self, meshes):
        op = assemble(meshes[0], make_basis(1), problem_convection(), eta=20.0)
        A = op.matrix.toarray()
        w = np.random.default_rng(26).normal(size=op.n_dof)
        tau = op.compute_tau(op.compute_sigma(w, 0.0), 0.0)
        assert np.max(np.abs(tau - A @ A @ w)) < 1e-12

    def test_sigma_matches_exact_trajectory(self, meshes):
        # sigma equals the time derivative of the exactly integrated system
        op = assemble(meshes[0], make_basis(1), problem_convection(), eta=20.0)
        A = op.matrix.toarray()
        w0 = np.random.default_rng(27).normal(size=op.n_dof)
        sigma = op.compute_sigma(w0, 0.0)
        for delta in (1e-4, 5e-5):
            wp = scipy.linalg.expm(delta * A) @ w0
            wm = scipy.linalg.expm(-delta * A) @ w0
            fd = (wp - wm) / (2 * delta)
            assert np.max(np.abs(sigma - fd)) < 10 * delta**2 * np.linalg.norm(A @ A @ A @ w0)

    def test_tau_matches_second_difference(self, meshes):
        op = assemble(meshes[0], make_basis(1), problem_convection(), eta=20.0)
        A = op.matrix.toarray()
        w0 = np.random.default_rng(28).normal(size=op.n_dof)
        tau = op.compute_tau(op.compute_sigma(w0, 0.0), 0.0)
        delta = 1e-4
        wp = scipy.linalg.expm(delta * A) @ w0
        wm = scipy.linalg.expm(-delta * A) @ w0
        fd = (wp - 2 * w0 + wm) / delta**2
        assert np.max(np.abs(tau - fd)) < 1e-4


class TestProjectionAndError:
    def test_zero_function(self, meshes):
        w = project_l2(meshes[1], make_basis(2), lambda x, y: np.zeros_like(x))
        assert np.array_equal(w, np.zeros_like(w))

    def test_reproduces_polynomials(self, meshes):
        rng = np.random.default_rng(29)
        for p in (1, 3):
            basis = make_basis(p)
            coeffs = rng.normal(size=(p + 1, p + 1))

            def poly(x, y):
                return sum(
                    coeffs[m, n] * x**m * y**n
                    for m in range(p + 1)
                    for n in range(p + 1 - m)
                )

            w = project_l2(meshes[2], basis, poly)
            err = l2_error(meshes[2], basis, w, lambda x, y, t: poly(x, y), 0.0)
            assert err < 1e-12

    def test_projection_order(self, meshes):
        p = 2
        basis = make_basis(p)
        f = lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
        errs = [
            l2_error(m, basis, project_l2(m, basis, f), lambda x, y, t: f(x, y), 0.0)
            for m in meshes[1:]
        ]
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert abs(rates[-1] - (p + 1)) < 0.2

    def test_error_of_shifted_constant(self, meshes):
        basis = make_basis(1)
        exact = lambda x, y, t: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
        w = project_l2(meshes[2], basis, lambda x, y: exact(x, y, 0.0) + 1.0)
        err = l2_error(meshes[2], basis, w, exact, 0.0)
        assert abs(err - 1.0) < 1e-2  # unit offset on a unit-area domain

    def test_projection_error_rate_p3(self, meshes):
        basis = make_basis(3)
        f = lambda x, y: np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
        errs = [
            l2_error(m, basis, project_l2(m, basis, f), lambda x, y, t: f(x, y), 0.0)
            for m in meshes
        ]
        ratio = errs[-2] / errs[-1]
        assert abs(ratio - 16.0) < 0.15 * 16.0


class TestProblemDefinitions:
    def test_convection_exact_periodic_return(self):
        prob = problem_convection()
        rng = np.random.default_rng(30)
        x, y = rng.random(50), rng.random(50)
        assert np.max(np.abs(prob.exact(x, y, 1.0) - prob.initial(x, y))) < 1e-12

    def test_convection_peak_value(self):
        prob = problem_convection()
        assert abs(prob.exact(0.25, 0.25, 0.0) - 1.0) < 1e-15

    def test_convection_no_source(self):
        prob = problem_convection()
        assert prob.source is None and prob.source_t is None and prob.source_tt is None

    def test_manufactured_source_value(self):
        prob = problem_convection_diffusion()
        expected = 0.8 * np.pi**2 - 1.0
        assert abs(prob.source(0.25, 0.25, 0.0) - expected) < 1e-12

    def test_manufactured_residual_vanishes(self):
        # u_t + div(c u - eps grad u) - g = 0 via finite differences
        prob = problem_convection_diffusion()
        rng = np.random.default_rng(31)
        x, y, t = rng.random(100), rng.random(100), rng.random(100)
        h = 1e-5
        u = prob.exact
        u_t = (u(x, y, t + h) - u(x, y, t - h)) / (2 * h)
        u_x = (u(x + h, y, t) - u(x - h, y, t)) / (2 * h)
        u_y = (u(x, y + h, t) - u(x, y - h, t)) / (2 * h)
        u_xx = (u(x + h, y, t) - 2 * u(x, y, t) + u(x - h, y, t)) / h**2
        u_yy = (u(x, y + h, t) - 2 * u(x, y, t) + u(x, y - h, t)) / h**2
        residual = u_t + u_x + u_y - prob.epsilon * (u_xx + u_yy) - prob.source(x, y, t)
        assert np.max(np.abs(residual)) < 1e-5

    def test_source_time_derivatives_match_fd(self):
        prob = problem_convection_diffusion()
        rng = np.random.default_rng(32)
        x, y, t = rng.random(60), rng.random(60), rng.random(60)
        h = 1e-6
        fd1 = (prob.source(x, y, t + h) - prob.source(x, y, t - h)) / (2 * h)
        rel1 = np.max(np.abs(prob.source_t(x, y, t) - fd1)) / np.max(np.abs(fd1))
        assert rel1 < 1e-6
        fd2 = (prob.source_t(x, y, t + h) - prob.source_t(x, y, t - h)) / (2 * h)
        rel2 = np.max(np.abs(prob.source_tt(x, y, t) - fd2)) / np.max(np.abs(fd2))
        assert rel2 < 1e-6

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            Problem(velocity=np.array([1.0, 0.0]), epsilon=-0.1, initial=lambda x, y: x)


def test_dump_operator_format(tmp_path, meshes):
    op = assemble(meshes[0], make_basis(0), problem_convection(), eta=20.0)
    path = tmp_path / "op.txt"
    dump_operator(op, path)
    lines = path.read_text().splitlines()
    assert len(lines) == op.matrix.nnz
    row, col, val = lines[0].split()
    assert int(row) == 0
    float(val)
