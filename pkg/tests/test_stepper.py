import numpy as np
import pytest

from crossdiff.errors import DiagnosticViolation, DomainError, StepError
from crossdiff.grid import Field, Mesh, integrate, neumann_laplacian
from crossdiff.model import eval_reaction, power_model
from crossdiff.stepper import SolverSettings, TimeGrid, prepare_initial, run, step

from conftest import bumps, skt

HEAT = power_model([1], [[0]], [1])


class TestTimeGrid:
    def test_tau(self):
        assert TimeGrid(0.5, 200).tau == 0.0025

    def test_rejects(self):
        with pytest.raises(DomainError):
            TimeGrid(0.0, 10)
        with pytest.raises(DomainError):
            TimeGrid(1.0, 0)

    def test_check_message(self):
        with pytest.raises(DomainError, match=r"reduce τ below 0\.25"):
            TimeGrid(1.0, 2).check(rho=2.0)
        TimeGrid(1.0, 5).check(rho=2.0)

    def test_check_entropy_constant(self):
        with pytest.raises(DomainError, match="C"):
            TimeGrid(1.0, 10).check(rho=1.0, C=6.0)


class TestPrepareInitial:
    def test_unchanged_above_floor(self):
        mesh = Mesh.interval(16)
        U = bumps(mesh)
        np.testing.assert_array_equal(prepare_initial(U, 10).values, U.values)

    def test_zero_data(self):
        mesh = Mesh.interval(32)
        U0 = prepare_initial(Field(np.zeros((2, 32)), mesh), 100)
        np.testing.assert_allclose(U0.values, 0.01)
        np.testing.assert_allclose(integrate(mesh, U0.values), [0.01, 0.01])

    def test_mass_monotone_under_refinement(self):
        mesh = Mesh.interval(64)
        x = mesh.coordinates[:, 0]
        U = Field(np.where(x < 0.5, 0.0, 2.0 * x)[None, :], mesh)
        masses = [integrate(mesh, prepare_initial(U, N).values)[0] for N in (5, 10, 20, 40)]
        assert all(b <= a for a, b in zip(masses, masses[1:]))

    def test_rescaled_keeps_floor(self):
        mesh = Mesh.interval(64)
        x = mesh.coordinates[:, 0]
        U = Field(np.where(x < 0.5, 0.0, 1.0)[None, :], mesh)
        U0 = prepare_initial(U, 10)
        assert U0.values.min() >= 0.1
        assert integrate(mesh, U0.values)[0] == pytest.approx(0.5)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            prepare_initial(Field(-np.ones((1, 8)), Mesh.interval(8)), 4)


class TestStep:
    def test_equilibrium(self):
        model = power_model([1, 1], [[1, 1], [1, 1]], [1, 1], rho=[1, 1], c=np.eye(2), alpha=0.5)
        mesh = Mesh.interval(32)
        U = np.ones((2, 32))
        res = step(model, mesh, neumann_laplacian(mesh), U, 0.01)
        np.testing.assert_allclose(res.U_k.values, 1.0, atol=1e-10)

    def test_mass_identity(self, skt_model, mesh128):
        L = neumann_laplacian(mesh128)
        U = bumps(mesh128)
        res = step(skt_model, mesh128, L, U, 0.0025)
        np.testing.assert_allclose(integrate(mesh128, res.U_k.values), integrate(mesh128, U.values),
                                   rtol=0, atol=1e-12)

    def test_mass_identity_with_reaction(self, mesh128):
        model = skt(reaction=True)
        L = neumann_laplacian(mesh128)
        U = bumps(mesh128)
        tau = 0.0025
        res = step(model, mesh128, L, U, tau)
        Uk = res.U_k.values
        gain = tau * integrate(mesh128, eval_reaction(model, Uk.T).T)
        np.testing.assert_allclose(integrate(mesh128, Uk) - integrate(mesh128, U.values), gain, atol=1e-12)

    def test_heat_matches_dense(self):
        mesh = Mesh.interval(64)
        L = neumann_laplacian(mesh)
        tau = 1e-3
        u = 1.5 + np.cos(np.pi * mesh.coordinates[:, 0]) * mesh.coordinates[:, 0]
        dense = np.linalg.solve(np.eye(64) - tau * L.matrix.toarray(), u)
        res = step(HEAT, mesh, L, u[None, :], tau)
        assert np.max(np.abs(res.U_k.values[0] - dense)) <= 1e-10

    def test_positivity_required(self):
        mesh = Mesh.interval(8)
        with pytest.raises(DomainError):
            step(HEAT, mesh, neumann_laplacian(mesh), np.zeros((1, 8)), 0.1)

    def test_failure_reported(self, skt_model, mesh128):
        settings = SolverSettings(max_newton=1, max_picard=1)
        with pytest.raises(StepError) as err:
            step(skt_model, mesh128, neumann_laplacian(mesh128), bumps(mesh128), 0.1, settings)
        assert err.value.residual > 0

    def test_picard_fallback(self):
        mesh = Mesh.interval(32)
        L = neumann_laplacian(mesh)
        U = bumps(mesh)
        settings = SolverSettings(max_newton=1)
        res = step(skt(), mesh, L, U, 0.0025, settings)
        ref = step(skt(), mesh, L, U, 0.0025)
        assert res.picard_iters > 0
        np.testing.assert_allclose(res.U_k.values, ref.U_k.values, atol=1e-8)


class TestRun:
    def test_single_step(self, skt_model):
        mesh = Mesh.interval(32)
        U = bumps(mesh)
        traj = run(skt_model, mesh, TimeGrid(0.01, 1), U)
        res = step(skt_model, mesh, neumann_laplacian(mesh), prepare_initial(U, 1), 0.01)
        np.testing.assert_array_equal(traj.final(), res.U_k.values)

    def test_decoupled_heat_decay(self):
        mesh = Mesh.interval(64)
        model = power_model([1, 1], np.zeros((2, 2)), [1, 1])
        x = mesh.coordinates[:, 0]
        U = Field(np.stack([2 + np.cos(np.pi * x), 3 + 0.5 * np.cos(np.pi * x)]), mesh)
        T = 1.0
        traj = run(model, mesh, TimeGrid(T, 1000), U)
        h = mesh.h[0]
        lam1 = 2 / h**2 * (1 - np.cos(np.pi * h))
        mean = U.values.mean(axis=1, keepdims=True)
        ratio = np.max(np.abs(traj.final() - mean), axis=1) / np.max(np.abs(U.values - mean), axis=1)
        np.testing.assert_allclose(ratio, np.exp(-lam1 * T), rtol=0.1)

    def test_skt_ledger_passes(self, skt_model, mesh128):
        traj = run(skt_model, mesh128, TimeGrid(0.25, 100), bumps(mesh128))
        assert len(traj.ledger) == 100
        for row in traj.ledger:
            assert all(v is not False for v in row["flags"].values()), row
        assert traj.summary["passed"]

    def test_stride(self, skt_model):
        mesh = Mesh.interval(32)
        traj = run(skt_model, mesh, TimeGrid(0.1, 10), bumps(mesh), snapshot_stride=4)
        assert sorted(traj.states) == [0, 4, 8, 10]
        assert traj.summary["duality"].startswith("skipped")

    def test_sinks(self, skt_model):
        mesh = Mesh.interval(16)

        class Sink:
            def __init__(self):
                self.rows, self.snaps = [], []

            def ledger_row(self, row):
                self.rows.append(row["k"])

            def snapshot(self, k, t, field):
                self.snaps.append(k)

        sink = Sink()
        run(skt_model, mesh, TimeGrid(0.1, 6), bumps(mesh), sinks=(sink,), snapshot_stride=3)
        assert sink.rows == [1, 2, 3, 4, 5, 6]
        assert sink.snaps == [0, 3, 6]

    def test_rho_tau_enforced(self):
        mesh = Mesh.interval(16)
        with pytest.raises(DomainError, match="reduce"):
            run(skt(reaction=True), mesh, TimeGrid(1.0, 1), bumps(mesh))

    def test_strict_aborts(self, skt_model):
        mesh = Mesh.interval(16)
        from crossdiff.structure import build_entropy

        # a deliberately negative C makes the entropy-step bound unattainable
        with pytest.raises(DiagnosticViolation) as err:
            run(skt_model, mesh, TimeGrid(0.1, 5), bumps(mesh), entropy=build_entropy(skt_model), C=-1e3,
                strict=True)
        assert err.value.k == 1
