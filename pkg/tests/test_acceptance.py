"""Acceptance suite: one test per criterion, verdicts printed in the terminal summary."""

import json
import math

import numpy as np
import pytest

from crossdiff.amap import invert_A_batch
from crossdiff.cli import main
from crossdiff.diagnostics import duality_check, duality_sum, ledger_to_ndjson
from crossdiff.grid import Field, Mesh, dissipation, gradient_floor, integrate, neumann_laplacian
from crossdiff.model import entropy_reaction_bound, eval_A, eval_entropy, power_model
from crossdiff.stepper import TimeGrid, prepare_initial, run, step
from crossdiff.structure import (
    build_entropy,
    certify,
    check_pairwise,
    check_uniform_entropy,
    detailed_balance,
    find_detailed_balance,
)

from conftest import bumps, corpus, record, skt

T_BENCH, N_BENCH, N_NODES = 0.5, 200, 128
TOL, EPS = 1e-10, 10 * 1e-10 * N_NODES


def benchmark(reaction, N=N_BENCH):
    model = skt(reaction)
    mesh = Mesh.interval(N_NODES)
    spec = build_entropy(model)
    return run(model, mesh, TimeGrid(T_BENCH, N), bumps(mesh), entropy=spec)


@pytest.fixture(scope="module")
def conservative():
    return benchmark(False)


@pytest.fixture(scope="module")
def logistic():
    return benchmark(True)


def entropy_series(traj):
    mesh, spec = traj.mesh, traj.entropy
    H = [float(integrate(mesh, eval_entropy(spec, traj.states[k].T))) for k in range(traj.time.N + 1)]
    D = [None] + [dissipation(mesh, traj.model, spec, traj.states[k]) for k in range(1, traj.time.N + 1)]
    F = [None] + [gradient_floor(mesh, spec, traj.states[k]) for k in range(1, traj.time.N + 1)]
    return H, D, F


def test_01_mass_identity(conservative):
    mesh = conservative.mesh
    m0 = integrate(mesh, conservative.states[0])
    drift = max(float(np.max(np.abs(integrate(mesh, conservative.states[k]) - m0))) for k in conservative.states)
    ok = record(1, "mass identity", drift <= 1e-10, f"max |int U^k - int U^0| = {drift:.2e} (<= 1e-10)")
    assert ok


def test_02_entropy_step(conservative, logistic):
    worst = []
    for traj in (logistic, conservative):
        H, D, _ = entropy_series(traj)
        tau, C = traj.time.tau, traj.C
        slack = [C * tau * (1 + H[k]) + EPS - (H[k] - H[k - 1] + tau * D[k]) for k in range(1, traj.time.N + 1)]
        worst.append(min(slack))
    C_log = entropy_reaction_bound(logistic.model, logistic.entropy)
    # with R = 0 the bound collapses to H^k + tau D^k <= H^{k-1} + eps
    H0, _, _ = entropy_series(conservative)
    nonincreasing = all(H0[k] <= H0[k - 1] + EPS for k in range(1, len(H0)))
    ok = record(2, "discrete entropy inequality", min(worst) >= 0 and nonincreasing and conservative.C == 0,
                f"min slack logistic {worst[0]:.3e}, R=0 {worst[1]:.3e}; C = {C_log:.4f}; "
                f"R=0 nonincreasing: {nonincreasing}")
    assert ok


def test_03_summed_bound(conservative, logistic):
    margins, floors = [], []
    for traj in (logistic, conservative):
        H, D, F = entropy_series(traj)
        tau, C, T = traj.time.tau, traj.C, traj.time.T
        bound = (1 + math.exp(2 * C * T)) * (C * T + H[0])
        acc = 0.0
        for k in range(1, traj.time.N + 1):
            acc += tau * D[k]
            margins.append(bound + TOL - (H[k] + acc))
            floors.append(D[k] - F[k])
    ok = record(3, "summed entropy-dissipation bound", min(margins) >= 0 and min(floors) >= -1e-10,
                f"min bound margin {min(margins):.3e}, min dissipation - floor {min(floors):.3e} (>= -1e-10)")
    assert ok


def test_04_duality(conservative, logistic):
    ratios = [duality_check(t).ratio for t in (conservative, logistic)]
    fine = benchmark(False, 2 * N_BENCH)
    a, _ = duality_sum(conservative)
    b, _ = duality_sum(fine)
    change = abs(b - a) / a
    ok = record(4, "duality estimate", max(ratios) <= 1.05 and change <= 0.2,
                f"ratio R=0 {ratios[0]:.5f}, logistic {ratios[1]:.5f} (<= 1.05); "
                f"duality sum change N->2N {change:.2e} (<= 0.2)")
    assert ok


def test_05_inversion():
    models = corpus()
    errs, strata_ok = {}, True
    rng = np.random.default_rng(2024)
    for name, model in models.items():
        X = rng.uniform(0, 10, size=(1000, model.species))
        Xr, _ = invert_A_batch(model, eval_A(model, X))
        errs[name] = float(np.max(np.abs(Xr - X)))
        W = eval_A(model, X)
        W[rng.random(W.shape) < 0.3] = 0.0
        Xs, _ = invert_A_batch(model, W)
        strata_ok &= bool(np.array_equal(Xs > 0, W > 0))
    assert models["mixed"].pressure.exponents.tolist() == [2.0, 0.5]
    assert models["four"].species == 4 and detailed_balance(models["four"].pressure.interaction).holds
    worst = max(errs.values())
    ok = record(5, "A-inversion", worst <= 1e-9 and strata_ok,
                f"worst round trip {worst:.2e} over {len(models)} models (<= 1e-9); strata preserved: {strata_ok}")
    assert ok


def test_06_structure():
    checks = {}
    sym = power_model([1, 1, 1], [[1, 2, 3], [2, 1, 4], [3, 4, 1]], [1, 1, 1])
    cert = certify(sym)
    checks["a"] = cert.certified and np.array_equal(cert.detailed_balance.pi, np.ones(3))
    checks["b"] = np.array_equal(find_detailed_balance([[0, 2], [1, 0]]), [1.0, 2.0])
    db = detailed_balance([[0, 1, 1], [2, 0, 1], [1, 2, 0]])
    checks["c"] = (not db.holds) and sorted(db.violated_cycle) == [0, 1, 2]
    pw = check_pairwise(power_model([1, 1], [[0, 1], [1, 0]], [2, 2]))
    checks["d"] = (not pw.holds) and pw.witness_point is not None and pw.witness_block_det < 0
    margins = []
    regime = [corpus()["four"], corpus()["skt"], power_model([1, 2], [[1, 2], [1, 0.5]], [2, 0.5])]
    for model in regime:
        assert check_pairwise(model).holds and detailed_balance(model.pressure.interaction).holds
        v = check_uniform_entropy(model, build_entropy(model), samples=10_000, seed=0)
        margins.append(v.min_margin)
    checks["e"] = min(margins) >= -1e-10
    ok = record(6, "structure certification", all(checks.values()),
                ", ".join(f"({k}) {'ok' if v else 'FAIL'}" for k, v in checks.items())
                + f"; min uniform margin {min(margins):.3e}")
    assert ok


def _explicit_pme(u0, T, steps):
    """Forward Euler for u_t = (u + u^2)_xx, cell-centred, reflecting boundaries."""
    n = u0.size
    h = 1.0 / n
    dt = T / steps
    u = u0.copy()
    for _ in range(steps):
        w = u + u * u
        wp = np.concatenate([w[:1], w, w[-1:]])
        u = u + dt / h**2 * (wp[2:] - 2 * w + wp[:-2])
    return u


def test_07_scalar_oracles():
    n_ref, n = 512, 128
    x_ref = (np.arange(n_ref) + 0.5) / n_ref
    u_ref = _explicit_pme(0.2 + 0.2 * np.cos(np.pi * x_ref), 0.1, 100_000)
    mesh = Mesh.interval(n)
    x = mesh.coordinates[:, 0]
    model = power_model([1], [[1]], [1])
    traj = run(model, mesh, TimeGrid(0.1, 400), Field((0.2 + 0.2 * np.cos(np.pi * x))[None, :], mesh))
    ref = u_ref.reshape(n, -1).mean(axis=1)
    rel_l1 = float(np.sum(np.abs(traj.final()[0] - ref)) / np.sum(np.abs(ref)))

    heat = power_model([1], [[0]], [1])
    hmesh = Mesh.interval(64)
    L = neumann_laplacian(hmesh)
    tau = 1e-3
    dense = np.eye(64) - tau * L.matrix.toarray()
    hx = hmesh.coordinates[:, 0]
    u = prepare_initial(Field((1 + np.exp(-((hx - 0.4) / 0.1) ** 2))[None, :], hmesh), 50).values
    heat_err = 0.0
    for _ in range(50):
        nxt = step(heat, hmesh, L, u, tau).U_k.values
        heat_err = max(heat_err, float(np.max(np.abs(nxt[0] - np.linalg.solve(dense, u[0])))))
        u = nxt
    ok = record(7, "scalar oracle equivalence", rel_l1 <= 0.01 and heat_err <= 1e-10,
                f"porous-medium rel. L1 {rel_l1:.2e} (<= 1e-2); heat per-step max diff {heat_err:.2e} (<= 1e-10)")
    assert ok


def _converge(tmp_path, initial, name):
    cfg = {
        "model": {"pressure": {"d": [1, 1], "m": [[1, 1], [1, 1]], "s": [1, 1]}},
        "mesh": {"n": [N_NODES]},
        "time": {"T": T_BENCH, "N": 100},
        "initial": initial,
        "samples": 2000,
    }
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    assert main(["converge", "--config", str(path), "--levels", "5", "--out", str(out)]) == 0
    return json.loads((out / "converge.json").read_text())["rows"]


def test_08_self_convergence(tmp_path):
    rows = _converge(tmp_path, {"type": "gaussian-bumps", "background": [0.5, 0.5], "centers": [[0.3], [0.7]],
                                "widths": [[0.1], [0.1]], "amplitudes": [[1.0], [1.0]]}, "bench")
    orders = [r["order"] for r in rows[-2:]]
    eq = _converge(tmp_path, {"type": "constant", "values": [1.0, 2.0]}, "equilibrium")
    zero = all(r["l1_diff"] == 0.0 for r in eq)
    ok = record(8, "self-convergence in tau", all(0.8 <= o <= 1.2 for o in orders) and zero,
                f"last orders {', '.join(f'{o:.3f}' for o in orders)} (in [0.8, 1.2]); equilibrium diffs zero: {zero}")
    assert ok


def test_09_equilibrium():
    model = power_model([1, 1], [[1, 1], [1, 1]], [1, 1], rho=[1, 1], c=np.eye(2), alpha=0.5)
    mesh = Mesh.interval(64)
    traj = run(model, mesh, TimeGrid(1.0, 100), Field(np.ones((2, 64)), mesh))
    drift = max(float(np.max(np.abs(traj.states[k] - 1.0))) for k in traj.states)
    ok = record(9, "equilibrium fixed point", drift <= 1e-9, f"max drift over 100 steps {drift:.2e} (<= 1e-9)")
    assert ok


def test_10_determinism(tmp_path):
    cfg = {
        "model": {"pressure": {"d": [1, 1], "m": [[1, 1], [1, 1]], "s": [1, 1]},
                  "reaction": {"rho": [1, 1], "c": [[1, 0], [0, 1]], "alpha": [[0.5, 0.5], [0.5, 0.5]]}},
        "mesh": {"n": [N_NODES]},
        "time": {"T": T_BENCH, "N": N_BENCH},
        "initial": {"type": "gaussian-bumps", "background": [0.5, 0.5], "centers": [[0.3], [0.7]],
                    "widths": [[0.1], [0.1]], "amplitudes": [[1.0], [1.0]]},
        "output": {"snapshot_stride": 50},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / name)]) == 0
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("ledger.ndjson", "summary.json"))
    again = benchmark(True)
    lib_same = ledger_to_ndjson(again.ledger) == ledger_to_ndjson(benchmark(True).ledger)
    ok = record(10, "determinism", same and lib_same,
                f"CLI ledger and summary byte-identical: {same}; library ledgers identical: {lib_same}")
    assert ok
