"""A priori estimates of the scheme, evaluated on discrete trajectories.

Quantities use the implicit levels k = 1..N as the time-discrete integrand,
i.e. the step-in-time function that equals U^k on ((k-1) tau, k tau].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DiagnosticViolation, InsufficientDataError
from .grid import dissipation, gradient_floor, hminus1_norm, integrate
from .model import eval_A, eval_entropy, eval_pressure, eval_reaction

__all__ = [
    "LedgerBuilder",
    "DualityReport",
    "duality_check",
    "duality_sum",
    "duality_sum_refinement",
    "M_of_R",
    "equiintegrability_profile",
    "mass_bound_check",
    "initial_data_report",
    "recompute_ledger",
    "summarize",
    "ledger_to_ndjson",
]

TOL_DUALITY = 0.05
MASS_RTOL = 1e-10
FLOOR_TOL = 1e-10
MU_GUARD = 1e-300
HARD_FLAGS = ("positivity", "mass_bound", "entropy_step", "entropy_summed")


def _sum_fields(model, U):
    """v = sum_i u_i and sum_i A_i(U) at every node."""
    A = eval_A(model, U.T)
    return U.sum(axis=0), A.sum(axis=1)


class LedgerBuilder:
    """Incremental per-step ledger; rows are pure functions of the states fed in."""

    def __init__(self, model, mesh, L, time, U0, entropy=None, C=0.0, tol=1e-10):
        self.model, self.mesh, self.L, self.time = model, mesh, L, time
        self.entropy = entropy
        self.C = float(C)
        self.tau = time.tau
        self.eps = 10.0 * tol * mesh.size
        self.mass0 = integrate(mesh, U0)
        self.prev_mass = self.mass0
        self.growth = 2.0 ** (2.0 * model.reaction.rho_max * time.tau * time.N)
        self.duality = 0.0
        self.diss_sum = 0.0
        if entropy is not None:
            self.H0 = float(integrate(mesh, eval_entropy(entropy, U0.T)))
            CT = self.C * time.T
            self.summed_bound = (1.0 + math.exp(2.0 * CT)) * (CT + self.H0)
        else:
            self.H0 = None
        self.prev_H = self.H0

    def row(self, k, U, newton_iters):
        model, mesh, tau = self.model, self.mesh, self.tau
        mass = integrate(mesh, U)
        R = eval_reaction(model, U.T).T
        mass_defect = float(np.max(np.abs(mass - self.prev_mass - tau * integrate(mesh, R))))
        self.prev_mass = mass
        v, sumA = _sum_fields(model, U)
        self.duality += tau * float(integrate(mesh, v * sumA))
        min_u = float(U.min())
        flags = {
            "positivity": min_u > 0,
            "mass_bound": bool(np.all(mass <= self.growth * self.mass0 * (1.0 + MASS_RTOL))),
        }
        H = D = None
        if self.entropy is not None and min_u > 0:
            H = float(integrate(mesh, eval_entropy(self.entropy, U.T)))
            D = dissipation(mesh, model, self.entropy, U)
            floor = gradient_floor(mesh, self.entropy, U)
            lhs = H - self.prev_H + tau * D
            flags["entropy_step"] = bool(lhs <= self.C * tau * (1.0 + H) + self.eps)
            self.diss_sum += tau * D
            flags["entropy_summed"] = bool(H + self.diss_sum <= self.summed_bound + self.eps)
            flags["dissipation_floor"] = bool(D >= floor - FLOOR_TOL)
            self.prev_H = H
        return {
            "k": int(k),
            "t": float(k * tau),
            "mass": [float(m) for m in mass],
            "entropy": H,
            "dissipation": None if D is None else float(tau * D),
            "duality_sum": float(self.duality),
            "min_u": min_u,
            "max_R_inf": float(np.max(np.abs(R))),
            "newton_iters": int(newton_iters),
            "mass_defect": mass_defect,
            "flags": flags,
        }

    @staticmethod
    def enforce(row):
        failed = [name for name in HARD_FLAGS if row["flags"].get(name) is False]
        if failed:
            raise DiagnosticViolation(
                f"step {row['k']}: estimate(s) violated: {', '.join(failed)}", k=row["k"], flags=row["flags"]
            )


def recompute_ledger(traj):
    """Rebuild the ledger from stored states (requires stride-1 storage)."""
    if not traj.complete:
        raise InsufficientDataError("ledger recomputation needs every time level")
    b = LedgerBuilder(traj.model, traj.mesh, traj.L, traj.time, traj.states[0], traj.entropy, traj.C,
                      traj.settings.tol)
    return [b.row(k, traj.states[k], traj.newton_iters[k]) for k in range(1, traj.time.N + 1)]


def ledger_to_ndjson(rows):
    return "".join(json.dumps(r, allow_nan=True) + "\n" for r in rows)


# ---------------------------------------------------------------------------
# duality
# ---------------------------------------------------------------------------


def _simplex_lattice(n, budget=20_000):
    """Points of the unit simplex on the finest lattice with at most ``budget`` points."""
    if n == 1:
        return np.ones((1, 1))
    K = 1
    while math.comb(K + 1 + n - 1, n - 1) <= budget:
        K += 1
    # stars and bars: n-1 bar positions among K+n-1 slots
    bars = np.array(list(combinations(range(K + n - 1), n - 1)))
    edges = np.concatenate([np.full((len(bars), 1), -1), bars, np.full((len(bars), 1), K + n - 1)], axis=1)
    pts = np.diff(edges, axis=1) - 1
    return np.array(pts, dtype=float) / K


def M_of_R(model, R):
    """sup of sum_i p_i(X) x_i / sum_i x_i over sum_i x_i <= R.

    Pressures are nondecreasing in every coordinate, so the supremum lies on
    sum_i x_i = R; it is evaluated on a simplex lattice.
    """
    X = R * _simplex_lattice(model.species)
    return float(np.max(np.sum(eval_pressure(model, X) * X, axis=1) / R))


@dataclass
class DualityReport:
    lhs: float
    rhs_lemma: float
    ratio: float
    passed: bool
    int_mu: float
    hminus1_v0: float
    mean_v0: float
    mu_min: float
    mu_floor_ok: bool
    M_of_R: dict = field(default_factory=dict)
    bootstrap: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def _require_complete(traj):
    if not traj.complete:
        raise InsufficientDataError("duality diagnostics need snapshots at every step (stride 1)")


def duality_check(traj, tol=TOL_DUALITY, radii=(1, 2, 4, 8, 16, 32, 64), bootstrap_R=8):
    """Discrete form of the L2(Q_T) duality estimate for v = sum_i u_i."""
    _require_complete(traj)
    model, mesh, tau, T = traj.model, traj.mesh, traj.time.tau, traj.time.T
    lhs = int_mu = 0.0
    mu_min = np.inf
    for k in range(1, traj.time.N + 1):
        v, sumA = _sum_fields(model, traj.states[k])
        mu = sumA / np.maximum(v, MU_GUARD)
        mu_min = min(mu_min, float(mu.min()))
        lhs += tau * float(integrate(mesh, mu * v * v))
        int_mu += tau * float(integrate(mesh, mu))
    v0 = traj.states[0].sum(axis=0)
    mean_v0 = float(integrate(mesh, v0)) / mesh.volume
    hm1 = hminus1_norm(mesh, traj.L, v0)
    rho = model.reaction.rho_max
    rhs = math.exp(2.0 * rho * T) * (hm1**2 + mean_v0**2 * int_mu)
    ratio = lhs / rhs if rhs > 0 else float("inf")
    table = {str(R): M_of_R(model, float(R)) for R in radii}
    volume_QT = T * mesh.volume
    boot_rhs = lhs / bootstrap_R**2 + M_of_R(model, float(bootstrap_R)) * volume_QT
    return DualityReport(
        lhs=lhs,
        rhs_lemma=rhs,
        ratio=ratio,
        passed=bool(ratio <= 1.0 + tol),
        int_mu=int_mu,
        hminus1_v0=hm1,
        mean_v0=mean_v0,
        mu_min=mu_min,
        mu_floor_ok=bool(mu_min >= model.alpha * (1.0 - 1e-12)),
        M_of_R=table,
        bootstrap={"R": bootstrap_R, "int_mu": int_mu, "bound": boot_rhs, "passed": bool(int_mu <= boot_rhs)},
    )


def duality_sum(traj):
    """sum_k tau int (sum_i u_i^k)(sum_i A_i(U^k)) over k = 1..N, and whether it is nondecreasing."""
    _require_complete(traj)
    mesh, tau = traj.mesh, traj.time.tau
    total, running = 0.0, []
    for k in range(1, traj.time.N + 1):
        v, sumA = _sum_fields(traj.model, traj.states[k])
        term = tau * float(integrate(mesh, v * sumA))
        total += term
        running.append(total)
    monotone = all(b >= a for a, b in zip(running, running[1:]))
    return total, monotone


def duality_sum_refinement(coarse, fine, rtol=0.2):
    """Relative change of the duality sum between runs with N and 2N steps."""
    a, _ = duality_sum(coarse)
    b, _ = duality_sum(fine)
    change = abs(b - a) / max(abs(a), 1e-300)
    return {"coarse": a, "fine": b, "relative_change": change, "passed": bool(change <= rtol)}


# ---------------------------------------------------------------------------
# equi-integrability and mass
# ---------------------------------------------------------------------------


def equiintegrability_profile(traj, thresholds=(0.25, 0.5, 1, 2, 4, 8, 16, 32, 64)):
    """Tails int ||A(U)|| 1{||U|| > R} and int ||R(U)|| 1{||U|| > R} in the max norm."""
    _require_complete(traj)
    model, mesh, tau = traj.model, traj.mesh, traj.time.tau
    thresholds = sorted(float(r) for r in thresholds)
    tail_A = np.zeros(len(thresholds))
    tail_R = np.zeros(len(thresholds))
    for k in range(1, traj.time.N + 1):
        X = traj.states[k].T
        unorm = np.max(np.abs(X), axis=1)
        anorm = np.max(np.abs(eval_A(model, X)), axis=1)
        rnorm = np.max(np.abs(eval_reaction(model, X)), axis=1)
        for j, R in enumerate(thresholds):
            mask = unorm > R
            tail_A[j] += tau * float(integrate(mesh, anorm * mask))
            tail_R[j] += tau * float(integrate(mesh, rnorm * mask))
    dsum, _ = duality_sum(traj)
    rows = [
        {"R": R, "tail_A": float(a), "tail_R": float(r), "duality_bound": dsum / R}
        for R, a, r in zip(thresholds, tail_A, tail_R)
    ]
    monotone = bool(np.all(np.diff(tail_A) <= 0) and np.all(np.diff(tail_R) <= 0))
    dominated = bool(np.all(tail_A <= dsum / np.array(thresholds) * (1.0 + 1e-12)))
    return {"rows": rows, "monotone": monotone, "dominated": dominated}


def mass_bound_check(traj):
    """max_k int U^k <= 2^{2 rho tau N} int U^0 and sum_k tau int (rho U^k - R(U^k)) <= same, per species."""
    model, mesh, time = traj.model, traj.mesh, traj.time
    rho = model.reaction.rho_max
    growth = 2.0 ** (2.0 * rho * time.tau * time.N)
    m0 = integrate(mesh, traj.states[0])
    bound = growth * m0
    worst_ratio = np.zeros_like(m0)
    offending = None
    reaction_sum = np.zeros_like(m0)
    for k in sorted(traj.states):
        if k == 0:
            continue
        U = traj.states[k]
        m = integrate(mesh, U)
        worst_ratio = np.maximum(worst_ratio, m / m0)
        if offending is None and np.any(m > bound * (1.0 + MASS_RTOL)):
            offending = k
        if traj.complete:
            R = eval_reaction(model, U.T).T
            reaction_sum += time.tau * integrate(mesh, rho * U - R)
    out = {
        "growth_factor": growth,
        "max_mass_ratio": worst_ratio.tolist(),
        "mass_bound_passed": offending is None,
        "offending_k": offending,
    }
    if traj.complete:
        ok = bool(np.all(reaction_sum <= bound * (1.0 + MASS_RTOL)))
        out.update({"reaction_sum": reaction_sum.tolist(), "reaction_bound_passed": ok})
    out["passed"] = out["mass_bound_passed"] and out.get("reaction_bound_passed", True)
    return out


def initial_data_report(traj):
    """Excesses of the prepared initial data over U_in in L1, H^-1 and entropy."""
    mesh, L = traj.mesh, traj.L
    u_in, u0 = traj.U_in.values, traj.U0.values
    out = {
        "floor": 1.0 / traj.time.N,
        "min_U0": float(u0.min()),
        "l1_excess": (integrate(mesh, u0) - integrate(mesh, u_in)).tolist(),
        "hminus1_excess": [hminus1_norm(mesh, L, u0[i]) - hminus1_norm(mesh, L, u_in[i])
                           for i in range(u0.shape[0])],
    }
    if traj.entropy is not None:
        out["entropy_excess"] = float(
            integrate(mesh, eval_entropy(traj.entropy, u0.T)) - integrate(mesh, eval_entropy(traj.entropy, u_in.T))
        )
    return out


def summarize(traj):
    """Pass/fail of every named estimate on a finished run."""
    rows = traj.ledger

    def all_flag(name):
        vals = [r["flags"].get(name) for r in rows if name in r["flags"]]
        return None if not vals else bool(all(vals))

    estimates = {
        "positivity": all_flag("positivity"),
        "mass_bound": all_flag("mass_bound"),
        "entropy_step": all_flag("entropy_step"),
        "entropy_summed": all_flag("entropy_summed"),
        "dissipation_floor": all_flag("dissipation_floor"),
    }
    mass = mass_bound_check(traj)
    estimates["mass_reaction_bound"] = mass.get("reaction_bound_passed")
    out = {
        "N": traj.time.N,
        "T": traj.time.T,
        "tau": traj.time.tau,
        "C": traj.C,
        "rho": traj.model.reaction.rho_max,
        "newton_iters_total": int(sum(traj.newton_iters)),
        "max_residual": float(max(traj.residuals)),
        "max_mass_defect": float(max((r["mass_defect"] for r in rows), default=0.0)),
        "mass": mass,
        "initial_data": initial_data_report(traj),
    }
    if traj.complete:
        duality = duality_check(traj)
        dsum, monotone = duality_sum(traj)
        equi = equiintegrability_profile(traj)
        estimates["duality"] = duality.passed
        estimates["duality_sum_monotone"] = monotone
        estimates["equiintegrability"] = equi["monotone"] and equi["dominated"]
        out["duality"] = duality.to_dict()
        out["duality_sum"] = dsum
        out["equiintegrability"] = equi
    else:
        out["duality"] = "skipped: snapshot stride > 1"
    out["estimates"] = estimates
    out["passed"] = all(v is not False for v in estimates.values())
    return out
