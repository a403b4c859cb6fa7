"""Semi-implicit time stepping (U^k - U^{k-1})/tau - L A(U^k) = R(U^k).

Each step is solved for the nodal unknowns W = A(U^k).  The Laplacian then
acts linearly, and all nonlinearity sits in the pointwise inverse
U = A^{-1}(W) evaluated by :func:`crossdiff.amap.invert_A_batch`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .amap import InversionSettings, invert_A_batch
from .errors import DomainError, InversionError, StepError
from .grid import Field, integrate, neumann_laplacian
from .model import eval_A, eval_DA, eval_DR, eval_pressure, eval_reaction

log = logging.getLogger(__name__)

__all__ = [
    "TimeGrid",
    "SolverSettings",
    "StepResult",
    "Trajectory",
    "prepare_initial",
    "step",
    "run",
]


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("final time T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError("step count N must be a positive integer")
        object.__setattr__(self, "N", int(self.N))

    @property
    def tau(self):
        return self.T / self.N

    def times(self):
        return np.arange(self.N + 1) * self.tau

    def check(self, rho, C=None):
        """Enforce rho*tau < 1/2 and, when C is given, C*tau < 1/2."""
        for name, const in (("rho", rho), ("C", C)):
            if const is None or const <= 0:
                continue
            if const * self.tau >= 0.5:
                tau_max = 0.5 / const
                n_min = int(np.floor(self.T / tau_max)) + 1
                raise DomainError(
                    f"time step tau={self.tau:.6g} violates {name}*tau < 1/2 "
                    f"({name}={const:.6g}); reduce τ below {tau_max:.6g} (N >= {n_min})"
                )


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_newton: int = 50
    max_picard: int = 500
    damping_floor: float = 2.0**-20
    inversion: InversionSettings = field(default_factory=InversionSettings)

    def to_dict(self):
        inv = self.inversion
        return {
            "tol": self.tol,
            "max_newton": self.max_newton,
            "max_picard": self.max_picard,
            "damping_floor": self.damping_floor,
            "inversion": {"tol": inv.tol, "max_iters": inv.max_iters, "damping": inv.damping},
        }

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        inv = obj.pop("inversion", None) or {}
        return cls(inversion=InversionSettings(**inv), **obj)


@dataclass
class StepResult:
    U_k: Field
    newton_iters: int
    residual: float
    W_k: Field
    picard_iters: int = 0


def prepare_initial(U_in, N):
    """Clamp to the floor 1/N, then pull each species' mass back toward that of U_in.

    The rescaling acts on the excess above the floor, so the result never
    drops below 1/N; when the floor alone exceeds the target mass the field
    is the constant 1/N.
    """
    values = np.asarray(U_in.values, dtype=float)
    if np.any(values < 0):
        raise DomainError("initial data must be nonnegative")
    floor = 1.0 / N
    mesh = U_in.mesh
    target = integrate(mesh, values)
    clamped = np.maximum(values, floor)
    mass = integrate(mesh, clamped)
    floor_mass = floor * mesh.volume
    out = clamped.copy()
    for i in range(values.shape[0]):
        if mass[i] <= target[i]:
            continue
        excess = mass[i] - floor_mass
        lam = 0.0 if excess <= 0 else min(1.0, max(0.0, (target[i] - floor_mass) / excess))
        out[i] = floor + lam * (clamped[i] - floor)
    return Field(out, mesh)


def _node_blocks(blocks):
    """Sparse matrix from per-node I x I blocks, species-major unknown ordering."""
    n, I, _ = blocks.shape
    nodes = np.arange(n)
    rows = (np.arange(I)[:, None, None] * n + nodes[None, None, :]) * np.ones((1, I, 1), dtype=int)
    cols = (np.arange(I)[None, :, None] * n + nodes[None, None, :]) * np.ones((I, 1, 1), dtype=int)
    data = np.transpose(blocks, (1, 2, 0))
    return sp.csr_matrix((data.reshape(-1), (rows.reshape(-1), cols.reshape(-1))), shape=(I * n, I * n))


class _StepProblem:
    """Residual G(W) = A^{-1}(W) - tau L W - tau R(A^{-1}(W)) - U_prev, W of shape (I, N_h)."""

    def __init__(self, model, L, U_prev, tau, settings):
        self.model = model
        self.L = L.matrix
        self.Lb = L.blocks(model.species)
        self.U_prev = U_prev
        self.tau = tau
        self.settings = settings
        self.evaluations = 0

    def inverse(self, W, guess):
        X, _ = invert_A_batch(self.model, W.T, self.settings.inversion, x0=guess.T)
        return X.T

    def residual(self, W, U):
        R = eval_reaction(self.model, U.T).T
        return U - self.tau * (self.L @ W.T).T - self.tau * R - self.U_prev

    def jacobian(self, U):
        X = U.T
        DA = eval_DA(self.model, X)
        DR = eval_DR(self.model, X)
        I = self.model.species
        inv = np.linalg.inv(DA)
        blocks = (np.eye(I) - self.tau * DR) @ inv
        return (_node_blocks(blocks) - self.tau * self.Lb).tocsc()


def _newton(problem, W, U, G, bound, settings):
    gnorm = float(np.max(np.abs(G)))
    for it in range(1, settings.max_newton + 1):
        J = problem.jacobian(U)
        delta = spsolve(J, -G.reshape(-1)).reshape(W.shape)
        if not np.all(np.isfinite(delta)):
            return W, U, G, it, False
        lam = 1.0
        while True:
            trial = W + lam * delta
            if np.all(trial > 0):
                try:
                    Ut = problem.inverse(trial, U)
                    Gt = problem.residual(trial, Ut)
                    gt = float(np.max(np.abs(Gt)))
                    if gt <= (1.0 - 1e-4 * lam) * gnorm or gt <= bound:
                        break
                except InversionError:
                    pass
            lam *= 0.5
            if lam < settings.damping_floor:
                return W, U, G, it, False
        W, U, G, gnorm = trial, Ut, Gt, gt
        if gnorm <= bound:
            return W, U, G, it, True
    return W, U, G, settings.max_newton, False


def _picard(problem, W, U, G, bound, settings):
    """Lagged-pressure iteration (Diag(1/p(U^m))/tau - L) W = U_prev/tau + R(U^m)."""
    tau = problem.tau
    model = problem.model
    gnorm = float(np.max(np.abs(G)))
    for it in range(1, settings.max_picard + 1):
        p = eval_pressure(model, U.T).T
        R = eval_reaction(model, U.T).T
        K = sp.diags((1.0 / (tau * p)).reshape(-1)) - problem.Lb
        rhs = (problem.U_prev / tau + R).reshape(-1)
        Wn = spsolve(K.tocsc(), rhs).reshape(W.shape)
        if not np.all(Wn > 0):
            raise StepError("Picard iterate lost positivity", residual=gnorm)
        U = problem.inverse(Wn, U)
        W = Wn
        G = problem.residual(W, U)
        gnorm = float(np.max(np.abs(G)))
        if gnorm <= bound:
            return W, U, G, it, True
    return W, U, G, settings.max_picard, False


def step(model, mesh, L, U_prev, tau, settings=None):
    """Advance one step of the semi-implicit scheme from ``U_prev`` (Field or (I, N_h) array)."""
    settings = settings or SolverSettings()
    U_prev = U_prev.values if isinstance(U_prev, Field) else np.asarray(U_prev, dtype=float)
    if U_prev.shape != (model.species, mesh.size):
        raise DomainError(f"expected a field of shape ({model.species}, {mesh.size})")
    if np.any(U_prev <= 0):
        raise DomainError("the previous state must be positive at every node")
    problem = _StepProblem(model, L, U_prev, tau, settings)
    bound = settings.tol * (1.0 + float(np.max(np.abs(U_prev))))

    U = U_prev.copy()
    W = eval_A(model, U.T).T
    G = problem.residual(W, U)
    newton_iters = picard_iters = 0
    converged = float(np.max(np.abs(G))) <= bound
    if not converged:
        W, U, G, newton_iters, converged = _newton(problem, W, U, G, bound, settings)
    if not converged:
        log.info("Newton stalled after %d iterations, falling back to Picard", newton_iters)
        W, U, G, picard_iters, converged = _picard(problem, W, U, G, bound, settings)
    residual = float(np.max(np.abs(G)))
    if not converged:
        raise StepError(f"step did not converge (residual {residual:.3e})", residual=residual)
    if np.any(U <= 0):
        raise StepError("step produced a non-positive density", residual=residual)
    return StepResult(Field(U, mesh), newton_iters + picard_iters, residual, Field(W, mesh), picard_iters)


@dataclass
class Trajectory:
    """States of a run; ``states[k]`` is U^k with shape (I, N_h) when stored."""

    model: object
    mesh: object
    L: object
    time: TimeGrid
    U_in: Field
    U0: Field
    states: dict
    newton_iters: list
    residuals: list
    entropy: object = None
    C: float = 0.0
    settings: SolverSettings = None
    ledger: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def complete(self):
        return len(self.states) == self.time.N + 1

    def final(self):
        return self.states[self.time.N]


def run(model, mesh, time, U_in, settings=None, sinks=(), entropy=None, C=None, strict=False,
        snapshot_stride=1, L=None):
    """Iterate the scheme N times from prepare_initial(U_in, N).

    Without an explicit ``entropy`` (or one attached to the model) the model is
    certified first; entropy diagnostics run only when certification succeeds.
    Every step emits a ledger row to each sink (``sink.ledger_row(row)``) and,
    every ``snapshot_stride`` steps, a snapshot (``sink.snapshot(k, t, field)``).
    States are retained at the stride; stride 1 keeps the whole trajectory,
    which the duality diagnostics require.
    """
    from .diagnostics import LedgerBuilder, summarize

    settings = settings or SolverSettings()
    entropy = entropy if entropy is not None else model.entropy
    if entropy is None:
        from .structure import certify

        cert = certify(model)
        entropy = cert.entropy_spec if cert.certified else None
    if C is None:
        if entropy is not None:
            from .model import entropy_reaction_bound

            C = entropy_reaction_bound(model, entropy)
        else:
            C = 0.0
    time.check(model.reaction.rho_max, C if entropy is not None else None)
    L = L or neumann_laplacian(mesh)
    if not isinstance(U_in, Field):
        U_in = Field(U_in, mesh)
    U0 = prepare_initial(U_in, time.N)
    traj = Trajectory(model, mesh, L, time, U_in, U0, {0: U0.values.copy()}, [0], [0.0],
                      entropy, float(C), settings)
    builder = LedgerBuilder(model, mesh, L, time, U0.values, entropy, C, settings.tol)

    for sink in sinks:
        if hasattr(sink, "snapshot"):
            sink.snapshot(0, 0.0, U0)
    U = U0.values
    for k in range(1, time.N + 1):
        res = step(model, mesh, L, U, time.tau, settings)
        U = res.U_k.values
        if k % snapshot_stride == 0 or k == time.N:
            traj.states[k] = U.copy()
        traj.newton_iters.append(res.newton_iters)
        traj.residuals.append(res.residual)
        row = builder.row(k, U, res.newton_iters)
        traj.ledger.append(row)
        for sink in sinks:
            if hasattr(sink, "ledger_row"):
                sink.ledger_row(row)
            if hasattr(sink, "snapshot") and k % snapshot_stride == 0:
                sink.snapshot(k, k * time.tau, res.U_k)
        if strict:
            builder.enforce(row)
    traj.summary = summarize(traj)
    return traj
