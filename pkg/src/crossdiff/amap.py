"""Inversion of the diffusion map A(X) = (p_i(X) x_i)_i on the closed orthant.

A preserves every boundary stratum of the orthant (x_i = 0 iff A_i(X) = 0,
since p_i >= alpha > 0), so the inverse is computed on the stratum picked
out by the zero pattern of W.  On that stratum the map is conjugated to
``Phi(Y) = ln A(exp Y)``, a global diffeomorphism of R^k, and solved by
damped Newton in the log coordinates Y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InversionError
from .model import _check_state, _laws_apply, eval_A, eval_DA, eval_pressure

__all__ = ["InversionSettings", "log_A", "jacobian_logA", "invert_A", "invert_A_batch"]

LOG_CLAMP = 700.0


@dataclass(frozen=True)
class InversionSettings:
    tol: float = 1e-12
    max_iters: int = 200
    damping: float = 1.0
    damping_floor: float = 2.0**-20

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be at least 1")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")


def _check_log(Y):
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)) or np.any(np.abs(Y) > LOG_CLAMP):
        raise DomainError(f"log coordinates must lie in [-{LOG_CLAMP:g}, {LOG_CLAMP:g}]")
    return Y


def log_A(model, Y):
    """Phi(Y) = ln A(exp Y), componentwise logs."""
    Y = _check_log(Y)
    return np.log(eval_A(model, np.exp(Y)))


def jacobian_logA(model, Y):
    """DPhi(Y) = Diag(1/A(e^Y)) DA(e^Y) Diag(e^Y)."""
    Y = _check_log(Y)
    X = np.exp(Y)
    A = eval_A(model, X)
    return eval_DA(model, X) * X[..., None, :] / A[..., :, None]


def _stratum_parts(model, X, P):
    """Pressure and x_j q_j'(x_j) on a stratum (zero where x_j is frozen at 0)."""
    law = model.pressure
    p = eval_pressure(model, X)
    safe = np.where(P, X, 1.0)
    xdq = np.where(P, safe * _laws_apply(law.laws, safe, "deriv"), 0.0)
    return p, xdq


def invert_A_batch(model, W, settings=None, x0=None):
    """Solve A(X) = W for a stack of targets ``W`` of shape ``(n, I)``.

    Returns ``(X, iterations)``.  ``x0`` is an optional warm start; entries on
    frozen coordinates are ignored.
    """
    settings = settings or InversionSettings()
    W = _check_state(model.species, W)
    W = np.atleast_2d(W)
    n, I = W.shape
    P = W > 0
    M = model.pressure.interaction
    eye = np.eye(I)

    Wsafe = np.where(P, W, 1.0)
    logW = np.log(Wsafe)
    if x0 is not None:
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), W.shape)
        good = np.all((x0 > 0) | ~P, axis=1, keepdims=True)
        p0 = eval_pressure(model, np.zeros(I))
        Y = np.where(good, np.log(np.where(x0 > 0, x0, 1.0)), np.log(Wsafe / p0))
    else:
        Y = np.log(Wsafe / eval_pressure(model, np.zeros(I)))
    Y = np.where(P, np.clip(Y, -LOG_CLAMP, LOG_CLAMP), 0.0)
    bound = settings.tol * (1.0 + np.max(W, axis=1))

    def evaluate(Yb, Pb, lWb):
        Xb = np.where(Pb, np.exp(Yb), 0.0)
        Ab = eval_A(model, Xb)
        with np.errstate(divide="ignore"):
            Fb = np.where(Pb, np.log(np.where(Pb, Ab, 1.0)) - lWb, 0.0)
        return Xb, Ab, Fb

    X, A, F = evaluate(Y, P, logW)
    active = np.max(np.abs(A - W), axis=1) > bound
    iters = 0
    while np.any(active):
        if iters >= settings.max_iters:
            worst = float(np.max(np.abs(A - W)[active]))
            raise InversionError(
                f"A-inversion did not converge in {settings.max_iters} iterations "
                f"(residual {worst:.3e} at {int(active.sum())} point(s))",
                residual=worst,
            )
        iters += 1
        idx = np.flatnonzero(active)
        Pa, Xa, Fa = P[idx], X[idx], F[idx]
        p, xdq = _stratum_parts(model, Xa, Pa)
        J = eye + M * xdq[:, None, :] / p[:, :, None]
        delta = -np.linalg.solve(J, Fa[..., None])[..., 0]
        delta = np.where(Pa, delta, 0.0)
        fnorm = np.max(np.abs(Fa), axis=1)

        lam = np.full(len(idx), settings.damping)
        pending = np.ones(len(idx), dtype=bool)
        Ynew = Y[idx].copy()
        while np.any(pending):
            k = np.flatnonzero(pending)
            trial = np.clip(Y[idx[k]] + lam[k, None] * delta[k], -LOG_CLAMP, LOG_CLAMP)
            _, _, Ft = evaluate(trial, Pa[k], logW[idx[k]])
            ok = np.max(np.abs(Ft), axis=1) <= (1.0 - 1e-4 * lam[k]) * fnorm[k]
            ok |= lam[k] <= settings.damping_floor
            Ynew[k[ok]] = trial[ok]
            pending[k[ok]] = False
            lam[k[~ok]] *= 0.5
        Y[idx] = Ynew
        Xn, An, Fn = evaluate(Ynew, Pa, logW[idx])
        X[idx], A[idx], F[idx] = Xn, An, Fn
        active[idx] = np.max(np.abs(An - W[idx]), axis=1) > bound[idx]
    return X, iters


def invert_A(model, W, settings=None):
    """X >= 0 with A(X) = W; zero exactly on the zero pattern of W."""
    W = np.asarray(W, dtype=float)
    X, _ = invert_A_batch(model, W.reshape(-1, model.species) if W.ndim <= 1 else W, settings)
    return X.reshape(W.shape)
