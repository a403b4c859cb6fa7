"""Pointwise pressures, reactions, the diffusion map A and separable entropies.

All evaluators act on arrays whose *last* axis indexes species, so the same
call handles a single state ``X`` of shape ``(I,)`` and a stack of nodal states
of shape ``(n, I)``.

The pressure family is the separate-variables one,

    p_i(X) = d_i + sum_j m_ij q_j(x_j),

with ``q_j`` a scalar law (power law by default), and reactions are

    r_i(X) = rho_i - sum_j c_ij x_j**alpha_ij,   0 <= alpha_ij < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UnsupportedReactionError

__all__ = [
    "PowerLaw",
    "SaturatingLaw",
    "PowerEntropy",
    "SaturatingEntropy",
    "PressureLaw",
    "ReactionLaw",
    "EntropySpec",
    "ModelSpec",
    "law_from_dict",
    "eval_pressure",
    "eval_A",
    "eval_DA",
    "eval_reaction",
    "eval_DR",
    "eval_entropy",
    "eval_grad_entropy",
    "eval_hess_entropy",
    "entropy_reaction_bound",
    "power_model",
]

# singular reaction derivatives are dropped below this coordinate value
DR_ZERO_THRESHOLD = 1e-13


# ---------------------------------------------------------------------------
# scalar laws q_j and the matching scalar entropies
# ---------------------------------------------------------------------------


class PowerEntropy:
    """Scalar entropy for a power law, normalized so that h(1) = h'(1) = 0.

    ``h(z) = scale * (z**s - s*z + s - 1) / (s*(s - 1))`` for ``s != 1`` and
    ``scale * (z*log z - z + 1)`` for ``s == 1``.  With ``scale == 1`` one has
    ``h''(z) = z**(s - 2)``.
    """

    kind = "power"

    def __init__(self, s, scale=1.0):
        if not s > 0:
            raise DomainError(f"exponent must be positive, got {s}")
        self.s = float(s)
        self.scale = float(scale)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        s = self.s
        with np.errstate(divide="ignore", invalid="ignore"):
            if s == 1.0:
                zlogz = np.where(z > 0, z * np.log(np.where(z > 0, z, 1.0)), 0.0)
                out = zlogz - z + 1.0
            else:
                # expm1 keeps the s -> 1 limit well conditioned
                zs_m1 = np.where(z > 0, np.expm1(s * np.log(np.where(z > 0, z, 1.0))), -1.0)
                out = (zs_m1 - s * (z - 1.0)) / (s * (s - 1.0))
        return self.scale * out

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        s = self.s
        if s == 1.0:
            return self.scale * np.log(z)
        return self.scale * np.expm1((s - 1.0) * np.log(z)) / (s - 1.0)

    def second(self, z):
        z = np.asarray(z, dtype=float)
        return self.scale * z ** (self.s - 2.0)

    def to_dict(self):
        return {"type": "power", "s": self.s, "scale": self.scale}


class SaturatingEntropy:
    """Entropy with phi''(z) = 1/(z (1+z)**2), phi(1) = phi'(1) = 0."""

    kind = "saturating"
    _c = math.log(2.0) - 0.5

    def value(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            zlog = np.where(z > 0, z * np.log(np.where(z > 0, z, 1.0) / (1.0 + z)), 0.0)
        return zlog + self._c * z + 0.5

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        return np.log(z / (1.0 + z)) + 1.0 / (1.0 + z) + self._c

    def second(self, z):
        z = np.asarray(z, dtype=float)
        return 1.0 / (z * (1.0 + z) ** 2)

    def to_dict(self):
        return {"type": "saturating"}


class PowerLaw:
    """q(x) = x**s."""

    kind = "power"

    def __init__(self, s):
        if not s > 0:
            raise DomainError(f"exponent must be positive, got {s}")
        self.s = float(s)

    def value(self, x):
        return np.asarray(x, dtype=float) ** self.s

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return self.s * x ** (self.s - 1.0)

    def entropy(self):
        # phi'' = q'/z = s z**(s-2)
        return PowerEntropy(self.s, scale=self.s)

    def to_dict(self):
        return {"type": "power", "s": self.s}

    def __repr__(self):
        return f"PowerLaw({self.s!r})"


class SaturatingLaw:
    """q(x) = x / (1 + x); bounded, increasing, pairwise compatible with itself."""

    kind = "saturating"
    s = None

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x / (1.0 + x)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 / (1.0 + x) ** 2

    def entropy(self):
        return SaturatingEntropy()

    def to_dict(self):
        return {"type": "saturating"}

    def __repr__(self):
        return "SaturatingLaw()"


def law_from_dict(obj):
    kind = obj.get("type", "power")
    if kind == "power":
        return PowerLaw(obj["s"])
    if kind == "saturating":
        return SaturatingLaw()
    raise DomainError(f"unknown scalar law type {kind!r}")


def _entropy_from_dict(obj):
    kind = obj.get("type", "power")
    if kind == "power":
        return PowerEntropy(obj["s"], obj.get("scale", 1.0))
    if kind == "saturating":
        return SaturatingEntropy()
    raise DomainError(f"unknown scalar entropy type {kind!r}")


# ---------------------------------------------------------------------------
# model containers
# ---------------------------------------------------------------------------


def _matrix(a, n, name):
    a = np.array(a, dtype=float)
    if a.shape != (n, n):
        raise DomainError(f"{name} must have shape ({n}, {n}), got {a.shape}")
    return a


def _vector(a, n, name):
    a = np.array(a, dtype=float).reshape(-1)
    if a.shape != (n,):
        raise DomainError(f"{name} must have length {n}, got {a.shape[0]}")
    return a


@dataclass(frozen=True, eq=False)
class PressureLaw:
    d: np.ndarray
    interaction: np.ndarray
    laws: tuple

    def __post_init__(self):
        n = len(self.laws)
        d = _vector(self.d, n, "d")
        m = _matrix(self.interaction, n, "interaction")
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            raise DomainError("diffusion floors d_i must be positive and finite")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise DomainError("interaction coefficients m_ij must be nonnegative")
        d.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "interaction", m)
        object.__setattr__(self, "laws", tuple(self.laws))

    @classmethod
    def power(cls, d, m, s):
        return cls(d, m, tuple(PowerLaw(si) for si in np.atleast_1d(s)))

    @property
    def exponents(self):
        """Power-law exponents, or None when some law is not a power law."""
        if all(isinstance(q, PowerLaw) for q in self.laws):
            return np.array([q.s for q in self.laws])
        return None

    def to_dict(self):
        out = {"d": self.d.tolist(), "m": self.interaction.tolist()}
        s = self.exponents
        if s is not None:
            out["s"] = s.tolist()
        else:
            out["laws"] = [q.to_dict() for q in self.laws]
        return out


@dataclass(frozen=True, eq=False)
class ReactionLaw:
    rho: np.ndarray
    c: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float).reshape(-1)
        n = rho.shape[0]
        c = _matrix(self.c, n, "c")
        alpha = _matrix(self.alpha, n, "alpha")
        if np.any(c < 0):
            raise DomainError("competition coefficients c_ij must be nonnegative")
        if np.any(alpha < 0):
            raise DomainError("reaction exponents alpha_ij must be nonnegative")
        if np.any(alpha >= 1):
            raise UnsupportedReactionError("reaction exponents alpha_ij must satisfy alpha_ij < 1")
        for a in (rho, c, alpha):
            a.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def zero(cls, n):
        return cls(np.zeros(n), np.zeros((n, n)), np.zeros((n, n)))

    @property
    def rho_max(self):
        """Upper bound rho of H2: r_i(X) <= rho for all X >= 0."""
        return max(float(self.rho.max()), 0.0)

    @property
    def is_zero(self):
        return not np.any(self.rho) and not np.any(self.c)

    def to_dict(self):
        return {"rho": self.rho.tolist(), "c": self.c.tolist(), "alpha": self.alpha.tolist()}


@dataclass(frozen=True, eq=False)
class EntropySpec:
    """Separable entropy H(X) = sum_i pi_i h_i(x_i) with uniform lower bounds.

    ``floor_weights`` and ``laws`` define the functions of the uniform-entropy
    inequality through ``f_i(x)**2 = floor_weights[i] * q_i'(x) / x``.
    """

    pi: np.ndarray
    entropies: tuple
    floor_weights: np.ndarray | None = None
    laws: tuple | None = None

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).reshape(-1)
        if pi.shape[0] != len(self.entropies):
            raise DomainError("pi and entropies must have the same length")
        if np.any(pi <= 0):
            raise DomainError("entropy weights must be positive")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "entropies", tuple(self.entropies))
        if self.floor_weights is not None:
            fw = np.array(self.floor_weights, dtype=float).reshape(-1)
            fw.setflags(write=False)
            object.__setattr__(self, "floor_weights", fw)
            object.__setattr__(self, "laws", tuple(self.laws))

    @property
    def species(self):
        return self.pi.shape[0]

    def f_squared(self, X):
        """Diagonal lower bound f_i(x_i)**2, shape like ``X``."""
        if self.floor_weights is None:
            raise DomainError("entropy spec carries no uniform lower bound")
        X = _check_state(self.species, X, strict=True)
        qp = np.stack([q.deriv(X[..., i]) for i, q in enumerate(self.laws)], axis=-1)
        return self.floor_weights * qp / X

    def to_dict(self):
        out = {"pi": self.pi.tolist(), "entropies": [h.to_dict() for h in self.entropies]}
        if self.floor_weights is not None:
            out["floor_weights"] = self.floor_weights.tolist()
            out["laws"] = [q.to_dict() for q in self.laws]
        return out

    @classmethod
    def from_dict(cls, obj):
        fw = obj.get("floor_weights")
        laws = tuple(law_from_dict(q) for q in obj["laws"]) if fw is not None else None
        return cls(obj["pi"], tuple(_entropy_from_dict(h) for h in obj["entropies"]), fw, laws)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    pressure: PressureLaw
    reaction: ReactionLaw
    entropy: EntropySpec | None = None
    alpha: float | None = field(default=None)

    def __post_init__(self):
        n = len(self.pressure.laws)
        if n < 1:
            raise DomainError("at least one species is required")
        if self.reaction.rho.shape[0] != n:
            raise DomainError("pressure and reaction laws disagree on the species count")
        if self.entropy is not None and self.entropy.species != n:
            raise DomainError("entropy spec has the wrong species count")
        lower = float(self.pressure.d.min())
        if self.alpha is None:
            object.__setattr__(self, "alpha", lower)
        elif not 0 < self.alpha <= lower:
            raise DomainError(f"lower bound alpha={self.alpha} must lie in (0, min d_i = {lower}]")

    @property
    def species(self):
        return len(self.pressure.laws)

    def with_entropy(self, entropy):
        return ModelSpec(self.pressure, self.reaction, entropy, self.alpha)

    def to_dict(self):
        out = {
            "species": self.species,
            "pressure": self.pressure.to_dict(),
            "reaction": self.reaction.to_dict(),
        }
        if self.entropy is not None:
            out["entropy"] = self.entropy.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj):
        p = obj["pressure"]
        if "laws" in p:
            laws = tuple(law_from_dict(q) for q in p["laws"])
        else:
            laws = tuple(PowerLaw(s) for s in p["s"])
        n = len(laws)
        pressure = PressureLaw(p["d"], p["m"], laws)
        r = obj.get("reaction")
        reaction = ReactionLaw.zero(n) if r is None else ReactionLaw(r["rho"], r["c"], r["alpha"])
        if "species" in obj and obj["species"] != n:
            raise DomainError(f"species={obj['species']} but the pressure law has {n} entries")
        entropy = EntropySpec.from_dict(obj["entropy"]) if obj.get("entropy") else None
        return cls(pressure, reaction, entropy)


def power_model(d, m, s, rho=None, c=None, alpha=None):
    """Convenience constructor for the power-law family."""
    n = len(np.atleast_1d(d))
    pressure = PressureLaw.power(d, m, s)
    if rho is None and c is None:
        reaction = ReactionLaw.zero(n)
    else:
        rho = np.zeros(n) if rho is None else rho
        c = np.zeros((n, n)) if c is None else c
        alpha = np.zeros((n, n)) if alpha is None else np.broadcast_to(alpha, (n, n))
        reaction = ReactionLaw(rho, c, alpha)
    return ModelSpec(pressure, reaction)


# ---------------------------------------------------------------------------
# pointwise evaluators
# ---------------------------------------------------------------------------


def _check_state(n, X, strict=False):
    X = np.asarray(X, dtype=float)
    if X.shape[-1:] != (n,):
        raise DomainError(f"state must have trailing dimension {n}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("state contains non-finite entries")
    if strict:
        if np.any(X <= 0):
            raise DomainError("state must lie in the open positive orthant")
    elif np.any(X < 0):
        raise DomainError("state must be componentwise nonnegative")
    return X


def _laws_apply(laws, X, method):
    return np.stack([getattr(q, method)(X[..., j]) for j, q in enumerate(laws)], axis=-1)


def eval_pressure(model, X):
    """Pressures p_i(X) = d_i + sum_j m_ij q_j(x_j)."""
    law = model.pressure
    X = _check_state(model.species, X)
    Q = _laws_apply(law.laws, X, "value")
    return law.d + Q @ law.interaction.T


def eval_A(model, X):
    """A(X) = (p_i(X) x_i)_i."""
    X = _check_state(model.species, X)
    return eval_pressure(model, X) * X


def eval_DA(model, X):
    """Jacobian of A on the open orthant, shape ``X.shape + (I,)``.

    DA_ij = delta_ij p_i(X) + m_ij x_i q_j'(x_j).
    """
    law = model.pressure
    X = _check_state(model.species, X, strict=True)
    p = law.d + _laws_apply(law.laws, X, "value") @ law.interaction.T
    Qp = _laws_apply(law.laws, X, "deriv")
    J = X[..., :, None] * law.interaction * Qp[..., None, :]
    idx = np.arange(model.species)
    J[..., idx, idx] += p
    return J


def _growth(model, X):
    rl = model.reaction
    with np.errstate(divide="ignore"):
        powers = X[..., None, :] ** rl.alpha
    return rl.rho - np.sum(rl.c * powers, axis=-1)


def eval_reaction(model, X):
    """R(X) = (r_i(X) x_i)_i."""
    X = _check_state(model.species, X)
    return _growth(model, X) * X


def eval_DR(model, X):
    """Jacobian of R; entries singular at x_k -> 0 are set to zero below 1e-13."""
    rl = model.reaction
    X = _check_state(model.species, X)
    r = _growth(model, X)
    Xk = X[..., None, :]
    active = (rl.alpha > 0) & (rl.c > 0) & (Xk >= DR_ZERO_THRESHOLD)
    safe = np.where(active, Xk, 1.0)
    term = np.where(active, rl.c * rl.alpha * safe ** (rl.alpha - 1.0), 0.0)
    J = -X[..., :, None] * term
    idx = np.arange(model.species)
    J[..., idx, idx] += r
    return J


# ---------------------------------------------------------------------------
# entropy
# ---------------------------------------------------------------------------


def eval_entropy(spec, X):
    """H(X) = sum_i pi_i h_i(x_i) on the closed orthant (continuous extension at 0)."""
    X = _check_state(spec.species, X)
    H = _laws_apply(spec.entropies, X, "value")
    return H @ spec.pi


def eval_grad_entropy(spec, X):
    X = _check_state(spec.species, X, strict=True)
    return spec.pi * _laws_apply(spec.entropies, X, "deriv")


def eval_hess_entropy(spec, X):
    """Hessian Diag(pi_i h_i''(x_i)), shape ``X.shape + (I,)``."""
    X = _check_state(spec.species, X, strict=True)
    diag = spec.pi * _laws_apply(spec.entropies, X, "second")
    out = np.zeros(X.shape + (spec.species,))
    idx = np.arange(spec.species)
    out[..., idx, idx] = diag
    return out


# log-spaced grid for the one-dimensional suprema of entropy_reaction_bound
BOUND_GRID = np.logspace(-12.0, 12.0, 48001)
# relative safety factor covering the gap between grid maxima and true suprema
BOUND_SAFETY = 1.0 + 1e-3


def _scalar_constants(h):
    """Constants (K, Ca, Cb) with -K <= z h'(z), z h'(z) <= Ca (1 + h), z <= Cb (1 + h)."""
    z = BOUND_GRID
    hz = h.value(z)
    g = z * h.deriv(z)
    one_h = 1.0 + hz
    K = max(0.0, -float(g.min())) * BOUND_SAFETY
    Ca = max(0.0, float(np.max(g / one_h))) * BOUND_SAFETY
    Cb = float(np.max(z / one_h)) * BOUND_SAFETY
    return K, Ca, Cb


def entropy_reaction_bound(model, spec=None):
    """Constant C with grad H(X) . R(X) <= C (1 + H(X)) for all X >= 0.

    Per species the scalar constants K_i, Ca_i, Cb_i are obtained by sampled
    maximization on a log grid (with a relative safety margin), then combined
    through x_j**alpha <= 1 + x_j <= 1 + Cb_j (1 + h_j(x_j)).
    """
    spec = spec if spec is not None else model.entropy
    if spec is None:
        raise DomainError("an entropy spec is required (build one with structure.build_entropy)")
    rl = model.reaction
    if np.any(rl.alpha >= 1):
        raise UnsupportedReactionError("alpha_ij >= 1 is not covered by the bound")
    if rl.is_zero:
        return 0.0
    n = model.species
    consts = np.array([_scalar_constants(h) for h in spec.entropies])
    K, Ca, Cb = consts[:, 0], consts[:, 1], consts[:, 2]
    pi = spec.pi
    rho_p = np.maximum(rl.rho, 0.0)
    rho_m = np.maximum(-rl.rho, 0.0)
    # grad H . R <= a0 + sum_k b_k h_k(x_k)
    a0 = float(np.sum(pi * rho_p * Ca) + np.sum(pi * rho_m * K))
    b = pi * rho_p * Ca
    for i in range(n):
        for j in range(n):
            if rl.c[i, j] == 0.0:
                continue
            w = pi[i] * K[i] * rl.c[i, j]
            a0 += w * (1.0 + Cb[j])
            b[j] += w * Cb[j]
    return float(max(a0, float(np.max(b / pi))))
