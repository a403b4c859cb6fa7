"""Entropy-structure certification for separate-variables pressures.

The checks here decide whether ``H(X) = sum_i pi_i phi_i(x_i)`` with
``phi_i'' = q_i'/z`` is a uniform entropy for a model:

* detailed balance of the interaction matrix (weights ``pi``),
* pairwise compatibility of the scalar laws,
* the relaxed detailed-balance inequality for power laws,
* a sampled check of ``sym(D2H DA) >= Diag(f_i**2)``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StructureError
from .model import EntropySpec, eval_DA, eval_hess_entropy

log = logging.getLogger(__name__)

__all__ = [
    "DetailedBalance",
    "PairwiseVerdict",
    "UniformEntropyVerdict",
    "StructureCertificate",
    "detailed_balance",
    "find_detailed_balance",
    "least_squares_weights",
    "check_pairwise",
    "check_relaxed_db",
    "check_uniform_entropy",
    "build_entropy",
    "certify",
]

DB_RTOL = 1e-12
UNIFORM_TOL = 1e-10
BLOCK_DET_TOL = 1e-12
SAMPLE_BOX = (1e-3, 1e3)
PAIRWISE_GRID = np.logspace(-4.0, 4.0, 81)


@dataclass
class DetailedBalance:
    holds: bool
    pi: np.ndarray | None = None
    violated_cycle: list | None = None

    def to_dict(self):
        return {
            "holds": self.holds,
            "pi": None if self.pi is None else self.pi.tolist(),
            "violated_cycle": self.violated_cycle,
        }


@dataclass
class PairwiseVerdict:
    holds: bool
    method: str
    violating_pair: tuple | None = None
    witness_point: tuple | None = None
    witness_value: float | None = None
    witness_block_det: float | None = None

    def to_dict(self):
        return {
            "holds": self.holds,
            "method": self.method,
            "violating_pair": None if self.violating_pair is None else list(self.violating_pair),
            "witness_point": None if self.witness_point is None else list(self.witness_point),
            "witness_value": self.witness_value,
            "witness_block_det": self.witness_block_det,
        }


@dataclass
class UniformEntropyVerdict:
    holds: bool
    min_margin: float
    worst_point: np.ndarray | None
    blocks_ok: bool
    min_block_trace: float
    min_block_det: float
    worst_block: tuple | None
    samples: int
    skipped: int
    grade: str = "sampled"

    def to_dict(self):
        return {
            "holds": self.holds,
            "min_margin": self.min_margin,
            "worst_point": None if self.worst_point is None else self.worst_point.tolist(),
            "blocks_ok": self.blocks_ok,
            "min_block_trace": self.min_block_trace,
            "min_block_det": self.min_block_det,
            "worst_block": None if self.worst_block is None else list(self.worst_block),
            "samples": self.samples,
            "skipped": self.skipped,
            "grade": self.grade,
        }


@dataclass
class StructureCertificate:
    detailed_balance: DetailedBalance
    pairwise: PairwiseVerdict
    relaxed_db: dict
    uniform_entropy: UniformEntropyVerdict | None
    entropy_spec: EntropySpec | None = None
    notes: list = field(default_factory=list)

    @property
    def certified(self):
        return self.entropy_spec is not None and self.uniform_entropy is not None and self.uniform_entropy.holds

    def to_dict(self):
        return {
            "certified": self.certified,
            "detailed_balance": self.detailed_balance.to_dict(),
            "pairwise": self.pairwise.to_dict(),
            "relaxed_db": self.relaxed_db,
            "uniform_entropy": None if self.uniform_entropy is None else self.uniform_entropy.to_dict(),
            "entropy_spec": None if self.entropy_spec is None else self.entropy_spec.to_dict(),
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# detailed balance
# ---------------------------------------------------------------------------


def _check_matrix(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"interaction matrix must be square, got shape {M.shape}")
    if np.any(M < 0) or not np.all(np.isfinite(M)):
        raise DomainError("interaction matrix must be finite and nonnegative")
    return M


def _tree_path(parent, depth, a, b):
    """Vertices on the spanning-tree path from a to b."""
    left, right = [a], [b]
    while a != b:
        if depth[a] >= depth[b]:
            a = parent[a]
            left.append(a)
        else:
            b = parent[b]
            right.append(b)
    # both lists end at the common ancestor
    return left + right[-2::-1]


def detailed_balance(M):
    """Decide whether some pi > 0 satisfies pi_i m_ij = pi_j m_ji for i != j.

    Ratios are propagated along a BFS spanning forest of the coupling graph
    (edges where m_ij + m_ji > 0) and non-tree edges are checked for cycle
    consistency.  The first vertex of every component gets weight 1.
    """
    M = _check_matrix(M)
    n = M.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if (M[i, j] > 0) != (M[j, i] > 0):
                return DetailedBalance(False, None, [i, j])

    pi = np.zeros(n)
    parent = list(range(n))
    depth = [0] * n
    seen = [False] * n
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        pi[root] = 1.0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in range(n):
                if j == i or M[i, j] == 0 or seen[j]:
                    continue
                seen[j] = True
                parent[j] = i
                depth[j] = depth[i] + 1
                pi[j] = pi[i] * M[i, j] / M[j, i]
                queue.append(j)

    for i in range(n):
        for j in range(i + 1, n):
            if M[i, j] == 0 or parent[j] == i or parent[i] == j:
                continue
            lhs, rhs = pi[i] * M[i, j], pi[j] * M[j, i]
            if abs(lhs - rhs) > DB_RTOL * max(lhs, rhs):
                return DetailedBalance(False, None, _tree_path(parent, depth, i, j))
    return DetailedBalance(True, pi, None)


def find_detailed_balance(M):
    """Detailed-balance weights pi (first entry of each component = 1), or None."""
    return detailed_balance(M).pi


def least_squares_weights(M):
    """Best-effort weights when detailed balance fails.

    Fits log(pi_j / pi_i) to 0.5 log(m_ij / m_ji) on two-sided edges in the
    least-squares sense, which balances pi_i m_ij against pi_j m_ji and is the
    natural candidate for the relaxed detailed-balance test.
    """
    M = _check_matrix(M)
    n = M.shape[0]
    rows, rhs = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if M[i, j] > 0 and M[j, i] > 0:
                row = np.zeros(n)
                row[j], row[i] = 1.0, -1.0
                rows.append(row)
                rhs.append(np.log(M[i, j] / M[j, i]))
    if not rows:
        return np.ones(n)
    A = np.array(rows)
    b = np.array(rhs)
    y = np.linalg.lstsq(A, b, rcond=None)[0]
    # pin each component's first vertex, as for detailed balance
    graph = (M + M.T) > 0
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root]:
            continue
        comp = [root]
        seen[root] = True
        k = 0
        while k < len(comp):
            i = comp[k]
            for j in np.flatnonzero(graph[i]):
                if not seen[j]:
                    seen[j] = True
                    comp.append(j)
            k += 1
        y[comp] -= y[root]
    return np.exp(y)


# ---------------------------------------------------------------------------
# pairwise compatibility and relaxed detailed balance
# ---------------------------------------------------------------------------


def _coupled_pairs(M):
    n = M.shape[0]
    return [(i, j) for i in range(n) for j in range(i + 1, n) if M[i, j] * M[j, i] > 0]


def _normalized_block_det(qi, qj, dqi, dqj, x, y):
    """det(B)/(B11 B22) for a symmetric block: 1 - x y q_i' q_j' / (q_i q_j)."""
    return 1.0 - x * y * dqi * dqj / (qi * qj)


def check_pairwise(model):
    """Pairwise compatibility q_i(x) q_j(y) - x y q_i'(x) q_j'(y) >= 0 on coupled pairs.

    Power laws are decided in closed form (s_i s_j <= 1); other laws are
    sampled on a log grid over [1e-4, 1e4]**2.
    """
    law = model.pressure
    M = law.interaction
    s = law.exponents
    pairs = _coupled_pairs(M)
    if s is not None:
        for i, j in pairs:
            if s[i] * s[j] > 1.0:
                x = y = 1.0
                value = float(1.0 - s[i] * s[j])
                return PairwiseVerdict(False, "closed-form", (int(i), int(j)), (x, y), value, value)
        return PairwiseVerdict(True, "closed-form")

    X, Y = np.meshgrid(PAIRWISE_GRID, PAIRWISE_GRID, indexing="ij")
    for i, j in pairs:
        qi, qj = law.laws[i], law.laws[j]
        vi, vj, di, dj = qi.value(X), qj.value(Y), qi.deriv(X), qj.deriv(Y)
        val = vi * vj - X * Y * di * dj
        scaled = val / (vi * vj)
        k = np.unravel_index(np.argmin(scaled), scaled.shape)
        if scaled[k] < -DB_RTOL:
            x, y = float(X[k]), float(Y[k])
            det = float(_normalized_block_det(vi[k], vj[k], di[k], dj[k], x, y))
            return PairwiseVerdict(False, "sampled", (int(i), int(j)), (x, y), float(val[k]), det)
    return PairwiseVerdict(True, "sampled")


def check_relaxed_db(model, pi):
    """Relaxed detailed balance for power laws, pairwise over i < j.

    Checks pi_i m_ij pi_j m_ji s_i s_j - s_i**2 s_j**2 ((pi_i m_ij + pi_j m_ji)/2)**2 >= 0.
    """
    s = model.pressure.exponents
    if s is None:
        raise DomainError("relaxed detailed balance is defined for power laws only")
    M = model.pressure.interaction
    pi = np.asarray(pi, dtype=float)
    n = M.shape[0]
    worst, worst_pair, worst_value = np.inf, None, None
    for i in range(n):
        for j in range(i + 1, n):
            a, b = pi[i] * M[i, j], pi[j] * M[j, i]
            ss = s[i] * s[j]
            value = a * b * ss - ss * ss * (0.5 * (a + b)) ** 2
            scale = max(ss * ss * (0.5 * (a + b)) ** 2, a * b * ss)
            rel = value / scale if scale > 0 else 0.0
            if rel < worst:
                worst, worst_pair, worst_value = rel, (i, j), float(value)
    holds = worst >= -DB_RTOL if worst_pair is not None else True
    return {
        "holds": bool(holds),
        "pi": pi.tolist(),
        "min_relative_value": None if worst_pair is None else float(worst),
        "min_value": worst_value,
        "worst_pair": None if worst_pair is None or holds else list(worst_pair),
    }


# ---------------------------------------------------------------------------
# entropy construction and the uniform-entropy check
# ---------------------------------------------------------------------------


def build_entropy(model, pi=None):
    """EntropySpec H = sum_i pi_i phi_i(x_i) with phi_i'' = q_i'/z.

    The lower bound is f_i(x)**2 = pi_i d_i q_i'(x)/x.  ``pi`` defaults to the
    detailed-balance weights of the interaction matrix.
    """
    law = model.pressure
    if pi is None:
        db = detailed_balance(law.interaction)
        if not db.holds:
            raise StructureError(
                f"interaction matrix violates detailed balance on cycle {db.violated_cycle}",
                violated_cycle=db.violated_cycle,
            )
        pi = db.pi
    pi = np.asarray(pi, dtype=float)
    return EntropySpec(
        pi=pi,
        entropies=tuple(q.entropy() for q in law.laws),
        floor_weights=pi * law.d,
        laws=law.laws,
    )


def sample_points(n_species, samples, seed=0, box=SAMPLE_BOX):
    rng = np.random.default_rng(seed)
    lo, hi = np.log(box[0]), np.log(box[1])
    return np.exp(rng.uniform(lo, hi, size=(samples, n_species)))


def check_uniform_entropy(model, spec, samples=10_000, seed=0, points=None, box=SAMPLE_BOX):
    """Sampled check of sym(D2H DA) - Diag(f**2) >= 0.

    The margin is the smallest eigenvalue of that matrix after symmetric
    diagonal scaling by sym(D2H DA)'s own diagonal.  Scaling is a congruence,
    so the sign (the verdict) is unchanged while the margin becomes
    dimensionless and comparable across the sampling box.
    """
    n = model.species
    if points is None:
        X = sample_points(n, samples, seed, box)
        skipped = 0
    else:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.all(np.isfinite(X) & (X > 0), axis=1)
        skipped = int(np.count_nonzero(~ok))
        if skipped:
            log.warning("skipping %d sample(s) outside the open orthant", skipped)
        X = X[ok]

    hess = eval_hess_entropy(spec, X)
    DA = eval_DA(model, X)
    P = hess @ DA
    S = 0.5 * (P + np.swapaxes(P, -1, -2))
    diag = np.diagonal(S, axis1=-2, axis2=-1)
    G = S.copy()
    idx = np.arange(n)
    G[:, idx, idx] -= spec.f_squared(X)
    scale = 1.0 / np.sqrt(diag)
    G *= scale[:, :, None] * scale[:, None, :]
    eig = np.linalg.eigvalsh(G)[:, 0] if len(X) else np.array([])
    if len(eig):
        k = int(np.argmin(eig))
        margin, worst = float(eig[k]), X[k].copy()
    else:
        margin, worst = float("inf"), None

    # 2x2 blocks of the quadratic form
    law = model.pressure
    M = law.interaction
    h = np.diagonal(hess, axis1=-2, axis2=-1)
    min_tr, min_det, worst_block = np.inf, np.inf, None
    for i in range(n):
        for j in range(i + 1, n):
            if M[i, j] == 0 and M[j, i] == 0:
                continue
            xi, xj = X[:, i], X[:, j]
            qi, qj = law.laws[i].value(xi), law.laws[j].value(xj)
            dqi, dqj = law.laws[i].deriv(xi), law.laws[j].deriv(xj)
            b11 = h[:, i] * M[i, j] * qj
            b22 = h[:, j] * M[j, i] * qi
            b12 = 0.5 * (h[:, i] * M[i, j] * xi * dqj + h[:, j] * M[j, i] * xj * dqi)
            trace = b11 + b22
            prod = b11 * b22
            with np.errstate(divide="ignore", invalid="ignore"):
                det = np.where(prod > 0, 1.0 - b12 * b12 / prod, np.where(b12 == 0, 0.0, -np.inf))
            tr_scaled = np.min(trace) if len(trace) else np.inf
            d = float(np.min(det)) if len(det) else np.inf
            if d < min_det:
                min_det, worst_block = d, (i, j)
            min_tr = min(min_tr, float(tr_scaled))
    blocks_ok = min_tr >= 0 and min_det >= -BLOCK_DET_TOL
    grade = "sampled"
    s = law.exponents
    if s is not None and detailed_balance(M).holds and check_pairwise(model).holds:
        grade = "certificate"
    return UniformEntropyVerdict(
        holds=bool(margin >= -UNIFORM_TOL),
        min_margin=margin,
        worst_point=worst,
        blocks_ok=bool(blocks_ok),
        min_block_trace=float(min_tr),
        min_block_det=float(min_det),
        worst_block=worst_block,
        samples=int(len(X)),
        skipped=skipped,
        grade=grade,
    )


def certify(model, samples=10_000, seed=0):
    """Run every structure check and assemble a StructureCertificate."""
    M = model.pressure.interaction
    db = detailed_balance(M)
    pairwise = check_pairwise(model)
    notes = []
    pi = db.pi
    if model.pressure.exponents is not None:
        candidate = pi if pi is not None else least_squares_weights(M)
        relaxed = check_relaxed_db(model, candidate)
    else:
        relaxed = {"holds": bool(db.holds), "pi": None if pi is None else pi.tolist(),
                   "min_relative_value": None, "worst_pair": None}
        notes.append("relaxed detailed balance is only defined for power laws")
    if pi is None and relaxed["holds"]:
        pi = np.asarray(relaxed["pi"])
        notes.append("entropy weights taken from the relaxed detailed-balance fit")

    spec = None
    uniform = None
    if pi is not None:
        spec = build_entropy(model, pi)
        uniform = check_uniform_entropy(model, spec, samples=samples, seed=seed)
        if db.holds and pairwise.holds and not uniform.holds:
            notes.append("detailed balance and pairwise compatibility hold but the sampled check failed")
        if not uniform.holds:
            spec = None
    else:
        notes.append("no entropy weights available: uniform-entropy check skipped")
    return StructureCertificate(db, pairwise, relaxed, uniform, spec, notes)
