"""Cell-centred finite-volume discretization of a box with zero-flux boundaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import DomainError
from .model import _check_state, eval_DA, eval_hess_entropy

__all__ = [
    "Mesh",
    "Field",
    "NeumannLaplacian",
    "neumann_laplacian",
    "integrate",
    "hminus1_norm",
    "dissipation",
    "gradient_floor",
    "face_gradients",
    "write_field_csv",
    "read_field_csv",
]


@dataclass(frozen=True)
class Mesh:
    """Uniform box mesh; ``n`` cells (nodes at cell centres) per axis."""

    extents: tuple
    n: tuple

    def __post_init__(self):
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        if len(extents) != len(n) or len(n) not in (1, 2):
            raise DomainError("mesh must be 1-D or 2-D with one extent and one size per axis")
        if any(k < 3 for k in n):
            raise DomainError("at least 3 nodes per axis are required")
        if any(not e > 0 for e in extents):
            raise DomainError("extents must be positive")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n", n)

    @classmethod
    def interval(cls, n, length=1.0):
        return cls((length,), (n,))

    @property
    def dim(self):
        return len(self.n)

    @property
    def h(self):
        return tuple(e / k for e, k in zip(self.extents, self.n))

    @property
    def size(self):
        """Node count N_h."""
        return int(np.prod(self.n))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def volume(self):
        return float(np.prod(self.extents))

    def axes(self):
        return [(np.arange(k) + 0.5) * hk for k, hk in zip(self.n, self.h)]

    @property
    def coordinates(self):
        """Node coordinates, shape ``(N_h, dim)``, C ordering (last axis fastest)."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)

    def face_pairs(self):
        """For each axis, the node index pairs (a, b) sharing a face, b = a + e_axis."""
        idx = np.arange(self.size).reshape(self.n)
        out = []
        for ax in range(self.dim):
            a = np.take(idx, np.arange(self.n[ax] - 1), axis=ax).reshape(-1)
            b = np.take(idx, np.arange(1, self.n[ax]), axis=ax).reshape(-1)
            out.append((a, b, self.h[ax]))
        return out

    def to_dict(self):
        return {"dim": self.dim, "extents": list(self.extents), "n": list(self.n)}


@dataclass(frozen=True, eq=False)
class Field:
    """Species densities on a mesh, ``values`` of shape ``(I, N_h)``."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.mesh.size:
            raise DomainError(f"field must have shape (I, {self.mesh.size}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def species(self):
        return self.values.shape[0]

    def mass(self):
        return integrate(self.mesh, self.values)


def _laplacian_1d(n, c):
    off = np.full(n - 1, c)
    main = np.full(n, -2.0 * c)
    main[0] = main[-1] = -c
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _axis_coefficients(h):
    """1/h**2 per axis, rounded to multiples of a common power of two.

    Every partial sum of a row then stays exactly representable, so row and
    column sums vanish bitwise whatever the summation order.
    """
    c = np.array([1.0 / (hk * hk) for hk in h])
    unit = 2.0 ** (math.floor(math.log2(c.max())) - 48)
    return np.round(c / unit) * unit


@dataclass(frozen=True, eq=False)
class NeumannLaplacian:
    """Discrete Laplacian with reflected ghost nodes (zero flux).

    Symmetric, zero row sums, ``-matrix`` positive semidefinite with the
    constants as kernel.
    """

    matrix: sp.csr_matrix
    mesh: Mesh

    @cached_property
    def _pinned(self):
        # removing node 0 leaves an SPD system whose solution is exact for mean-zero data
        K = (-self.matrix)[1:, 1:].tocsc()
        return splu(K)

    def solve_mean_zero(self, f):
        """phi with -L phi = f - mean(f) and mean(phi) = 0."""
        f = np.asarray(f, dtype=float)
        g = f - f.mean()
        phi = np.zeros_like(g)
        phi[1:] = self._pinned.solve(g[1:])
        return phi - phi.mean()

    def blocks(self, species):
        """Block-diagonal operator acting on species-major stacked unknowns."""
        cache = self.__dict__.setdefault("_blocks", {})
        if species not in cache:
            cache[species] = sp.kron(sp.identity(species, format="csr"), self.matrix, format="csr")
        return cache[species]


def neumann_laplacian(mesh):
    mats = [_laplacian_1d(k, c) for k, c in zip(mesh.n, _axis_coefficients(mesh.h))]
    if mesh.dim == 1:
        L = mats[0]
    else:
        L = sp.kron(mats[0], sp.identity(mesh.n[1]), format="csr") + sp.kron(
            sp.identity(mesh.n[0]), mats[1], format="csr"
        )
    return NeumannLaplacian(L.tocsr(), mesh)


def integrate(mesh, values):
    """Midpoint quadrature over the box; integrates along the last axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != mesh.size:
        raise DomainError(f"field has {values.shape[-1]} nodes, mesh has {mesh.size}")
    return values.sum(axis=-1) * mesh.cell_volume


def hminus1_norm(mesh, L, u):
    """Discrete H^-1 norm of u - mean(u): sqrt(int |grad phi|^2) with -L phi = u - mean(u)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.size,):
        raise DomainError(f"expected a scalar field with {mesh.size} nodes")
    if np.ptp(u) == 0:
        return 0.0
    phi = L.solve_mean_zero(u)
    if not np.all(np.isfinite(phi)):
        raise FloatingPointError("H^-1 solve failed")
    energy = mesh.cell_volume * float(phi @ (-(L.matrix @ phi)))
    return float(np.sqrt(max(energy, 0.0)))


def face_gradients(mesh, U):
    """One-sided face gradients and face averages for each axis.

    Yields ``(grad, avg)`` arrays of shape ``(F, I)``.
    """
    for a, b, h in mesh.face_pairs():
        yield (U[:, b] - U[:, a]).T / h, 0.5 * (U[:, a] + U[:, b]).T


def dissipation(mesh, model, spec, U):
    """Face quadrature of int <grad U, D2H(U) DA(U) grad U>.

    The matrix is evaluated at the arithmetic face average of U.
    """
    U = np.asarray(U, dtype=float)
    _check_state(model.species, U.T, strict=True)
    total = 0.0
    for g, xbar in face_gradients(mesh, U):
        Mf = eval_hess_entropy(spec, xbar) @ eval_DA(model, xbar)
        total += float(np.einsum("fi,fij,fj->", g, Mf, g))
    return total * mesh.cell_volume


def gradient_floor(mesh, spec, U):
    """Face quadrature of sum_i int f_i(u_i)**2 |grad u_i|**2 (same faces as dissipation)."""
    U = np.asarray(U, dtype=float)
    total = 0.0
    for g, xbar in face_gradients(mesh, U):
        total += float(np.sum(spec.f_squared(xbar) * g * g))
    return total * mesh.cell_volume


def write_field_csv(path, field, precision=17):
    mesh = field.mesh
    coords = mesh.coordinates
    names = ["x", "y"][: mesh.dim] + [f"u_{i + 1}" for i in range(field.species)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for k in range(mesh.size):
            row = list(coords[k]) + list(field.values[:, k])
            writer.writerow([f"{v:.{precision}g}" for v in row])


def read_field_csv(path, mesh):
    """Read a field written by write_field_csv onto ``mesh`` (node order must match)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader if row])
    species_cols = [k for k, name in enumerate(header) if name.startswith("u_")]
    if rows.shape[0] != mesh.size:
        raise DomainError(f"{path}: {rows.shape[0]} rows, mesh has {mesh.size} nodes")
    coord = rows[:, : mesh.dim]
    if not np.allclose(coord, mesh.coordinates, rtol=1e-9, atol=1e-12):
        raise DomainError(f"{path}: node coordinates do not match the mesh")
    return Field(rows[:, species_cols].T, mesh)
