"""Sparse matrices and load vectors of the discrete saddle-point systems.

Blocks, with xi the RT0 basis and eta the P0 basis:

    abar1[i,j] = int ((A^-1)^T xi_i, xi_j)      a1[i,j] = int (A^-1 xi_i, xi_j)
    a2[i,j]    = -int eta_i div xi_j            a6[i,j] = -int c eta_i eta_j
    a5[i,j]    = -int eta_j Q^-1 eta_i          b1[i]   = int (l1, xi_i)
    b2[i]      = int l2 eta_i

a3 and a4 (observation Gram blocks) are produced by the observation module.
All coefficient data is piecewise constant per cell, so the 3-midpoint rule
(exact to degree 2) integrates every RT0 x RT0 product exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class AssemblyError(ValueError):
    """Invalid coefficient data or mismatched spaces."""


class CoefficientFields:
    """Per-cell conductivity A (2x2 SPD) and reaction coefficient c >= 0.

    A may be given as a single 2x2 array (constant) or as (nc, 2, 2);
    c as a scalar or as (nc,). The certified ellipticity bound mu is the
    smallest eigenvalue of A over all cells.
    """

    def __init__(self, mesh, A, c):
        nc = mesh.num_cells
        A = np.asarray(A, dtype=float)
        if A.shape == (2, 2):
            A = np.broadcast_to(A, (nc, 2, 2)).copy()
        if A.shape != (nc, 2, 2):
            raise AssemblyError(f"A must be (2,2) or ({nc},2,2), got {A.shape}")
        if np.max(np.abs(A - np.transpose(A, (0, 2, 1)))) > 1e-12:
            raise AssemblyError("A must be symmetric to 1e-12")
        tr = A[:, 0, 0] + A[:, 1, 1]
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
        eig_min = 0.5 * (tr - disc)
        mu = float(eig_min.min())
        if mu <= 0.0:
            raise AssemblyError("A must be positive definite on every cell")

        c = np.asarray(c, dtype=float)
        if c.ndim == 0:
            c = np.full(nc, float(c))
        if c.shape != (nc,):
            raise AssemblyError(f"c must be scalar or ({nc},), got {c.shape}")
        if c.min() < 0.0:
            raise AssemblyError("c must be nonnegative")

        self.mesh = mesh
        self.A = A
        self.Ainv = np.linalg.inv(A)
        self.c = c
        self.mu = mu
        self.c0 = float(c.min())
        self.c1 = float(c.max())


class PriorEllipsoid:
    """Prior set for the right-hand side: (Q(f - f0), f - f0) <= epsilon1.

    Q acts by multiplication with the per-cell positive weight q, so
    membership is sum_K q (f - f0)^2 |K| and Q^-1 is division by q.
    """

    def __init__(self, mesh, f0, q, epsilon1=1.0):
        nc = mesh.num_cells
        f0 = np.asarray(f0, dtype=float)
        if f0.ndim == 0:
            f0 = np.full(nc, float(f0))
        q = np.asarray(q, dtype=float)
        if q.ndim == 0:
            q = np.full(nc, float(q))
        if f0.shape != (nc,) or q.shape != (nc,):
            raise AssemblyError("f0 and q must be scalars or per-cell arrays")
        if q.min() <= 0.0:
            raise AssemblyError("q must be positive on every cell")
        if epsilon1 <= 0.0:
            raise AssemblyError("epsilon1 must be positive")
        self.mesh = mesh
        self.f0 = f0
        self.q = q
        self.epsilon1 = float(epsilon1)

    def membership(self, f):
        """(Q(f - f0), f - f0) in L2; admissible iff <= epsilon1."""
        d = np.asarray(f) - self.f0
        return float(np.sum(self.q * d * d * self.mesh.areas))

    def apply_qinv(self, g):
        return np.asarray(g) / self.q

    def weighted_inner(self, u, v, inverse=False):
        """(Qu, v) or (Q^-1 u, v) in L2."""
        w = 1.0 / self.q if inverse else self.q
        return float(np.sum(w * np.asarray(u) * np.asarray(v) * self.mesh.areas))


@dataclass
class SaddleBlocks:
    """Assembled blocks shared by the forward and estimator systems."""

    hdiv: object
    l2: object
    abar1: sp.csr_matrix
    a1: sp.csr_matrix
    a2: sp.csr_matrix
    a5: sp.csr_matrix
    a6: sp.csr_matrix
    a3: sp.csr_matrix = None
    a4: sp.csr_matrix = None
    b1: np.ndarray = None
    b2: np.ndarray = None
    mass_p0: sp.csr_matrix = field(default=None)
    prior: object = None
    coeffs: object = None

    @property
    def n1(self):
        return self.hdiv.n1

    @property
    def n2(self):
        return self.l2.n2

    def with_observation(self, a3, a4):
        self.a3 = a3.tocsr()
        self.a4 = a4.tocsr()
        return self

    def with_loads(self, b1, b2):
        self.b1 = np.asarray(b1, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        return self


def _midpoints(mesh):
    """Edge midpoints of every cell: (nc, 3, 2), the degree-2 exact rule."""
    verts = mesh.vertices[mesh.cells]
    return 0.5 * (verts[:, [1, 2, 0], :] + verts[:, [2, 0, 1], :])


def _rt0_weighted_mass(hdiv, weight):
    """Assemble int (W xi_i, xi_j) with per-cell 2x2 weight W (3-midpoint rule)."""
    mesh = hdiv.mesh
    mids = _midpoints(mesh)
    # psi[k, m, i, :]: local basis i at midpoint m of cell k.
    psi = hdiv.scale[:, None, :, None] * (
        mids[:, :, None, :] - hdiv.opposite[:, None, :, :]
    )
    wpsi = np.einsum("kab,kmib->kmia", weight, psi)
    loc = np.einsum("kmia,kmja->kij", wpsi, psi) * (mesh.areas / 3.0)[:, None, None]
    rows = np.repeat(mesh.cell_edges, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.cell_edges, (1, 3)).reshape(-1)
    mat = sp.coo_matrix(
        (loc.reshape(-1), (rows, cols)), shape=(hdiv.n1, hdiv.n1)
    )
    return mat.tocsr()


def rt0_mass_matrix(hdiv):
    """Unweighted RT0 mass matrix int (xi_i, xi_j)."""
    eye = np.broadcast_to(np.eye(2), (hdiv.mesh.num_cells, 2, 2))
    return _rt0_weighted_mass(hdiv, eye)


def assemble_core_forms(hdiv, l2, coeffs, prior):
    """Assemble abar1, a1, a2, a5, a6 into a SaddleBlocks (a3/a4/loads unset)."""
    mesh = hdiv.mesh
    if coeffs.mesh is not mesh or prior.mesh is not mesh or l2.mesh is not mesh:
        raise AssemblyError("spaces, coefficients and prior must share one mesh")

    a1 = _rt0_weighted_mass(hdiv, coeffs.Ainv)
    abar1 = _rt0_weighted_mass(hdiv, np.transpose(coeffs.Ainv, (0, 2, 1)))

    # a2[k, e] = -int_K div xi_e = -sign |e| on the three edges of cell k.
    rows = np.repeat(np.arange(mesh.num_cells), 3)
    cols = mesh.cell_edges.reshape(-1)
    vals = -(mesh.cell_edge_signs * mesh.edge_lengths[mesh.cell_edges]).reshape(-1)
    a2 = sp.coo_matrix((vals, (rows, cols)), shape=(l2.n2, hdiv.n1)).tocsr()

    a5 = sp.diags(-mesh.areas / prior.q).tocsr()
    a6 = sp.diags(-coeffs.c * mesh.areas).tocsr()
    mass_p0 = sp.diags(mesh.areas).tocsr()
    return SaddleBlocks(hdiv, l2, abar1, a1, a2, a5, a6, mass_p0=mass_p0,
                        prior=prior, coeffs=coeffs)


def assemble_functional_loads(hdiv, l2, l1_coeffs, l2_coeffs, rt0_mass=None):
    """Load vectors b1[i] = int (l1^h, xi_i), b2[i] = l2(i) |K_i|.

    l1 is given by its RT0 interpolant coefficients, l2 by P0 values.
    """
    l1_coeffs = np.asarray(l1_coeffs, dtype=float)
    l2_coeffs = np.asarray(l2_coeffs, dtype=float)
    if l1_coeffs.shape != (hdiv.n1,):
        raise AssemblyError(f"l1 coefficients must have length {hdiv.n1}")
    if l2_coeffs.shape != (l2.n2,):
        raise AssemblyError(f"l2 coefficients must have length {l2.n2}")
    m = rt0_mass_matrix(hdiv) if rt0_mass is None else rt0_mass
    b1 = m @ l1_coeffs
    b2 = l2_coeffs * hdiv.mesh.areas
    return b1, b2
