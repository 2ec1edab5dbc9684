"""Lowest-order Raviart-Thomas and piecewise-constant spaces on a triangulation.

On cell K with area |K|, the basis function attached to edge e (length |e|,
opposite vertex p) is

    psi_e(x) = sign * |e| / (2|K|) * (x - p),     div psi_e = sign * |e| / |K|,

where sign relates the cell's outward normal on e to the global edge normal.
A coefficient vector is interpreted against this basis, so the degree of
freedom carried by edge e is the mean normal flux (1/|e|) int_e q.n ds taken
with respect to the global normal: the mean flux of psi_e through e' is the
Kronecker delta, and the normal component is single-valued across interior
edges, which is H(div) conformity.

The scalar space is spanned by cell indicators; dof i is the value on cell i.
"""

from __future__ import annotations

import numpy as np

# 2-point Gauss positions on [0,1]; exact for cubics, used for edge flux dofs.
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class HDivSpace:
    """RT0 space: one dof per edge (mean normal flux, global orientation)."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.n1 = mesh.num_edges
        # Opposite vertex coordinates per (cell, local edge).
        verts = mesh.vertices[mesh.cells]          # (nc, 3, 2)
        self.opposite = verts                      # local edge i is opposite vertex i
        self.scale = (
            mesh.cell_edge_signs
            * mesh.edge_lengths[mesh.cell_edges]
            / (2.0 * mesh.areas[:, None])
        )                                          # (nc, 3)
        self.div = (
            mesh.cell_edge_signs
            * mesh.edge_lengths[mesh.cell_edges]
            / mesh.areas[:, None]
        )                                          # (nc, 3), constant per cell

    def basis_at(self, k, x):
        """Values of the three local basis functions of cell k at point x.

        Returns a (3, 2) array ordered by local edge (opposite local vertex).
        """
        x = np.asarray(x, dtype=float)
        return self.scale[k][:, None] * (x[None, :] - self.opposite[k])

    def evaluate(self, coeffs, k, x):
        """Evaluate the RT0 field with the given coefficients at x in cell k."""
        local = np.asarray(coeffs)[self.mesh.cell_edges[k]]
        return local @ self.basis_at(k, x)

    def cell_divergence(self, coeffs):
        """Per-cell divergence of an RT0 coefficient vector."""
        local = np.asarray(coeffs)[self.mesh.cell_edges]
        return np.einsum("ki,ki->k", local, self.div)

    def cell_average_map(self):
        """Sparse-structured map from coefficients to per-cell average vectors.

        Returns (rows shape (nc, 3, 2)): entry [k, i, :] is the cell average
        of local basis i on cell k; the RT0 functions are affine so the
        centroid value is the average.
        """
        cen = self.mesh.centroids
        return self.scale[:, :, None] * (cen[:, None, :] - self.opposite)

    def interpolate(self, field):
        """Mean-normal-flux interpolation of a vector field (2-point Gauss)."""
        mesh = self.mesh
        v0 = mesh.vertices[mesh.edges[:, 0]]
        v1 = mesh.vertices[mesh.edges[:, 1]]
        normals = mesh.edge_normals()
        coeffs = np.zeros(self.n1)
        for s, w in zip(_GAUSS2, (0.5, 0.5)):
            pts = (1.0 - s) * v0 + s * v1
            vals = np.asarray([field(p) for p in pts], dtype=float)
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError("vector field returned non-finite values")
            coeffs += w * np.einsum("ej,ej->e", vals, normals)
        return coeffs

    def l2_norm(self, coeffs, mass=None):
        from .assembly import rt0_mass_matrix

        m = rt0_mass_matrix(self) if mass is None else mass
        c = np.asarray(coeffs)
        return float(np.sqrt(max(c @ (m @ c), 0.0)))

    def hdiv_norm(self, coeffs, mass=None):
        """(||q||^2 + ||div q||^2)^(1/2) with cell-wise constant divergence."""
        d = self.cell_divergence(coeffs)
        div2 = float(np.sum(d * d * self.mesh.areas))
        return float(np.sqrt(self.l2_norm(coeffs, mass) ** 2 + div2))


class L2Space:
    """P0 space: one dof per cell, basis = cell indicators."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.n2 = mesh.num_cells

    def interpolate(self, field):
        """Centroid-value interpolation of a scalar field."""
        vals = np.asarray([field(p) for p in self.mesh.centroids], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("scalar field returned non-finite values")
        return vals

    def l2_norm(self, coeffs):
        c = np.asarray(coeffs)
        return float(np.sqrt(np.sum(c * c * self.mesh.areas)))

    def inner(self, u, v):
        return float(np.sum(np.asarray(u) * np.asarray(v) * self.mesh.areas))


def build_spaces(mesh):
    """Construct the RT0/P0 pair on a mesh."""
    return HDivSpace(mesh), L2Space(mesh)


def interpolate_fields(hdiv, l2, vector_field, scalar_field):
    """Interpolate a vector and a scalar field into RT0 and P0 coefficients."""
    return hdiv.interpolate(vector_field), l2.interpolate(scalar_field)
