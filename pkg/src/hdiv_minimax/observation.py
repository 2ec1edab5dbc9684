"""Observation operators, their adjoints, composed Gram blocks, and the
noise admissibility (trace) conditions.

Observations live in finite products of subdomain L2 spaces, one factor per
channel, where the Riesz map is the identity. A flux channel maps the flux
to per-cell 2-vectors on its subdomain; a scalar channel maps the state to
per-cell values. Each channel either restricts pointwise (IDENTITY) or
applies an integral kernel given as constant blocks per cell pair:

    (C j)(T) = sum_S K[T, S] jbar(S) |S|,

with jbar the cell average. Everything an estimator needs is expressed
through the per-channel operator matrix G and the weighted mass W
(weight times cell area): the Gram blocks are G^T W G, the data load is
G^T W y, and the adjoint load of a gain element u is G^T M u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ObservationError(ValueError):
    """Channel/mesh mismatch or invalid channel data."""


FLUX = "flux"
SCALAR = "scalar"


@dataclass
class ObservationData:
    """Per-channel observation values: (nc, 2) arrays for flux channels,
    (nc,) arrays for scalar channels. Also used for noise realizations and
    gain elements."""

    y1: list = field(default_factory=list)
    y2: list = field(default_factory=list)

    def copy(self):
        return ObservationData([a.copy() for a in self.y1],
                               [a.copy() for a in self.y2])

    def __add__(self, other):
        return ObservationData(
            [a + b for a, b in zip(self.y1, other.y1, strict=True)],
            [a + b for a, b in zip(self.y2, other.y2, strict=True)],
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, s):
        return ObservationData([s * a for a in self.y1],
                               [s * a for a in self.y2])


class Channel:
    """One observation channel on a cell subset of the mesh."""

    def __init__(self, group, cells, kernel, weight, mesh):
        if group not in (FLUX, SCALAR):
            raise ObservationError(f"unknown channel group {group!r}")
        cells = np.asarray(cells, dtype=int)
        if cells.size == 0:
            raise ObservationError("channel subdomain is empty")
        if cells.min() < 0 or cells.max() >= mesh.num_cells:
            raise ObservationError("channel subdomain not contained in mesh")
        if len(np.unique(cells)) != cells.size:
            raise ObservationError("channel subdomain has repeated cells")
        self.group = group
        self.cells = cells
        nc = cells.size
        self.areas = mesh.areas[cells]

        if kernel is None or (isinstance(kernel, str) and kernel == "identity"):
            self.kernel = None
        else:
            kernel = np.asarray(kernel, dtype=float)
            want = (nc, nc) if group == SCALAR else (nc, nc, 2, 2)
            if kernel.shape != want:
                raise ObservationError(
                    f"kernel shape {kernel.shape} does not match subdomain "
                    f"(want {want})"
                )
            self.kernel = kernel

        weight = np.asarray(weight, dtype=float)
        if group == SCALAR:
            if weight.ndim == 0:
                weight = np.full(nc, float(weight))
            if weight.shape != (nc,):
                raise ObservationError("scalar weight must be scalar or per-cell")
            if weight.min() < 0.0:
                raise ObservationError("weights must be nonnegative")
        else:
            if weight.ndim == 0:
                weight = weight * np.eye(2)
            if weight.shape == (2, 2):
                weight = np.broadcast_to(weight, (nc, 2, 2)).copy()
            if weight.shape != (nc, 2, 2):
                raise ObservationError("flux weight must be scalar, 2x2 or per-cell")
            if np.max(np.abs(weight - np.transpose(weight, (0, 2, 1)))) > 1e-12:
                raise ObservationError("flux weights must be symmetric")
            tr = weight[:, 0, 0] + weight[:, 1, 1]
            det = np.linalg.det(weight)
            if np.any(tr < -1e-14) or np.any(det < -1e-14):
                raise ObservationError("flux weights must be positive semidefinite")
        self.weight = weight

    @property
    def size(self):
        """Flat dof count of the channel's observation space."""
        return self.cells.size * (2 if self.group == FLUX else 1)


class ObservationSetup:
    """All channels on a mesh, with discretized operator matrices.

    Channels are given as (group, cells, kernel, weight) tuples or Channel
    objects; epsilon2/epsilon3 are fixed at 1 (weights carry any scaling).
    """

    def __init__(self, hdiv, l2, channels=(), epsilon2=1.0, epsilon3=1.0):
        self.hdiv = hdiv
        self.l2 = l2
        self.mesh = hdiv.mesh
        self.epsilon2 = float(epsilon2)
        self.epsilon3 = float(epsilon3)
        self.flux_channels = []
        self.scalar_channels = []
        for ch in channels:
            if not isinstance(ch, Channel):
                ch = Channel(ch[0], ch[1], ch[2], ch[3], self.mesh)
            (self.flux_channels if ch.group == FLUX else self.scalar_channels
             ).append(ch)
        self._flux_ops = [self._flux_operator(ch) for ch in self.flux_channels]
        self._scalar_ops = [self._scalar_operator(ch)
                            for ch in self.scalar_channels]
        self.alpha = self._alpha()

    # -- operator construction -----------------------------------------
    def _cell_average_rows(self, cells):
        """Sparse map RT0 coefficients -> stacked (x, y) cell averages."""
        avg = self.hdiv.cell_average_map()          # (nc_all, 3, 2)
        edges = self.mesh.cell_edges
        rows, cols, vals = [], [], []
        for t, k in enumerate(cells):
            for i in range(3):
                for comp in range(2):
                    rows.append(2 * t + comp)
                    cols.append(edges[k, i])
                    vals.append(avg[k, i, comp])
        return sp.coo_matrix(
            (vals, (rows, cols)), shape=(2 * len(cells), self.hdiv.n1)
        ).tocsr()

    def _flux_operator(self, ch):
        g = self._cell_average_rows(ch.cells)
        if ch.kernel is not None:
            nc = ch.cells.size
            blocks = ch.kernel * ch.areas[None, :, None, None]
            dense = blocks.transpose(0, 2, 1, 3).reshape(2 * nc, 2 * nc)
            g = sp.csr_matrix(dense) @ g
        return g

    def _scalar_operator(self, ch):
        nc = ch.cells.size
        rows = np.arange(nc)
        g = sp.coo_matrix(
            (np.ones(nc), (rows, ch.cells)), shape=(nc, self.l2.n2)
        ).tocsr()
        if ch.kernel is not None:
            g = sp.csr_matrix(ch.kernel * ch.areas[None, :]) @ g
        return g

    def _alpha(self):
        """Certified lower bound on the eigenvalues of the inverse weights."""
        top = 0.0
        for ch in self.flux_channels:
            tr = ch.weight[:, 0, 0] + ch.weight[:, 1, 1]
            det = np.linalg.det(ch.weight)
            lam = 0.5 * (tr + np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
            if lam.size:
                top = max(top, float(lam.max()))
        for ch in self.scalar_channels:
            if ch.weight.size:
                top = max(top, float(ch.weight.max()))
        return 1.0 / top if top > 0.0 else float("inf")

    # -- applying operators ----------------------------------------------
    def apply_flux(self, j_coeffs):
        """C1 applied to an RT0 coefficient vector, per channel."""
        out = []
        for g in self._flux_ops:
            out.append((g @ np.asarray(j_coeffs)).reshape(-1, 2))
        return out

    def apply_scalar(self, phi_coeffs):
        return [g @ np.asarray(phi_coeffs) for g in self._scalar_ops]

    def zero_data(self):
        return ObservationData(
            [np.zeros((ch.cells.size, 2)) for ch in self.flux_channels],
            [np.zeros(ch.cells.size) for ch in self.scalar_channels],
        )

    def validate_shapes(self, data):
        if len(data.y1) != len(self.flux_channels) or len(data.y2) != len(
            self.scalar_channels
        ):
            raise ObservationError("channel count mismatch")
        for a, ch in zip(data.y1, self.flux_channels):
            if a.shape != (ch.cells.size, 2):
                raise ObservationError("flux channel shape mismatch")
        for a, ch in zip(data.y2, self.scalar_channels):
            if a.shape != (ch.cells.size,):
                raise ObservationError("scalar channel shape mismatch")

    # -- inner products ----------------------------------------------------
    def inner(self, u, v):
        """Plain H inner product: sum over channels and cells of u.v |cell|."""
        total = 0.0
        for a, b, ch in zip(u.y1, v.y1, self.flux_channels, strict=True):
            total += float(np.sum(np.sum(a * b, axis=1) * ch.areas))
        for a, b, ch in zip(u.y2, v.y2, self.scalar_channels, strict=True):
            total += float(np.sum(a * b * ch.areas))
        return total

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def weighted_inner(self, u, v):
        """(Q~ u, v)_H with the channel weights."""
        total = 0.0
        for a, b, ch in zip(u.y1, v.y1, self.flux_channels, strict=True):
            wa = np.einsum("cij,cj->ci", ch.weight, a)
            total += float(np.sum(np.sum(wa * b, axis=1) * ch.areas))
        for a, b, ch in zip(u.y2, v.y2, self.scalar_channels, strict=True):
            total += float(np.sum(ch.weight * a * b * ch.areas))
        return total

    def inverse_weighted_quadratic(self, u):
        """(Q~^-1 u, u)_H; infinite if u is nonzero on a zero-weight cell."""
        total = 0.0
        for a, ch in zip(u.y1, self.flux_channels, strict=True):
            det = np.linalg.det(ch.weight)
            for t in range(ch.cells.size):
                if det[t] > 0.0:
                    sol = np.linalg.solve(ch.weight[t], a[t])
                    total += float(sol @ a[t]) * ch.areas[t]
                elif np.any(np.abs(a[t]) > 0.0):
                    return float("inf")
        for a, ch in zip(u.y2, self.scalar_channels, strict=True):
            pos = ch.weight > 0.0
            if np.any(np.abs(a[~pos]) > 0.0):
                return float("inf")
            total += float(np.sum(a[pos] ** 2 / ch.weight[pos] * ch.areas[pos]))
        return total

    def apply_inverse_weight(self, u):
        """Q~^-1 u per cell; zero-weight cells require (and return) zeros."""
        out = self.zero_data()
        for k, (a, ch) in enumerate(zip(u.y1, self.flux_channels, strict=True)):
            det = np.linalg.det(ch.weight)
            for t in range(ch.cells.size):
                if det[t] > 0.0:
                    out.y1[k][t] = np.linalg.solve(ch.weight[t], a[t])
                elif np.any(np.abs(a[t]) > 0.0):
                    raise ObservationError("inverse weight of a zero-weight cell")
        for k, (a, ch) in enumerate(zip(u.y2, self.scalar_channels, strict=True)):
            pos = ch.weight > 0.0
            if np.any(np.abs(a[~pos]) > 0.0):
                raise ObservationError("inverse weight of a zero-weight cell")
            out.y2[k][pos] = a[pos] / ch.weight[pos]
        return out

    # -- gains, loads, Gram blocks -----------------------------------------
    def gains(self, p1, p2):
        """u1 = Q~1 C1 p1 and u2 = Q~2 C2 p2 as ObservationData."""
        u = ObservationData()
        for vals, ch in zip(self.apply_flux(p1), self.flux_channels):
            u.y1.append(np.einsum("cij,cj->ci", ch.weight, vals))
        for vals, ch in zip(self.apply_scalar(p2), self.scalar_channels):
            u.y2.append(ch.weight * vals)
        return u

    def adjoint_load(self, u, weighted=False):
        """(C1^t u1 tested against RT0, C2^t u2 tested against P0).

        weighted=True inserts Q~ first, giving the data loads G^T W y.
        """
        self.validate_shapes(u)
        b1 = np.zeros(self.hdiv.n1)
        b2 = np.zeros(self.l2.n2)
        for a, g, ch in zip(u.y1, self._flux_ops, self.flux_channels):
            vals = np.einsum("cij,cj->ci", ch.weight, a) if weighted else a
            b1 += g.T @ (vals * ch.areas[:, None]).reshape(-1)
        for a, g, ch in zip(u.y2, self._scalar_ops, self.scalar_channels):
            vals = ch.weight * a if weighted else a
            b2 += g.T @ (vals * ch.areas)
        return b1, b2

    def gram_blocks(self):
        """a3 = sum G1^T W1 G1 and a4 = sum G2^T W2 G2, sparse symmetric PSD."""
        a3 = sp.csr_matrix((self.hdiv.n1, self.hdiv.n1))
        a4 = sp.csr_matrix((self.l2.n2, self.l2.n2))
        for g, ch in zip(self._flux_ops, self.flux_channels):
            w = sp.block_diag(
                [ch.weight[t] * ch.areas[t] for t in range(ch.cells.size)],
                format="csr",
            )
            a3 = a3 + g.T @ w @ g
        for g, ch in zip(self._scalar_ops, self.scalar_channels):
            w = sp.diags(ch.weight * ch.areas)
            a4 = a4 + (g.T @ w @ g).tocsr()
        return a3.tocsr(), a4.tocsr()

    # -- dense oracles (tests) ----------------------------------------------
    def dense_flux_operator(self):
        """Stacked dense C1 matrix (all flux channels), for oracle checks."""
        if not self._flux_ops:
            return np.zeros((0, self.hdiv.n1))
        return np.vstack([g.toarray() for g in self._flux_ops])

    def dense_scalar_operator(self):
        if not self._scalar_ops:
            return np.zeros((0, self.l2.n2))
        return np.vstack([g.toarray() for g in self._scalar_ops])

    # -- admissibility -------------------------------------------------------
    def trace_integrals(self, flux_diagonals, scalar_diagonals):
        """Trace conditions: sum int Sp(Q~ R~(x,x)) dx per channel group.

        flux_diagonals: per flux channel, (nc, 2, 2) covariance diagonals;
        scalar_diagonals: per scalar channel, (nc,) variances.
        """
        t1 = 0.0
        for r, ch in zip(flux_diagonals, self.flux_channels, strict=True):
            qr = np.einsum("cij,cjk->cik", ch.weight, np.asarray(r, dtype=float))
            t1 += float(np.sum((qr[:, 0, 0] + qr[:, 1, 1]) * ch.areas))
        t2 = 0.0
        for r, ch in zip(scalar_diagonals, self.scalar_channels, strict=True):
            t2 += float(np.sum(ch.weight * np.asarray(r, dtype=float) * ch.areas))
        return t1, t2


def apply_observation(setup, state, noise=None):
    """Observe a field pair: y = C(state) + noise (noise omitted -> exact)."""
    y = ObservationData(setup.apply_flux(state.j), setup.apply_scalar(state.phi))
    if noise is not None:
        setup.validate_shapes(noise)
        y = y + noise
    return y


def compose_tilde_kernels(setup, hdiv, l2):
    """Observation Gram blocks a3 (flux) and a4 (scalar) for the estimator."""
    if setup.hdiv is not hdiv or setup.l2 is not l2:
        raise ObservationError("setup was built on different spaces")
    return setup.gram_blocks()


@dataclass
class AdmissibilityReport:
    trace_flux: float
    trace_scalar: float
    admissible_flux: bool
    admissible_scalar: bool

    @property
    def admissible(self):
        return self.admissible_flux and self.admissible_scalar


def check_admissibility(setup, noise_model):
    """Evaluate the two trace integrals for a noise model's covariance.

    The model must expose covariance_diagonals(setup) -> (flux list, scalar
    list) of per-cell covariance diagonals R~(x, x).
    """
    flux_diag, scalar_diag = noise_model.covariance_diagonals(setup)
    t1, t2 = setup.trace_integrals(flux_diag, scalar_diag)
    tol = 1e-12
    return AdmissibilityReport(
        trace_flux=t1,
        trace_scalar=t2,
        admissible_flux=t1 <= setup.epsilon2 + tol,
        admissible_scalar=t2 <= setup.epsilon3 + tol,
    )
