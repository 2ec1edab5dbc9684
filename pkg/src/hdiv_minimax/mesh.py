"""Conforming simplicial triangulations of 2-D polygonal domains.

A mesh stores vertices, counterclockwise cells, globally oriented edges
(lower vertex index -> higher) and, per cell, the three incident edges with
the sign relating the cell's outward normal to the global edge normal.
This is the geometric substrate for the lowest-order H(div) space (edge
dofs) and the piecewise-constant space (cell dofs).
"""

from __future__ import annotations

import numpy as np


class MeshError(ValueError):
    """Invalid mesh data: parse failures, degenerate or nonconforming cells."""


class Mesh:
    """Immutable conforming triangulation with oriented edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
        Vertex coordinates.
    cells : (nc, 3) int array
        Vertex indices per cell, counterclockwise.
    edges : (ne, 2) int array
        Vertex index pairs, oriented low index -> high index.
    cell_edges : (nc, 3) int array
        Global edge index of the local edge opposite each local vertex.
    cell_edge_signs : (nc, 3) int array
        +1 where the cell's outward normal agrees with the global edge
        normal (tangent rotated by -90 degrees), else -1.
    boundary_edges : (nb,) int array
        Indices of edges incident to exactly one cell.
    areas : (nc,) float array
    centroids : (nc, 2) float array
    edge_lengths : (ne,) float array
    parent_cells : (nc,) int array or None
        For meshes produced by ``refine_uniform``: the coarse cell each
        fine cell came from. None for meshes built any other way.
    """

    def __init__(self, vertices, cells, parent_cells=None):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=int)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must be an (nc, 3) array")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell vertex index out of range")
        for k, cell in enumerate(cells):
            if len(set(cell)) != 3:
                raise MeshError(f"cell {k} has a repeated vertex index")

        # Normalize to counterclockwise; reject degenerate cells.
        cells = cells.copy()
        for k, (a, b, c) in enumerate(cells):
            s = _signed_area(vertices[a], vertices[b], vertices[c])
            if s < 0.0:
                cells[k] = (a, c, b)
                s = -s
            if s <= 0.0:
                raise MeshError(f"cell {k} has non-positive area")

        self.vertices = vertices
        self.cells = cells
        self.parent_cells = (
            None if parent_cells is None else np.asarray(parent_cells, dtype=int)
        )
        self._build_edges()
        self._build_geometry()
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    # ------------------------------------------------------------------
    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def h(self):
        """Mesh parameter: maximum cell diameter (longest edge)."""
        return float(self.edge_lengths.max())

    @property
    def total_area(self):
        return float(self.areas.sum())

    # ------------------------------------------------------------------
    def _build_edges(self):
        edge_ids: dict[tuple[int, int], int] = {}
        edges: list[tuple[int, int]] = []
        nc = len(self.cells)
        cell_edges = np.empty((nc, 3), dtype=int)
        cell_edge_signs = np.empty((nc, 3), dtype=int)
        incidence: list[list[int]] = []

        for k, (v0, v1, v2) in enumerate(self.cells):
            # Local edge i is opposite local vertex i, traversed CCW.
            for i, (a, b) in enumerate(((v1, v2), (v2, v0), (v0, v1))):
                key = (a, b) if a < b else (b, a)
                if key not in edge_ids:
                    edge_ids[key] = len(edges)
                    edges.append(key)
                    incidence.append([])
                e = edge_ids[key]
                cell_edges[k, i] = e
                # CCW traversal a->b has the outward normal on its right;
                # the global normal belongs to the low->high direction.
                cell_edge_signs[k, i] = 1 if a < b else -1
                incidence[e].append(k)

        for e, inc in enumerate(incidence):
            if len(inc) > 2:
                raise MeshError(f"edge {e} shared by more than two cells")
            if len(inc) == 2:
                k0, k1 = inc
                s0 = cell_edge_signs[k0][cell_edges[k0] == e][0]
                s1 = cell_edge_signs[k1][cell_edges[k1] == e][0]
                if s0 * s1 != -1:
                    raise MeshError(
                        f"edge {e}: incident cells traverse it in the same "
                        "direction (nonconforming connectivity)"
                    )

        self.edges = np.array(edges, dtype=int).reshape(-1, 2)
        self.cell_edges = cell_edges
        self.cell_edge_signs = cell_edge_signs
        self.boundary_edges = np.array(
            [e for e, inc in enumerate(incidence) if len(inc) == 1], dtype=int
        )
        self.edge_cells = incidence
        for arr in (self.edges, self.cell_edges, self.cell_edge_signs,
                    self.boundary_edges):
            arr.setflags(write=False)

    def _build_geometry(self):
        v = self.vertices
        c = self.cells
        p0, p1, p2 = v[c[:, 0]], v[c[:, 1]], v[c[:, 2]]
        self.areas = 0.5 * (
            (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
            - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
        )
        self.centroids = (p0 + p1 + p2) / 3.0
        ev = v[self.edges[:, 1]] - v[self.edges[:, 0]]
        self.edge_lengths = np.hypot(ev[:, 0], ev[:, 1])
        for arr in (self.areas, self.centroids, self.edge_lengths):
            arr.setflags(write=False)

    # ------------------------------------------------------------------
    def edge_midpoints(self):
        v = self.vertices
        return 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])

    def edge_normals(self):
        """Unit normals of the global edge orientation (tangent rotated -90)."""
        v = self.vertices
        t = v[self.edges[:, 1]] - v[self.edges[:, 0]]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        return n / self.edge_lengths[:, None]

    def cell_vertex_coords(self, k):
        return self.vertices[self.cells[k]]


def _signed_area(p0, p1, p2):
    return 0.5 * (
        (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    )


def generate_unit_square(n):
    """Uniform triangulation of [0,1]^2 with (n+1)^2 vertices and 2n^2 cells.

    Each grid square is split along its (low,low)-(high,high) diagonal.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    vid = lambda i, j: j * (n + 1) + i
    vertices = [(x, y) for y in xs for x in xs]
    cells = []
    for j in range(n):
        for i in range(n):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return Mesh(vertices, cells)


def refine_uniform(mesh):
    """Split each cell into 4 similar children through edge midpoints.

    Children of coarse cell k are the fine cells 4k..4k+3 (three corner
    cells then the central one); the mapping is also recorded in
    ``parent_cells``.
    """
    nv = mesh.num_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints()])
    mid = lambda e: nv + e
    cells = []
    parents = []
    for k, (v0, v1, v2) in enumerate(mesh.cells):
        e0, e1, e2 = mesh.cell_edges[k]  # opposite v0, v1, v2
        m12, m20, m01 = mid(e0), mid(e1), mid(e2)
        cells.extend(
            [(v0, m01, m20), (v1, m12, m01), (v2, m20, m12), (m01, m12, m20)]
        )
        parents.extend([k, k, k, k])
    return Mesh(vertices, cells, parent_cells=parents)


def load_triangle_mesh(node_path, ele_path):
    """Load a Triangle-format .node/.ele pair.

    .node header: ``<#vertices> 2 0 <#markers>``; lines ``index x y [marker]``.
    .ele  header: ``<#cells> 3 0``; lines ``index v1 v2 v3``. Vertex indices
    may be 0- or 1-based; the base is detected from the first index seen.
    """
    def tokens(path):
        out = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    out.append(line.split())
        return out

    node_lines = tokens(node_path)
    if not node_lines:
        raise MeshError(f"{node_path}: empty file")
    hdr = node_lines[0]
    if len(hdr) != 4:
        raise MeshError(f"{node_path}: malformed header {' '.join(hdr)!r}")
    try:
        nv, dim, nattr, nmark = (int(t) for t in hdr)
    except ValueError as exc:
        raise MeshError(f"{node_path}: malformed header") from exc
    if dim != 2 or nattr != 0 or nmark not in (0, 1):
        raise MeshError(f"{node_path}: unsupported header {' '.join(hdr)!r}")
    body = node_lines[1:]
    if len(body) != nv:
        raise MeshError(f"{node_path}: header declares {nv} vertices, "
                        f"found {len(body)}")
    base = None
    coords = {}
    for toks in body:
        if len(toks) != 3 + nmark:
            raise MeshError(f"{node_path}: bad vertex line {' '.join(toks)!r}")
        try:
            idx = int(toks[0])
            x, y = float(toks[1]), float(toks[2])
        except ValueError as exc:
            raise MeshError(f"{node_path}: bad vertex line") from exc
        if base is None:
            base = idx
            if base not in (0, 1):
                raise MeshError(f"{node_path}: first vertex index must be 0 or 1")
        coords[idx - base] = (x, y)
    if sorted(coords) != list(range(nv)):
        raise MeshError(f"{node_path}: vertex indices are not contiguous")
    vertices = [coords[i] for i in range(nv)]

    ele_lines = tokens(ele_path)
    if not ele_lines:
        raise MeshError(f"{ele_path}: empty file")
    hdr = ele_lines[0]
    if len(hdr) != 3:
        raise MeshError(f"{ele_path}: malformed header {' '.join(hdr)!r}")
    try:
        ncell, npercell, nattr = (int(t) for t in hdr)
    except ValueError as exc:
        raise MeshError(f"{ele_path}: malformed header") from exc
    if npercell != 3 or nattr != 0:
        raise MeshError(f"{ele_path}: unsupported header {' '.join(hdr)!r}")
    body = ele_lines[1:]
    if len(body) != ncell:
        raise MeshError(f"{ele_path}: header declares {ncell} cells, "
                        f"found {len(body)}")
    cells = []
    for toks in body:
        if len(toks) != 4:
            raise MeshError(f"{ele_path}: bad cell line {' '.join(toks)!r}")
        try:
            vs = [int(t) for t in toks[1:]]
        except ValueError as exc:
            raise MeshError(f"{ele_path}: bad cell line") from exc
        cells.append([v - base for v in vs])
    cells = np.asarray(cells, dtype=int)
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise MeshError(f"{ele_path}: cell vertex index out of range")
    return Mesh(vertices, cells)
