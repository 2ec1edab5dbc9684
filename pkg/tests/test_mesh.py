import numpy as np
import pytest

from hdiv_minimax.mesh import (
    Mesh,
    MeshError,
    generate_unit_square,
    load_triangle_mesh,
    refine_uniform,
)


def shoelace(vertices, cells):
    """Independent polygon-area oracle summed over cells."""
    total = 0.0
    for a, b, c in cells:
        (x0, y0), (x1, y1), (x2, y2) = vertices[a], vertices[b], vertices[c]
        total += 0.5 * abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    return total


def test_smallest_square_mesh_counts():
    m = generate_unit_square(1)
    assert m.num_vertices == 4
    assert m.num_cells == 2
    assert m.num_edges == 5
    assert len(m.boundary_edges) == 4
    assert m.h == pytest.approx(np.sqrt(2.0))


def test_euler_formula_n2():
    # V - E + F = 1 for a triangulation of a disk-like region.
    m = generate_unit_square(2)
    assert m.num_vertices == 9
    assert m.num_cells == 8
    assert m.num_vertices - m.num_edges + m.num_cells == 1
    assert m.num_edges == 16


@pytest.mark.parametrize("n", [1, 2, 4])
def test_tiling_identity(n):
    m = generate_unit_square(n)
    assert abs(m.total_area - 1.0) <= 1e-12
    assert m.total_area == pytest.approx(shoelace(m.vertices, m.cells), abs=1e-12)


def test_zero_n_rejected():
    with pytest.raises(MeshError):
        generate_unit_square(0)


def test_positive_areas_and_ccw():
    m = generate_unit_square(3)
    assert np.all(m.areas > 0)


def test_interior_edge_sign_consistency():
    m = generate_unit_square(3)
    boundary = set(m.boundary_edges.tolist())
    for e, inc in enumerate(m.edge_cells):
        signs = [
            int(m.cell_edge_signs[k][m.cell_edges[k] == e][0]) for k in inc
        ]
        if e in boundary:
            assert len(signs) == 1
        else:
            assert len(signs) == 2
            assert signs[0] * signs[1] == -1


def test_conformity_pairwise():
    m = generate_unit_square(2)
    edge_set = {tuple(e) for e in m.edges.tolist()}
    for a in range(m.num_cells):
        for b in range(a + 1, m.num_cells):
            shared = set(m.cells[a]) & set(m.cells[b])
            assert len(shared) <= 2
            if len(shared) == 2:
                assert tuple(sorted(shared)) in edge_set


def test_refine_counts_and_h():
    m = generate_unit_square(1)
    r = refine_uniform(m)
    assert r.num_cells == 8
    assert r.h == pytest.approx(np.sqrt(2.0) / 2.0)
    assert abs(r.total_area - m.total_area) <= 1e-12
    assert r.parent_cells.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_refine_twice_vertex_set_matches_n4_grid():
    rr = refine_uniform(refine_uniform(generate_unit_square(1)))
    got = {tuple(np.round(v, 12)) for v in rr.vertices}
    want = {tuple(np.round(v, 12)) for v in generate_unit_square(4).vertices}
    assert got == want


def test_refine_preserves_area_deep():
    m = generate_unit_square(2)
    for _ in range(3):
        m = refine_uniform(m)
    assert abs(m.total_area - 1.0) <= 1e-12


# -- Triangle-format files ------------------------------------------------
def write_files(tmp_path, node_text, ele_text):
    node = tmp_path / "m.node"
    ele = tmp_path / "m.ele"
    node.write_text(node_text)
    ele.write_text(ele_text)
    return str(node), str(ele)


def test_load_two_cell_square(tmp_path):
    node, ele = write_files(
        tmp_path,
        "4 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 1.0 1.0\n3 0.0 1.0\n",
        "2 3 0\n0 0 1 2\n1 0 2 3\n",
    )
    m = load_triangle_mesh(node, ele)
    ref = generate_unit_square(1)
    assert m.num_cells == ref.num_cells
    assert m.num_edges == ref.num_edges
    assert abs(m.total_area - 1.0) <= 1e-12
    got = {tuple(np.round(v, 12)) for v in m.vertices}
    want = {tuple(np.round(v, 12)) for v in ref.vertices}
    assert got == want


def test_load_one_based_indices(tmp_path):
    node, ele = write_files(
        tmp_path,
        "3 2 0 1\n1 0.0 0.0 1\n2 1.0 0.0 1\n3 0.0 1.0 1\n",
        "1 3 0\n1 1 2 3\n",
    )
    m = load_triangle_mesh(node, ele)
    assert m.num_cells == 1
    assert m.total_area == pytest.approx(0.5, abs=1e-12)


def test_load_l_shaped_three_cells(tmp_path):
    # Unit square minus the top triangle of the upper-right half: area 3/4.
    node, ele = write_files(
        tmp_path,
        "5 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 0.5 0.5\n3 1.0 1.0\n4 0.0 1.0\n",
        "3 3 0\n0 0 1 2\n1 1 3 2\n2 0 2 4\n",
    )
    m = load_triangle_mesh(node, ele)
    assert abs(m.total_area - 0.75) <= 1e-12
    assert m.total_area == pytest.approx(shoelace(m.vertices, m.cells), abs=1e-12)


def test_load_reorders_clockwise_cells(tmp_path):
    node, ele = write_files(
        tmp_path,
        "3 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 0.0 1.0\n",
        "1 3 0\n0 0 2 1\n",
    )
    m = load_triangle_mesh(node, ele)
    assert m.areas[0] > 0


def test_load_repeated_vertex_rejected(tmp_path):
    node, ele = write_files(
        tmp_path,
        "3 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 0.0 1.0\n",
        "1 3 0\n0 0 1 1\n",
    )
    with pytest.raises(MeshError, match="repeated"):
        load_triangle_mesh(node, ele)


def test_load_malformed_header(tmp_path):
    node, ele = write_files(tmp_path, "4 2 0\n", "1 3 0\n0 0 1 2\n")
    with pytest.raises(MeshError, match="header"):
        load_triangle_mesh(node, ele)


def test_load_inconsistent_counts(tmp_path):
    node, ele = write_files(
        tmp_path,
        "4 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 0.0 1.0\n",
        "1 3 0\n0 0 1 2\n",
    )
    with pytest.raises(MeshError, match="declares"):
        load_triangle_mesh(node, ele)


def test_nonconforming_connectivity_rejected():
    # Three triangles sharing one edge cannot be a planar conforming mesh.
    vertices = [(0, 0), (1, 0), (0, 1), (1, 1), (-1, 1)]
    cells = [(0, 1, 2), (1, 3, 2), (0, 1, 4)]
    with pytest.raises(MeshError):
        Mesh(vertices, cells)


def test_degenerate_cell_rejected():
    with pytest.raises(MeshError, match="area"):
        Mesh([(0, 0), (1, 0), (2, 0)], [(0, 1, 2)])
