import numpy as np
import pytest

from hotrkit.mesh import (
    CrackSpec,
    build_mesh,
    element_jacobians,
    export_csv,
    insert_crack,
)


def test_reference_grid_counts():
    mesh = build_mesh(1200.0, 200.0, 120, 20)
    assert mesh.n_elements == 2400
    assert mesh.n_nodes == 2541


@pytest.mark.parametrize("dims,expected", [
    ((10.0, 10.0, 1, 1), (1, 4)),
    ((100.0, 50.0, 4, 2), (8, 15)),
])
def test_small_grid_counts(dims, expected):
    mesh = build_mesh(*dims)
    assert (mesh.n_elements, mesh.n_nodes) == expected


@pytest.mark.parametrize("bad", [
    (0.0, 10.0, 2, 2), (10.0, -1.0, 2, 2), (10.0, 10.0, 0, 2),
])
def test_invalid_dimensions_rejected(bad):
    with pytest.raises(ValueError):
        build_mesh(*bad)


def test_all_jacobians_positive():
    mesh = build_mesh(1200.0, 200.0, 120, 20)
    assert np.all(element_jacobians(mesh) > 0)


def test_normalized_location_matches_grid_lines():
    # node-line index i maps to 2 i / nx - 1 on the 120-element grid
    for loc, expected in [(50, -1 / 6), (13, 13 / 60 - 1), (29, 29 / 60 - 1),
                          (45, -0.25), (90, 0.5)]:
        assert CrackSpec(loc, 10).normalized_location(120) == pytest.approx(expected)


def test_depth_mapping():
    assert CrackSpec(50, 5).depth_elems(20) == 1
    assert CrackSpec(50, 10).depth_elems(20) == 2
    assert CrackSpec(50, 15).depth_elems(20) == 3
    with pytest.raises(ValueError):
        CrackSpec(50, 7).depth_elems(20)   # not a whole element row count


def test_crack_split_structure():
    mesh = build_mesh(1200.0, 200.0, 120, 20)
    cracked = insert_crack(mesh, CrackSpec(50, 15))
    assert cracked.split_pairs.shape == (3, 2)
    assert cracked.n_nodes == mesh.n_nodes + 3
    # the tip node one row below stays shared by elements on both sides
    tip = cracked.crack_tip_node
    assert tip == mesh.node_index(50, 17)
    left_elem = 17 * 120 + 49
    right_elem = 17 * 120 + 50
    assert tip in cracked.elements[left_elem]
    assert tip in cracked.elements[right_elem]
    # right-side elements now reference the duplicates, left-side the originals
    for (orig, new) in cracked.split_pairs:
        assert not np.any(cracked.elements[:, 1:3] == new)  # right corners of left elems
        assert np.any(cracked.elements == new)
        assert np.any(cracked.elements == orig)
    assert np.all(element_jacobians(cracked) > 0)
    # coordinates coincide
    for orig, new in cracked.split_pairs:
        assert np.allclose(cracked.nodes[orig], cracked.nodes[new])


def test_through_crack_rejected():
    with pytest.raises(ValueError, match="through"):
        CrackSpec(50, 100).validate(120, 20)


def test_boundary_crack_line_rejected():
    mesh = build_mesh(1200.0, 200.0, 120, 20)
    for loc in (0, 120, 121):
        with pytest.raises(ValueError):
            insert_crack(mesh, CrackSpec(loc, 15))


def test_csv_export(tmp_path):
    mesh = build_mesh(100.0, 50.0, 4, 2)
    nodes = tmp_path / "nodes.csv"
    elements = tmp_path / "elements.csv"
    export_csv(mesh, nodes, elements, header_lines=["config_sha256: abc"])
    node_lines = [l for l in nodes.read_text().splitlines()
                  if l and not l.startswith("#")]
    elem_lines = [l for l in elements.read_text().splitlines()
                  if l and not l.startswith("#")]
    assert len(node_lines) == mesh.n_nodes
    assert len(elem_lines) == mesh.n_elements
    assert "config_sha256" in nodes.read_text()
