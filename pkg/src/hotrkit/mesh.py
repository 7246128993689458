"""Structured 2D quad meshing of a rectangular beam, with edge-crack insertion.

Coordinates are in millimetres. The grid is nx elements along the beam axis
(x) and ny through the height (y); node (i, j) sits at (i*dx, j*dy) and has
index j*(nx+1) + i. Element (i, j) is the counterclockwise quad
[n(i,j), n(i+1,j), n(i+1,j+1), n(i,j+1)].

A crack is a vertical slit on an interior node line, starting at the top
edge and extending down a whole number of element rows. It is realised by
node splitting: each node on the slit (except the tip) is duplicated, the
duplicate taking over the connectivity of the elements on the right-hand
side of the line. The original node stays on the left face.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class CrackSpec:
    """Discrete edge-crack parameters on the structured grid.

    location_index picks the vertical node line x = location_index * dx;
    depth_percent is the crack depth as a percentage of the beam height and
    must map to a whole number of element rows.
    """

    location_index: int
    depth_percent: float

    def normalized_location(self, nx: int) -> float:
        """Longitudinal position mapped to (-1, 1) over the beam length."""
        return 2.0 * self.location_index / nx - 1.0

    def depth_elems(self, ny: int) -> int:
        d = self.depth_percent / 100.0 * ny
        d_int = int(round(d))
        if abs(d - d_int) > 1e-9 or d_int < 1:
            raise ValueError(
                f"depth {self.depth_percent}% does not map to a whole number "
                f"of element rows on a grid with ny={ny}"
            )
        return d_int

    def validate(self, nx: int, ny: int) -> None:
        """Check that the crack is realizable on an (nx, ny) grid."""
        if not 1 <= self.location_index <= nx - 1:
            raise ValueError(
                f"crack line {self.location_index} is not an interior "
                f"vertical node line (valid range 1..{nx - 1})"
            )
        d = self.depth_elems(ny)
        if d > ny - 1:
            raise ValueError("through-thickness crack is unsupported")


@dataclass
class Mesh2D:
    """Structured quad mesh of the beam, possibly with a split crack line."""

    nodes: np.ndarray          # (n_nodes, 2) coordinates [mm]
    elements: np.ndarray       # (n_elements, 4) CCW connectivity
    nx: int
    ny: int
    dx: float                  # element size along x [mm]
    dy: float                  # element size along y [mm]
    crack: CrackSpec | None = None
    # one (left_node, right_node) row per split node, top row first
    split_pairs: np.ndarray = field(
        default_factory=lambda: np.empty((0, 2), dtype=int)
    )
    crack_tip_node: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def length(self) -> float:
        return self.nx * self.dx

    @property
    def height(self) -> float:
        return self.ny * self.dy

    def node_index(self, i: int, j: int) -> int:
        """Grid node (i, j) -> node id, valid for the un-split base grid."""
        return j * (self.nx + 1) + i


def build_mesh(length: float, height: float, nx: int, ny: int) -> Mesh2D:
    """Build the structured beam grid.

    length/height in mm, nx/ny element counts along/through the beam.
    """
    if length <= 0 or height <= 0:
        raise ValueError("beam dimensions must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("element counts must be at least 1")
    dx = length / nx
    dy = height / ny
    xs = np.arange(nx + 1) * dx
    ys = np.arange(ny + 1) * dy
    X, Y = np.meshgrid(xs, ys)           # row j -> y level
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i = i.ravel()
    j = j.ravel()
    n0 = j * (nx + 1) + i
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh2D(nodes=nodes, elements=elements, nx=nx, ny=ny, dx=dx, dy=dy)


def insert_crack(mesh: Mesh2D, crack: CrackSpec) -> Mesh2D:
    """Split nodes along the crack line and return a new mesh.

    The duplicate (right-face) nodes are appended after the base grid, top
    split node first. The tip node one row below the deepest split stays
    shared, so the two halves remain connected.
    """
    if mesh.crack is not None:
        raise ValueError("mesh already carries a crack")
    crack.validate(mesh.nx, mesh.ny)
    d = crack.depth_elems(mesh.ny)
    ic = crack.location_index

    nodes = mesh.nodes.copy()
    elements = mesh.elements.copy()
    pairs = []
    for k, j in enumerate(range(mesh.ny, mesh.ny - d, -1)):
        orig = mesh.node_index(ic, j)
        new = nodes.shape[0]
        nodes = np.vstack([nodes, nodes[orig]])
        # elements on the right of the line: (ic, j) corner 0, (ic, j-1) corner 3
        if j <= mesh.ny - 1:
            e = j * mesh.nx + ic
            elements[e, 0] = new
        e = (j - 1) * mesh.nx + ic
        elements[e, 3] = new
        pairs.append((orig, new))

    return replace(
        mesh,
        nodes=nodes,
        elements=elements,
        crack=crack,
        split_pairs=np.array(pairs, dtype=int),
        crack_tip_node=mesh.node_index(ic, mesh.ny - d),
    )


def element_jacobians(mesh: Mesh2D) -> np.ndarray:
    """Signed area of each element at its centroid; positive = not inverted."""
    quads = mesh.nodes[mesh.elements]          # (m, 4, 2)
    x = quads[:, :, 0]
    y = quads[:, :, 1]
    # shoelace area, CCW positive
    area = 0.5 * (
        x[:, 0] * y[:, 1] - x[:, 1] * y[:, 0]
        + x[:, 1] * y[:, 2] - x[:, 2] * y[:, 1]
        + x[:, 2] * y[:, 3] - x[:, 3] * y[:, 2]
        + x[:, 3] * y[:, 0] - x[:, 0] * y[:, 3]
    )
    return area


def export_csv(mesh: Mesh2D, nodes_path, elements_path, header_lines=()) -> None:
    """Write node and element tables for external visualization."""
    with open(nodes_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# columns: node_id, x_mm, y_mm\n")
        w = csv.writer(fh)
        for nid, (x, y) in enumerate(mesh.nodes):
            w.writerow([nid, f"{x:.6g}", f"{y:.6g}"])
    with open(elements_path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# columns: element_id, n1, n2, n3, n4 (counterclockwise)\n")
        w = csv.writer(fh)
        for eid, conn in enumerate(mesh.elements):
            w.writerow([eid, *map(int, conn)])
