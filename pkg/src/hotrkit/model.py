"""Plane-stress FE model of the beam: assembly, supports, loading, sensors.

Unit system: mm, N, MPa (N/mm^2), tonne (so N = t*mm/s^2), seconds.
Densities given in kg/m^3 are converted internally (1 kg/m^3 = 1e-12 t/mm^3),
which makes eigenvalues of (K, M) come out in (rad/s)^2 directly.

The beam is simply supported through one pinned node per end face, placed on
the mid-height node line so the bending-moment end loads (a linear
distribution of horizontal nodal forces, zero at mid-height) act on free
DoFs only. The load amplitude is calibrated so the static midspan deflection
under the peak force equals a prescribed value (2 mm by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CrackSpec, Mesh2D, build_mesh, insert_crack

_GP = 1.0 / np.sqrt(3.0)


@dataclass(frozen=True)
class Material:
    """Isotropic elastic material. E in MPa, rho in kg/m^3."""

    E: float
    rho: float
    nu: float

    def __post_init__(self):
        if self.E <= 0 or self.rho <= 0:
            raise ValueError("E and rho must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")

    @property
    def rho_t_mm3(self) -> float:
        return self.rho * 1e-12


@dataclass(frozen=True)
class ContactPair:
    """Node-to-node unilateral spring acting on two x-DoFs.

    The relative displacement x_rel = x[dof_plus] - x[dof_minus] is the face
    interpenetration; the pair transmits k_p * x_rel whenever x_rel >= gap
    and nothing otherwise. dof_minus may be None for a grounded spring.
    Indices refer to free-space DoFs of the owning model.
    """

    dof_plus: int
    dof_minus: int | None
    k_p: float
    gap: float = 0.0

    def __post_init__(self):
        if self.k_p <= 0:
            raise ValueError("penalty stiffness must be positive")


@dataclass(frozen=True)
class SensorSpec:
    """Virtual strain gauge: axial strain at an element centroid."""

    element_index: int
    direction: str = "xx"


@dataclass(frozen=True)
class Calibration:
    """Crack-independent constants fitted on the healthy beam."""

    alpha: float            # Rayleigh mass coefficient [1/s]
    beta: float             # Rayleigh stiffness coefficient [s]
    force_peak: float       # peak load scale [N] for the unit force pattern
    bending_freqs: tuple[float, float]   # first two bending modes [Hz]
    zeta: float


@dataclass
class SystemModel:
    """Assembled dynamic system on free DoFs, ready for the solvers.

    Matrices may be scipy.sparse (full-order models) or dense ndarrays
    (reduced models). A constructed model is treated as immutable.
    """

    M: object
    C: object
    K: object
    contact_pairs: list[ContactPair]
    force_pattern: np.ndarray        # unit-amplitude spatial pattern
    force_peak: float                # peak force scale in time domain [N]
    sensor_rows: np.ndarray          # (n_sensors, n) strain evaluation rows
    sensors: list[SensorSpec] = field(default_factory=list)
    # bookkeeping for full-order models (None for reduced ones)
    mesh: Mesh2D | None = None
    fixed_dofs: np.ndarray | None = None
    free_to_full: np.ndarray | None = None
    full_to_free: np.ndarray | None = None
    dof_node: np.ndarray | None = None
    dof_dir: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def qhat(self) -> np.ndarray:
        """Fourier coefficient of the single-tone load, q(t) = qhat e^{iwt} + cc."""
        return (0.5 * self.force_peak) * self.force_pattern

    @property
    def partition(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(crack-face plus, crack-face minus, remaining) free DoF index sets."""
        c_plus = np.array([p.dof_plus for p in self.contact_pairs], dtype=int)
        c_minus = np.array(
            [p.dof_minus for p in self.contact_pairs if p.dof_minus is not None],
            dtype=int,
        )
        mask = np.ones(self.n, dtype=bool)
        mask[c_plus] = False
        mask[c_minus] = False
        return c_plus, c_minus, np.nonzero(mask)[0]

    def scaled(self, factor: float) -> "SystemModel":
        """Copy with the forcing amplitude scaled by `factor`."""
        return replace(self, force_peak=self.force_peak * factor)

    def incidence(self) -> np.ndarray:
        """Signed incidence matrix B (n x n_pairs): +1 on plus, -1 on minus."""
        B = np.zeros((self.n, len(self.contact_pairs)))
        for k, p in enumerate(self.contact_pairs):
            B[p.dof_plus, k] = 1.0
            if p.dof_minus is not None:
                B[p.dof_minus, k] = -1.0
        return B


def quad_matrices(dx: float, dy: float, mat: Material, thickness: float):
    """Stiffness and consistent mass of the dx-by-dy plane-stress quad."""
    E, nu = mat.E, mat.nu
    D = E / (1 - nu**2) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1 - nu) / 2]]
    )
    ke = np.zeros((8, 8))
    me = np.zeros((8, 8))
    det_j = dx * dy / 4.0
    for xi in (-_GP, _GP):
        for eta in (-_GP, _GP):
            dn_dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            dn_deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            dn_dx = dn_dxi * 2.0 / dx
            dn_dy = dn_deta * 2.0 / dy
            B = np.zeros((3, 8))
            B[0, 0::2] = dn_dx
            B[1, 1::2] = dn_dy
            B[2, 0::2] = dn_dy
            B[2, 1::2] = dn_dx
            N = 0.25 * np.array(
                [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                 (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)]
            )
            Nm = np.zeros((2, 8))
            Nm[0, 0::2] = N
            Nm[1, 1::2] = N
            ke += thickness * det_j * (B.T @ D @ B)
            me += mat.rho_t_mm3 * thickness * det_j * (Nm.T @ Nm)
    return ke, me


def element_dofs(elements: np.ndarray) -> np.ndarray:
    """(m, 8) DoF indices [ux1, uy1, ux2, uy2, ...] for each element."""
    m = elements.shape[0]
    ed = np.empty((m, 8), dtype=int)
    ed[:, 0::2] = 2 * elements
    ed[:, 1::2] = 2 * elements + 1
    return ed


def assemble_raw(n_nodes: int, elements: np.ndarray, ke: np.ndarray,
                 me: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Scatter identical element matrices into global sparse K and M."""
    ed = element_dofs(elements)
    m = elements.shape[0]
    rows = np.repeat(ed, 8, axis=1).ravel()
    cols = np.tile(ed, (1, 8)).ravel()
    ndof = 2 * n_nodes
    K = sp.coo_matrix(
        (np.tile(ke.ravel(), m), (rows, cols)), shape=(ndof, ndof)
    ).tocsr()
    M = sp.coo_matrix(
        (np.tile(me.ravel(), m), (rows, cols)), shape=(ndof, ndof)
    ).tocsr()
    return K, M


def default_sensor_columns(nx: int, count: int = 4) -> list[int]:
    """Equally spaced sensor element columns along the beam."""
    return [int(nx * (2 * k + 1) / (2 * count)) for k in range(count)]


def default_sensors(mesh: Mesh2D, count: int = 4) -> list[SensorSpec]:
    """Gauges on the top element row, spread evenly along the length."""
    top = (mesh.ny - 1) * mesh.nx
    return [SensorSpec(top + c) for c in default_sensor_columns(mesh.nx, count)]


def support_dofs(mesh: Mesh2D) -> np.ndarray:
    """Pin (ux, uy) at the left mid-height end node, uy at the right one."""
    row = mesh.ny // 2
    left = mesh.node_index(0, row)
    right = mesh.node_index(mesh.nx, row)
    return np.array([2 * left, 2 * left + 1, 2 * right + 1], dtype=int)


def bending_force_pattern(mesh: Mesh2D, ndof: int) -> np.ndarray:
    """Opposite end couples as linear horizontal force distributions.

    Zero at mid-height, peak +-1 at the outer fibres; the two ends carry
    couples of equal magnitude and opposite sense, so the internal bending
    moment is constant along the span and the supports stay unloaded.
    """
    q = np.zeros(ndof)
    y_mid = mesh.height / 2.0
    scale = 2.0 / mesh.height
    for j in range(mesh.ny + 1):
        w = (mesh.nodes[mesh.node_index(0, j), 1] - y_mid) * scale
        q[2 * mesh.node_index(0, j)] = w
        q[2 * mesh.node_index(mesh.nx, j)] = -w
    return q


def _classify_bending(freqs, shapes, dof_dir):
    """Indices of modes whose shape is transverse-dominated."""
    out = []
    for k in range(len(freqs)):
        v = shapes[:, k]
        ux = np.sqrt(np.mean(v[dof_dir == 0] ** 2))
        uy = np.sqrt(np.mean(v[dof_dir == 1] ** 2))
        if uy > ux:
            out.append(k)
    return out


def _eig_smallest(K, M, count):
    n = K.shape[0]
    if count > n:
        raise ValueError(f"requested {count} modes from a {n}-DoF model")
    if sp.issparse(K):
        if count >= n - 1:
            w, v = sla.eigh(K.toarray(), M.toarray())
            w, v = w[:count], v[:, :count]
        else:
            w, v = spla.eigsh(K, k=count, M=M, sigma=0.0, which="LM")
    else:
        w, v = sla.eigh(np.asarray(K), np.asarray(M))
        w, v = w[:count], v[:, :count]
    order = np.argsort(w)
    return w[order], v[:, order]


def eigenmodes(model: SystemModel, count: int, crack_state: str = "closed"):
    """First `count` natural frequencies [Hz] and mass-normalized shapes.

    Cracked models are evaluated with the face pairs held closed
    (crack_state="closed", the default) or traction-free ("open"). Closed
    pairs are enforced by merging the paired normal DoFs, so the result is
    the compatible-crack spectrum, not a penalty approximation.
    """
    if crack_state not in ("closed", "open"):
        raise ValueError("crack_state must be 'closed' or 'open'")
    K, M = model.K, model.M
    if model.contact_pairs and crack_state == "closed":
        P = _merge_transform(model.n, model.contact_pairs)
        K = P.T @ K @ P
        M = P.T @ M @ P
        w, v = _eig_smallest(K, M, count)
        v = P @ v
    else:
        w, v = _eig_smallest(K, M, count)
    freqs = np.sqrt(np.maximum(w, 0.0)) / (2 * np.pi)
    return freqs, v


def _merge_transform(n: int, pairs) -> sp.csr_matrix:
    """Congruence map identifying dof_minus with dof_plus for each pair."""
    keep = np.ones(n, dtype=bool)
    target = {}
    for p in pairs:
        if p.dof_minus is not None:
            keep[p.dof_minus] = False
            target[p.dof_minus] = p.dof_plus
    new_index = -np.ones(n, dtype=int)
    new_index[keep] = np.arange(keep.sum())
    rows, cols = [], []
    for d in range(n):
        rows.append(d)
        cols.append(new_index[d] if keep[d] else new_index[target[d]])
    data = np.ones(n)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, keep.sum()))


def strain_row_full(mesh: Mesh2D, sensor: SensorSpec) -> np.ndarray:
    """Row vector over all mesh DoFs with eps_xx(centroid) = row @ x."""
    if not 0 <= sensor.element_index < mesh.n_elements:
        raise ValueError(f"sensor element {sensor.element_index} does not exist")
    if sensor.direction != "xx":
        raise ValueError("only eps_xx gauges are supported")
    conn = mesh.elements[sensor.element_index]
    row = np.zeros(2 * mesh.n_nodes)
    coef = 1.0 / (2.0 * mesh.dx)
    for local, sign in zip(range(4), (-1.0, 1.0, 1.0, -1.0)):
        row[2 * conn[local]] = sign * coef
    return row


def strain_row(model: SystemModel, sensor: SensorSpec) -> np.ndarray:
    """Free-space strain evaluation row for one gauge on a full-order model."""
    if model.mesh is None:
        raise ValueError("strain rows require a full-order model with a mesh")
    return strain_row_full(model.mesh, sensor)[model.free_to_full]


def default_penalty(mesh: Mesh2D, mat: Material, thickness: float,
                    scale: float = 100.0) -> float:
    """Penalty stiffness: tributary axial stiffness of one node row, scaled up."""
    return scale * mat.E * thickness * mesh.dy / mesh.dx


def calibrate(mesh: Mesh2D, mat: Material, thickness: float = 1.0,
              zeta: float = 0.002, target_deflection: float = 2.0,
              n_probe_modes: int = 6) -> Calibration:
    """Fit Rayleigh damping and the load scale on the healthy beam.

    Damping matches `zeta` on the first two bending modes; the force scale
    makes the static mid-span deflection under the peak load equal to
    `target_deflection` mm.
    """
    if mesh.crack is not None:
        raise ValueError("calibration runs on the healthy mesh")
    ke, me = quad_matrices(mesh.dx, mesh.dy, mat, thickness)
    K, M = assemble_raw(mesh.n_nodes, mesh.elements, ke, me)
    fixed = support_dofs(mesh)
    free = np.setdiff1d(np.arange(2 * mesh.n_nodes), fixed)
    Kf = K[np.ix_(free, free)].tocsc()
    Mf = M[np.ix_(free, free)].tocsr()
    dof_dir = free % 2

    n_probe = min(n_probe_modes, Kf.shape[0] - 1)
    w, v = _eig_smallest(Kf, Mf, n_probe)
    bending = _classify_bending(w, v, dof_dir)
    if len(bending) < 2:
        raise RuntimeError("could not identify two bending modes")
    w1 = np.sqrt(w[bending[0]])
    w2 = np.sqrt(w[bending[1]])
    alpha = 2.0 * zeta * w1 * w2 / (w1 + w2)
    beta = 2.0 * zeta / (w1 + w2)

    pattern = bending_force_pattern(mesh, 2 * mesh.n_nodes)[free]
    x_static = spla.spsolve(Kf, pattern)
    mid = mesh.node_index(mesh.nx // 2, mesh.ny // 2)
    uy_mid = x_static[np.searchsorted(free, 2 * mid + 1)]
    if abs(uy_mid) < 1e-30:
        raise RuntimeError("static probe produced no midspan deflection")
    force_peak = target_deflection / abs(uy_mid)
    return Calibration(
        alpha=alpha,
        beta=beta,
        force_peak=force_peak,
        bending_freqs=(w1 / (2 * np.pi), w2 / (2 * np.pi)),
        zeta=zeta,
    )


def assemble(mesh: Mesh2D, mat: Material, crack: CrackSpec | None = None,
             k_p: float | None = None, thickness: float = 1.0,
             zeta: float = 0.002, sensors: list[SensorSpec] | None = None,
             calibration: Calibration | None = None,
             target_deflection: float = 2.0) -> SystemModel:
    """Build the (possibly cracked) beam as a ready-to-solve SystemModel.

    `mesh` is the healthy grid; if `crack` is given the nodes along the
    crack line are split here and one contact pair per split node is
    created on the x-DoFs. Pass a precomputed `calibration` when
    assembling many cracked variants of the same beam.
    """
    if mesh.crack is not None:
        raise ValueError("pass the healthy base mesh; assemble inserts the crack")
    if calibration is None:
        calibration = calibrate(mesh, mat, thickness, zeta, target_deflection)
    if crack is not None:
        crack.validate(mesh.nx, mesh.ny)
        work = insert_crack(mesh, crack)
    else:
        work = mesh

    ke, me = quad_matrices(work.dx, work.dy, mat, thickness)
    K, M = assemble_raw(work.n_nodes, work.elements, ke, me)
    fixed = support_dofs(work)
    free = np.setdiff1d(np.arange(2 * work.n_nodes), fixed)
    full_to_free = -np.ones(2 * work.n_nodes, dtype=int)
    full_to_free[free] = np.arange(free.size)

    Kf = K[np.ix_(free, free)].tocsr()
    Mf = M[np.ix_(free, free)].tocsr()
    Cf = (calibration.alpha * Mf + calibration.beta * Kf).tocsr()

    if k_p is None:
        k_p = default_penalty(work, mat, thickness)
    pairs = [
        ContactPair(
            dof_plus=int(full_to_free[2 * left]),
            dof_minus=int(full_to_free[2 * right]),
            k_p=k_p,
        )
        for left, right in work.split_pairs
    ]

    if sensors is None:
        sensors = default_sensors(mesh)
    rows = np.array([strain_row_full(work, s)[free] for s in sensors])

    pattern = bending_force_pattern(work, 2 * work.n_nodes)[free]
    return SystemModel(
        M=Mf,
        C=Cf,
        K=Kf,
        contact_pairs=pairs,
        force_pattern=pattern,
        force_peak=calibration.force_peak,
        sensor_rows=rows,
        sensors=list(sensors),
        mesh=work,
        fixed_dofs=fixed,
        free_to_full=free,
        full_to_free=full_to_free,
        dof_node=free // 2,
        dof_dir=free % 2,
        meta={
            "material": mat,
            "thickness": thickness,
            "calibration": calibration,
            "crack": crack,
            "k_p": k_p,
        },
    )


def reference_beam_mesh(nx: int = 120, ny: int = 20,
                        length: float = 1200.0, height: float = 200.0) -> Mesh2D:
    """Default beam grid: 10 mm square elements, 120 x 20."""
    return build_mesh(length, height, nx, ny)


def reference_material() -> Material:
    """Steel used throughout: E = 2.1e5 MPa, rho = 7300 kg/m^3, nu = 0.26."""
    return Material(E=2.1e5, rho=7.3e3, nu=0.26)


def static_solve(model: SystemModel, rhs: np.ndarray) -> np.ndarray:
    """Linear static solution K x = rhs on free DoFs (contact ignored)."""
    if sp.issparse(model.K):
        return spla.spsolve(model.K.tocsc(), rhs)
    return sla.solve(np.asarray(model.K), rhs, assume_a="sym")
