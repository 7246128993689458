"""Reduced-order models built on free-interface modes plus residual flexibility.

Two variants are provided. The RB model reduces the whole (cracked) beam,
keeping the crack-face and load-carrying DoFs as explicit coordinates and
adding a handful of free-vibration modes; it must be rebuilt for every
crack. The SUB model splits the beam into a crack-prone band (kept at full
order) and the remaining domain, which is reduced once, cached, and reused
for every crack candidate, so the per-candidate cost is a plain assembly.

The reduction basis is [modes | residual-flexibility attachment columns],
re-parametrized so the retained physical DoFs appear as identity rows.
Static loads applied at retained DoFs are then reproduced exactly.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CrackSpec, Mesh2D, insert_crack
from .model import (
    Calibration,
    ContactPair,
    Material,
    SensorSpec,
    SystemModel,
    assemble,
    assemble_raw,
    bending_force_pattern,
    calibrate,
    default_penalty,
    default_sensors,
    quad_matrices,
    strain_row_full,
    support_dofs,
)

CACHE_ENV_VAR = "HOTRKIT_CACHE_DIR"
_CACHE_VERSION = "1"


class ReductionError(RuntimeError):
    pass


@dataclass
class ReducedModel:
    """A reduced system plus the bookkeeping to reach physical DoFs."""

    kind: str                      # "RB" or "SUB"
    system: SystemModel
    modal_count: int
    retained_map: dict             # parent free DoF -> reduced coordinate
    T: np.ndarray | None = None    # reduction basis (RB only), parent x reduced
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.system.n

    def expand(self, reduced_vec: np.ndarray) -> np.ndarray:
        """Recover parent free-DoF values from reduced coordinates (RB)."""
        if self.T is None:
            raise ReductionError("expansion basis not available for this model")
        return self.T @ reduced_vec


@dataclass(frozen=True)
class SubstructureSplit:
    """Partition of the grid into a crack-prone band A and the remainder B.

    band_rows counts element rows from the top edge that belong to A; the
    interface is the node row shared by both regions.
    """

    band_rows: int = 4

    def interface_row(self, ny: int) -> int:
        if not 1 <= self.band_rows <= ny - 1:
            raise ValueError("band must keep at least one element row in B")
        return ny - self.band_rows

    def element_rows_a(self, ny: int) -> range:
        return range(ny - self.band_rows, ny)


def _eig_lowest(K, M, k):
    if sp.issparse(K):
        w, v = spla.eigsh(K, k=k, M=M, sigma=0.0, which="LM")
    else:
        w, v = sla.eigh(np.asarray(K), np.asarray(M))
        w, v = w[:k], v[:, :k]
    order = np.argsort(w)
    return w[order], v[:, order]


def rubin_basis(K, M, retained: np.ndarray, n_modes: int) -> np.ndarray:
    """Reduction basis with identity rows on the retained DoFs.

    Columns are [corrected modes | attachment columns]; the coordinate
    vector is [modal (n_modes), x_retained].
    """
    n = K.shape[0]
    retained = np.asarray(retained, dtype=int)
    if n_modes < 1:
        raise ValueError("at least one mode is required")
    if np.unique(retained).size != retained.size:
        raise ReductionError("retained DoF set contains duplicates")
    if retained.size == n:
        # degenerate limit: every DoF explicit, nothing left to reduce
        T = np.zeros((n, n))
        T[retained, np.arange(n)] = 1.0
        return T

    lam, phi = _eig_lowest(K, M, n_modes)
    if sp.issparse(K):
        lu = spla.splu(K.tocsc())
        rhs = np.zeros((n, retained.size))
        rhs[retained, np.arange(retained.size)] = 1.0
        k_inv_b = lu.solve(rhs)
    else:
        rhs = np.zeros((n, retained.size))
        rhs[retained, np.arange(retained.size)] = 1.0
        k_inv_b = sla.solve(np.asarray(K), rhs, assume_a="sym")

    phi_b = phi[retained, :]
    g_b = k_inv_b - phi @ (phi_b.T / lam[:, None])
    g_bb = g_b[retained, :]
    try:
        gg = sla.solve(g_bb.T, g_b.T).T        # G_b @ inv(G_bb)
    except sla.LinAlgError as exc:
        raise ReductionError(
            "singular attachment block; the retained set is redundant"
        ) from exc
    T = np.hstack([phi - gg @ phi_b, gg])
    # identity rows at retained DoFs hold analytically; impose them exactly
    T[retained, :] = 0.0
    T[retained, n_modes + np.arange(retained.size)] = 1.0
    return T


def reduce_rubin(model: SystemModel, retained: np.ndarray,
                 n_modes: int) -> ReducedModel:
    """Reduce a full-order model, keeping `retained` free DoFs explicit.

    All contact-pair and load-carrying DoFs of the model must be in the
    retained set; strain rows are projected through the basis.
    """
    t_start = time.perf_counter()
    retained = np.asarray(sorted(set(int(d) for d in retained)), dtype=int)
    needed = set()
    for p in model.contact_pairs:
        needed.add(p.dof_plus)
        if p.dof_minus is not None:
            needed.add(p.dof_minus)
    needed.update(np.nonzero(np.abs(model.force_pattern) > 0)[0].tolist())
    missing = needed.difference(retained.tolist())
    if missing:
        raise ReductionError(
            f"retained set must cover contact and forcing DoFs; missing {sorted(missing)}"
        )

    T = rubin_basis(model.K, model.M, retained, n_modes)
    K_r = T.T @ (model.K @ T)
    M_r = T.T @ (model.M @ T)
    C_r = T.T @ (model.C @ T)
    K_r = 0.5 * (K_r + K_r.T)
    M_r = 0.5 * (M_r + M_r.T)
    C_r = 0.5 * (C_r + C_r.T)

    modal = T.shape[1] - retained.size    # 0 in the retain-all limit
    pos = {int(d): modal + i for i, d in enumerate(retained)}
    pairs = [
        ContactPair(
            dof_plus=pos[p.dof_plus],
            dof_minus=pos[p.dof_minus] if p.dof_minus is not None else None,
            k_p=p.k_p,
            gap=p.gap,
        )
        for p in model.contact_pairs
    ]
    pattern = T.T @ np.asarray(model.force_pattern)
    rows = model.sensor_rows @ T

    system = SystemModel(
        M=M_r, C=C_r, K=K_r,
        contact_pairs=pairs,
        force_pattern=pattern,
        force_peak=model.force_peak,
        sensor_rows=rows,
        sensors=list(model.sensors),
        meta={"kind": "RB", "parent_n": model.n},
    )
    return ReducedModel(
        kind="RB",
        system=system,
        modal_count=modal,
        retained_map=pos,
        T=T,
        meta={"construct_seconds": time.perf_counter() - t_start,
              "retained": retained},
    )


def build_rb_model(mesh: Mesh2D, mat: Material, crack: CrackSpec | None,
                   n_modes: int = 6, calibration: Calibration | None = None,
                   k_p: float | None = None, thickness: float = 1.0,
                   sensors: list[SensorSpec] | None = None) -> ReducedModel:
    """Assemble the (cracked) beam and reduce it, retaining crack-face and
    forcing DoFs. This is the per-crack ("online") path for the RB model."""
    t_start = time.perf_counter()
    model = assemble(mesh, mat, crack=crack, k_p=k_p, thickness=thickness,
                     sensors=sensors, calibration=calibration)
    retained = set(np.nonzero(np.abs(model.force_pattern) > 0)[0].tolist())
    for p in model.contact_pairs:
        retained.add(p.dof_plus)
        if p.dof_minus is not None:
            retained.add(p.dof_minus)
    rm = reduce_rubin(model, np.array(sorted(retained)), n_modes)
    rm.meta["construct_seconds"] = time.perf_counter() - t_start
    rm.meta["parent_model"] = model
    return rm


# --- substructure (SUB) machinery -----------------------------------------

@dataclass
class BReduction:
    """Offline-reduced complement region, reusable across crack candidates."""

    K_r: np.ndarray
    M_r: np.ndarray
    retained_global: np.ndarray    # full-mesh DoF ids of retained coordinates
    n_modes: int
    key: str
    offline_seconds: float


def _cache_dir(explicit=None):
    if explicit is not None:
        return explicit
    return os.environ.get(CACHE_ENV_VAR, os.path.join(".", ".hotrkit_cache"))


def _b_reduction_key(mesh: Mesh2D, mat: Material, split: SubstructureSplit,
                     n_modes: int, thickness: float) -> str:
    text = "|".join(
        f"{v:.12g}" if isinstance(v, float) else str(v)
        for v in (
            _CACHE_VERSION, mesh.nx, mesh.ny, mesh.dx, mesh.dy,
            mat.E, mat.rho, mat.nu, thickness, split.band_rows, n_modes,
        )
    )
    return hashlib.sha256(text.encode()).hexdigest()


def reduce_substructure_b(mesh: Mesh2D, mat: Material,
                          split: SubstructureSplit, n_modes: int = 6,
                          thickness: float = 1.0,
                          cache_dir: str | None = None) -> BReduction:
    """Reduce region B (everything below the crack band), with disk caching.

    Retains the interface node row and the end-load DoFs that fall inside
    B. The result depends only on grid, material and split, never on the
    crack, so one cached file serves the whole parameter space.
    """
    key = _b_reduction_key(mesh, mat, split, n_modes, thickness)
    directory = _cache_dir(cache_dir)
    path = os.path.join(directory, f"sub_b_{key[:16]}.npz")
    if os.path.exists(path):
        data = np.load(path, allow_pickle=False)
        if str(data["key"]) == key:
            return BReduction(
                K_r=data["K_r"], M_r=data["M_r"],
                retained_global=data["retained_global"],
                n_modes=int(data["n_modes"]), key=key,
                offline_seconds=float(data["offline_seconds"]),
            )

    t_start = time.perf_counter()
    if mesh.crack is not None:
        raise ValueError("substructure B is built from the healthy grid")
    iface_row = split.interface_row(mesh.ny)
    rows_b = range(0, iface_row)
    elems = np.concatenate(
        [np.arange(r * mesh.nx, (r + 1) * mesh.nx) for r in rows_b]
    )
    conn = mesh.elements[elems]
    nodes_b = np.unique(conn)
    local = -np.ones(mesh.n_nodes, dtype=int)
    local[nodes_b] = np.arange(nodes_b.size)
    conn_local = local[conn]

    ke, me = quad_matrices(mesh.dx, mesh.dy, mat, thickness)
    K_full, M_full = assemble_raw(nodes_b.size, conn_local, ke, me)

    fixed_global = support_dofs(mesh)
    fixed_local = []
    for fd in fixed_global:
        node, direc = fd // 2, fd % 2
        if local[node] >= 0:
            fixed_local.append(2 * local[node] + direc)
    free = np.setdiff1d(np.arange(2 * nodes_b.size), np.array(fixed_local))
    free_map = -np.ones(2 * nodes_b.size, dtype=int)
    free_map[free] = np.arange(free.size)
    K_b = K_full[np.ix_(free, free)].tocsc()
    M_b = M_full[np.ix_(free, free)].tocsr()

    pattern = bending_force_pattern(mesh, 2 * mesh.n_nodes)
    retained_global = []
    iface_nodes = [mesh.node_index(i, iface_row) for i in range(mesh.nx + 1)]
    for node in iface_nodes:
        for direc in (0, 1):
            retained_global.append(2 * node + direc)
    for gd in np.nonzero(np.abs(pattern) > 0)[0]:
        node = gd // 2
        if local[node] >= 0 and gd not in retained_global:
            if free_map[2 * local[node] + gd % 2] >= 0:
                retained_global.append(int(gd))
    retained_global = np.array(retained_global, dtype=int)
    retained_local = np.array(
        [free_map[2 * local[gd // 2] + gd % 2] for gd in retained_global]
    )
    if np.any(retained_local < 0):
        raise ReductionError("a retained DoF of region B is fixed or missing")

    T = rubin_basis(K_b, M_b, retained_local, n_modes)
    K_r = T.T @ (K_b @ T)
    M_r = T.T @ (M_b @ T)
    K_r = 0.5 * (K_r + K_r.T)
    M_r = 0.5 * (M_r + M_r.T)
    offline = time.perf_counter() - t_start

    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, K_r=K_r, M_r=M_r, retained_global=retained_global,
                 n_modes=n_modes, key=key, offline_seconds=offline)
    os.replace(tmp, path)
    return BReduction(K_r=K_r, M_r=M_r, retained_global=retained_global,
                      n_modes=n_modes, key=key, offline_seconds=offline)


def build_sub_model(mesh: Mesh2D, mat: Material, split: SubstructureSplit,
                    crack: CrackSpec | None, n_modes: int = 6,
                    calibration: Calibration | None = None,
                    k_p: float | None = None, thickness: float = 1.0,
                    sensors: list[SensorSpec] | None = None,
                    cache_dir: str | None = None,
                    b_reduction: BReduction | None = None) -> ReducedModel:
    """Assemble the substructured model for one crack candidate.

    Region A (the top band) is meshed and assembled at full order with the
    crack; region B comes from the cached reduction and is attached through
    displacement compatibility on the shared interface row. Only the A-side
    work happens per candidate.
    """
    if crack is not None:
        crack.validate(mesh.nx, mesh.ny)
        if crack.depth_elems(mesh.ny) >= split.band_rows:
            raise ValueError("crack reaches the substructure interface")
    if calibration is None:
        calibration = calibrate(mesh, mat, thickness)
    if b_reduction is None:
        b_reduction = reduce_substructure_b(mesh, mat, split, n_modes,
                                            thickness, cache_dir)

    t_start = time.perf_counter()
    work = insert_crack(mesh, crack) if crack is not None else mesh
    iface_row = split.interface_row(mesh.ny)
    rows_a = split.element_rows_a(mesh.ny)
    elems_a = np.concatenate(
        [np.arange(r * mesh.nx, (r + 1) * mesh.nx) for r in rows_a]
    )
    conn = work.elements[elems_a]
    nodes_a = np.unique(conn)
    local_a = -np.ones(work.n_nodes, dtype=int)
    local_a[nodes_a] = np.arange(nodes_a.size)

    ke, me = quad_matrices(mesh.dx, mesh.dy, mat, thickness)
    K_a, M_a = assemble_raw(nodes_a.size, local_a[conn], ke, me)
    n_a = 2 * nodes_a.size

    # map B reduced coordinates into the assembled system
    retained_b = b_reduction.retained_global
    nb = b_reduction.K_r.shape[0]
    idx_b = np.empty(nb, dtype=int)
    next_free = n_a
    for i in range(nb):
        if i < n_modes:
            idx_b[i] = next_free
            next_free += 1
            continue
        gd = retained_b[i - n_modes]
        node, direc = gd // 2, gd % 2
        if local_a[node] >= 0:
            idx_b[i] = 2 * local_a[node] + direc
        else:
            idx_b[i] = next_free
            next_free += 1
    n_tot = next_free

    rows_bb = np.repeat(idx_b, nb)
    cols_bb = np.tile(idx_b, nb)
    K_coo = sp.coo_matrix(
        (b_reduction.K_r.ravel(), (rows_bb, cols_bb)), shape=(n_tot, n_tot)
    )
    M_coo = sp.coo_matrix(
        (b_reduction.M_r.ravel(), (rows_bb, cols_bb)), shape=(n_tot, n_tot)
    )
    K_a = K_a.tocoo()
    M_a = M_a.tocoo()
    K_sub = (sp.coo_matrix((K_a.data, (K_a.row, K_a.col)), shape=(n_tot, n_tot))
             + K_coo).tocsr()
    M_sub = (sp.coo_matrix((M_a.data, (M_a.row, M_a.col)), shape=(n_tot, n_tot))
             + M_coo).tocsr()
    C_sub = (calibration.alpha * M_sub + calibration.beta * K_sub).tocsr()

    if k_p is None:
        k_p = default_penalty(mesh, mat, thickness)
    pairs = [
        ContactPair(
            dof_plus=int(2 * local_a[left]),
            dof_minus=int(2 * local_a[right]),
            k_p=k_p,
        )
        for left, right in work.split_pairs
    ]

    # external load: A-side rows directly, B-side rows through retained coords
    pattern_base = bending_force_pattern(mesh, 2 * mesh.n_nodes)
    fixed = set(int(d) for d in support_dofs(mesh))
    pattern = np.zeros(n_tot)
    pos_b = {int(gd): int(idx_b[n_modes + i])
             for i, gd in enumerate(retained_b)}
    for gd in np.nonzero(np.abs(pattern_base) > 0)[0]:
        if int(gd) in fixed:     # load into a support, dropped like the
            continue             # full model does when slicing to free DoFs
        node, direc = gd // 2, gd % 2
        if local_a[node] >= 0:
            pattern[2 * local_a[node] + direc] = pattern_base[gd]
        elif int(gd) in pos_b:
            pattern[pos_b[int(gd)]] = pattern_base[gd]
        else:
            raise ReductionError(
                f"forcing DoF {gd} is neither in region A nor retained in B"
            )

    if sensors is None:
        sensors = default_sensors(mesh)
    rows = []
    for s in sensors:
        full_row = strain_row_full(work, s)
        r = np.zeros(n_tot)
        for gd in np.nonzero(full_row)[0]:
            node, direc = gd // 2, gd % 2
            if local_a[node] < 0:
                raise ReductionError(
                    f"sensor {s.element_index} lies outside region A"
                )
            r[2 * local_a[node] + direc] = full_row[gd]
        rows.append(r)

    online = time.perf_counter() - t_start
    system = SystemModel(
        M=M_sub, C=C_sub, K=K_sub,
        contact_pairs=pairs,
        force_pattern=pattern,
        force_peak=calibration.force_peak,
        sensor_rows=np.array(rows),
        sensors=list(sensors),
        meta={"kind": "SUB", "n_a": n_a, "n_b": nb},
    )
    retained_map = dict(pos_b)
    return ReducedModel(
        kind="SUB",
        system=system,
        modal_count=n_modes,
        retained_map=retained_map,
        T=None,
        meta={
            "construct_seconds": online,
            "offline_seconds": b_reduction.offline_seconds,
            "size_a": n_a,
            "size_b": nb,
            "interface_dofs": 2 * (mesh.nx + 1),
        },
    )
