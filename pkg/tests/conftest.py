import numpy as np
import pytest

import hotrkit as hk


@pytest.fixture(scope="session")
def material():
    return hk.reference_material()


@pytest.fixture(scope="session")
def beam_mesh():
    return hk.reference_beam_mesh()


@pytest.fixture(scope="session")
def calibration(beam_mesh, material):
    return hk.calibrate(beam_mesh, material)


@pytest.fixture(scope="session")
def small_mesh():
    # 10 mm elements like the reference grid, but a short shallow beam
    return hk.build_mesh(300.0, 50.0, 30, 5)


@pytest.fixture(scope="session")
def small_cal(small_mesh, material):
    return hk.calibrate(small_mesh, material)


@pytest.fixture(scope="session")
def small_crack():
    return hk.CrackSpec(location_index=12, depth_percent=20)


@pytest.fixture(scope="session")
def small_cracked(small_mesh, material, small_crack, small_cal):
    return hk.assemble(small_mesh, material, crack=small_crack,
                       calibration=small_cal)


@pytest.fixture(scope="session")
def small_healthy(small_mesh, material, small_cal):
    return hk.assemble(small_mesh, material, calibration=small_cal)


@pytest.fixture(scope="session")
def damped_small_models(small_mesh, material):
    """Small healthy/cracked pair with heavy damping for quick steady states."""
    cal = hk.calibrate(small_mesh, material, zeta=0.02)
    healthy = hk.assemble(small_mesh, material, calibration=cal, zeta=0.02)
    cracked = hk.assemble(small_mesh, material,
                          crack=hk.CrackSpec(12, 20), calibration=cal,
                          zeta=0.02)
    return healthy, cracked


def map_to_split(values, healthy, cracked, base_mesh):
    """Healthy free-DoF vector -> the cracked model's free-DoF numbering."""
    out = np.zeros(cracked.n, dtype=values.dtype)
    cmesh = cracked.mesh
    for fd in range(cracked.n):
        gd = cracked.free_to_full[fd]
        node, direc = gd // 2, gd % 2
        if node >= base_mesh.n_nodes:
            node = cmesh.split_pairs[node - base_mesh.n_nodes, 0]
        out[fd] = values[healthy.full_to_free[2 * node + direc]]
    return out
