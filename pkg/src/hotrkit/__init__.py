"""Breathing-crack beam toolkit: harmonic balance, transmissibility surrogate,
reduced-order models, and GA crack identification."""

__version__ = "0.1.0"

from .mesh import CrackSpec, Mesh2D, build_mesh, insert_crack
from .model import (
    Calibration,
    ContactPair,
    Material,
    SensorSpec,
    SystemModel,
    assemble,
    calibrate,
    eigenmodes,
    reference_beam_mesh,
    reference_material,
    strain_row,
)

__all__ = [
    "CrackSpec",
    "Mesh2D",
    "build_mesh",
    "insert_crack",
    "Calibration",
    "ContactPair",
    "Material",
    "SensorSpec",
    "SystemModel",
    "assemble",
    "calibrate",
    "eigenmodes",
    "reference_beam_mesh",
    "reference_material",
    "strain_row",
]
