"""Subinvariant kernel towers on word trees."""

from .kernel import (
    GramMatrix,
    KernelSystem,
    TowerCache,
    apply_L,
    diagonal,
    gram,
    is_psd,
    loewner_geq,
    tower_value,
    verify_subinvariance,
)
from .systems import FiniteSystem, eigen_seed, fixture_E1, fixture_E2, load_system, load_system_file

__all__ = [
    "FiniteSystem",
    "GramMatrix",
    "KernelSystem",
    "TowerCache",
    "apply_L",
    "diagonal",
    "eigen_seed",
    "fixture_E1",
    "fixture_E2",
    "gram",
    "is_psd",
    "load_system",
    "load_system_file",
    "loewner_geq",
    "tower_value",
    "verify_subinvariance",
]

__version__ = "0.1.0"
