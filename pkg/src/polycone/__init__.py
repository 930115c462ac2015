"""Stretched lattice polymers in random potentials: exact path sums, renewal
tables, quenched-to-annealed ratios and synchronized effective walks."""

__version__ = "0.1.0"

from .lattice import ConeAperture, Diamond, LatticePath, LatticePoint, point  # noqa: E402
from .environment import Environment, PotentialSpec  # noqa: E402
from .pathsum import ModelParams, PathEnsembleSpec, quenched_partition, slab_green  # noqa: E402
from .annealed import RenewalTable, renewal_tables  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND", "ConeAperture", "Diamond", "Environment", "LatticePath", "LatticePoint",
    "ModelParams", "PathEnsembleSpec", "PotentialSpec", "RenewalTable", "point",
    "quenched_partition", "renewal_tables", "slab_green", "__version__",
]
