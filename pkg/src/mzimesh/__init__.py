"""Simulation and analysis of MZI-mesh optical processors.

Four mesh kinds are supported (Reck, Clements, Diamond, Bokun). The package
covers structural analysis, transfer-matrix propagation with imperfections,
calibration and monitoring protocols, optical neural network training,
robustness sweeps and an energy-per-operation model.
"""

__version__ = "0.1.0"

from .topology import MeshTopology, build, structural_report  # noqa: E402
from .propagation import MeshState, NoiseConfig  # noqa: E402

__all__ = ["MeshTopology", "MeshState", "NoiseConfig", "build", "structural_report"]
