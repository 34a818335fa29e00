"""Mixed variational finite elements for implicit simulation of volumes, shells and rods."""

from .materials import MaterialParams
from .mesh import SimMesh, load_mesh
from .scene import SceneConfig, SolverSettings, load_scene
from .solver import MixedFEMSolver, SolverState

__all__ = [
    "MaterialParams",
    "MixedFEMSolver",
    "SceneConfig",
    "SimMesh",
    "SolverSettings",
    "SolverState",
    "load_mesh",
    "load_scene",
]

__version__ = "0.1.0"
