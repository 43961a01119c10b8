"""LP relaxations of factorable programs over voxelized (axis-aligned) regions."""
from .expr import ModelError, normalize, parse_model
from .relax import RelaxConfig, RelaxResult, relax
from .voxel import VoxelConfig

__all__ = ["ModelError", "RelaxConfig", "RelaxResult", "VoxelConfig", "normalize", "parse_model", "relax"]
__version__ = "0.1.0"
