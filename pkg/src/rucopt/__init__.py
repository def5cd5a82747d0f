"""Stress- and fatigue-constrained topology optimization of periodic unit cells."""

from .alopt import (ALState, ObjectiveSpec, OptimizerConfig, make_context,
                    run_optimization)
from .criteria import (FatigueParams, critical_plane_g, fatigue_params,
                       von_mises, von_mises_g)
from .field import DesignField, FilterOperator, build_filter, project
from .homogenize import Homogenizer, LoadCase, Material, StressCycle
from .mesh import (DofMap, ElementMatrices, RucMesh, build_mesh,
                   element_stiffness_and_B, periodic_dof_map)

__version__ = "0.1.0"

__all__ = [
    "ALState", "DesignField", "DofMap", "ElementMatrices", "FatigueParams",
    "FilterOperator", "Homogenizer", "LoadCase", "Material", "ObjectiveSpec",
    "OptimizerConfig", "RucMesh", "StressCycle", "build_filter", "build_mesh",
    "critical_plane_g", "element_stiffness_and_B", "fatigue_params",
    "make_context", "periodic_dof_map", "project", "run_optimization",
    "von_mises", "von_mises_g",
]
