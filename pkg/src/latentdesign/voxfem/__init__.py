"""Linear-elasticity FEM on regular hexahedral voxel grids."""

from .element import element_stiffness, isotropic_constitutive
from .problem import (
    ElasticParams,
    FacePatch,
    FemError,
    FemProblem,
    InvalidProblem,
    LoadKind,
    LoadSpec,
    NonConvergence,
    SingularSystem,
    boundary_nodes,
    element_dofs,
    flatten_field,
    node_coordinates,
    node_index,
    unflatten_field,
)
from .solver import (
    StiffnessOperator,
    compliance,
    compliance_from_elements,
    element_energies,
    normalize_energy,
    raw_strain_energy,
    solve,
    strain_energy_field,
)

__all__ = [
    "ElasticParams",
    "FacePatch",
    "FemError",
    "FemProblem",
    "InvalidProblem",
    "LoadKind",
    "LoadSpec",
    "NonConvergence",
    "SingularSystem",
    "StiffnessOperator",
    "boundary_nodes",
    "compliance",
    "compliance_from_elements",
    "element_dofs",
    "element_energies",
    "element_stiffness",
    "flatten_field",
    "isotropic_constitutive",
    "node_coordinates",
    "node_index",
    "normalize_energy",
    "raw_strain_energy",
    "solve",
    "strain_energy_field",
    "unflatten_field",
]
