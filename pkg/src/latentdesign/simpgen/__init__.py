"""SIMP topology optimisation and randomised dataset synthesis."""

from .dataset import (
    DatasetFormatError,
    DatasetGenerationError,
    DatasetManifest,
    SampleRecord,
    VoxelDataset,
    assign_splits,
    generate_dataset,
    manifest_path,
    read_dataset,
    resample_dataset,
    write_dataset,
)
from .optimizer import (
    RHO_MIN,
    BisectionFailure,
    SimpConfig,
    SimpHistory,
    compliance_sensitivities,
    filter_kernel,
    initial_strain_energy,
    oc_update,
    run_simp,
    sensitivity_filter,
)
from .sampler import ProblemSamplerConfig, SamplingError, is_collinear, sample_problem, sample_volfrac

__all__ = [
    "BisectionFailure",
    "DatasetFormatError",
    "DatasetGenerationError",
    "DatasetManifest",
    "ProblemSamplerConfig",
    "RHO_MIN",
    "SampleRecord",
    "SamplingError",
    "SimpConfig",
    "SimpHistory",
    "VoxelDataset",
    "assign_splits",
    "compliance_sensitivities",
    "filter_kernel",
    "generate_dataset",
    "initial_strain_energy",
    "is_collinear",
    "manifest_path",
    "oc_update",
    "read_dataset",
    "resample_dataset",
    "run_simp",
    "sample_problem",
    "sample_volfrac",
    "sensitivity_filter",
    "write_dataset",
]
