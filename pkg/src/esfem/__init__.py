"""Evolving surface finite elements on time series of triangulated surfaces."""

from .core import (
    StepContext,
    assemble_advection,
    assemble_mass,
    assemble_stiffness,
    assemble_streamline_diffusion,
    discrete_mass,
    esfem_step,
    run_diffusion,
)
from .geometry import (
    MeshError,
    MeshSequence,
    SurfaceMesh,
    element_geometry,
    icosphere,
    interpolate_frames,
    max_element_diameter,
    synth_sequence,
    validate_mesh,
    vertex_velocity,
)

__version__ = "0.1.0"

__all__ = [
    "MeshError",
    "MeshSequence",
    "StepContext",
    "SurfaceMesh",
    "assemble_advection",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_streamline_diffusion",
    "discrete_mass",
    "element_geometry",
    "esfem_step",
    "icosphere",
    "interpolate_frames",
    "max_element_diameter",
    "run_diffusion",
    "synth_sequence",
    "validate_mesh",
    "vertex_velocity",
]
