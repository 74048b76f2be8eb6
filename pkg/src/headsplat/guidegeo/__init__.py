"""Guide geometry: field network, marching tets, smoothing, mesh rendering."""

from .surface import (
    GuideMesh,
    ellipsoid_sdf,
    eval_sdf_field,
    export_obj,
    extract_guide_mesh,
    extract_surface_vars,
    init_sdf_net,
    laplacian_loss,
    pretrain_sdf,
    render_guide,
    splat_scale_for_mesh,
    umbrella_residuals,
    vertex_adjacency,
)
from .tets import build_lattice, extract_surface, marching_tets, marching_tets_backward

__all__ = [
    "GuideMesh", "build_lattice", "marching_tets", "marching_tets_backward",
    "extract_surface", "init_sdf_net", "eval_sdf_field", "pretrain_sdf",
    "ellipsoid_sdf", "extract_guide_mesh", "extract_surface_vars",
    "laplacian_loss", "render_guide", "splat_scale_for_mesh",
    "umbrella_residuals", "vertex_adjacency", "export_obj",
]
