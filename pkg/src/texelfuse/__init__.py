"""Multi-view semantic label fusion on texel-subdivided triangle meshes.

Per-frame class probability images are aggregated into a per-texel
probability texture over a mesh, then projected back into any camera as
label images. See the README for the pipeline and file formats.
"""

from .errors import CapacityError, ConfigError, DataError, TexelFuseError
from .formats import (
    read_probability_header,
    read_probability_image,
    read_texture,
    write_probability_image,
    write_texture,
)
from .fusion import (
    AGGREGATORS,
    UNKNOWN,
    ProbabilityTexture,
    accumulate_frame,
    compute_pixel_weights,
    finalize,
    init_texture,
    parse_weight_mode,
    texel_argmax,
)
from .geometry import (
    CameraFrame,
    Intrinsics,
    Mesh,
    TexelLayout,
    build_texel_layout,
    compute_worst_case_areas,
    texel_count,
    texel_id,
    uniform_layout,
)
from .meshio import load_mesh, load_trajectory, save_ply, save_trajectory
from .rasterizer import IdImage, pixel_world_points, project_point, rasterize
from .renderback import (
    EvalReport,
    colorize_labels,
    default_palette,
    export_colored_mesh,
    load_palette,
    merge_reports,
    pixel_accuracy,
    read_label_png,
    render_labels,
    save_palette,
    select_frames,
    write_label_png,
)
from .synthgen import (
    NoiseModel,
    SyntheticScene,
    corrupt,
    make_orbit_trajectory,
    make_scene,
    render_ground_truth,
    write_scene_dir,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATORS",
    "CameraFrame",
    "CapacityError",
    "ConfigError",
    "DataError",
    "EvalReport",
    "IdImage",
    "Intrinsics",
    "Mesh",
    "NoiseModel",
    "ProbabilityTexture",
    "SyntheticScene",
    "TexelFuseError",
    "TexelLayout",
    "UNKNOWN",
    "accumulate_frame",
    "build_texel_layout",
    "colorize_labels",
    "compute_pixel_weights",
    "compute_worst_case_areas",
    "corrupt",
    "default_palette",
    "export_colored_mesh",
    "finalize",
    "init_texture",
    "load_mesh",
    "load_palette",
    "load_trajectory",
    "make_orbit_trajectory",
    "make_scene",
    "merge_reports",
    "parse_weight_mode",
    "pixel_accuracy",
    "pixel_world_points",
    "project_point",
    "rasterize",
    "read_label_png",
    "read_probability_header",
    "read_probability_image",
    "read_texture",
    "render_ground_truth",
    "render_labels",
    "save_ply",
    "save_palette",
    "save_trajectory",
    "select_frames",
    "texel_argmax",
    "texel_count",
    "texel_id",
    "uniform_layout",
    "write_label_png",
    "write_probability_image",
    "write_scene_dir",
    "write_texture",
]
