"""Mesh and camera data model plus the per-triangle texel parametrization.

A triangle is subdivided into texels through 2D texel coordinates (u, v):
one vertex is picked as the origin, u grows from 0 at the origin to 1 on
the opposite edge (rows parallel to that edge), and v runs across the row
toward the third vertex. Interior points therefore satisfy
``0 <= v <= u < 1``. Discretizing both axes into ``s`` steps of width 1/s
gives ``(s*s + s) / 2`` cells: row ``i = floor(s*u)`` holds the ``i + 1``
cells ``j = floor(s*v) in 0..i``, and :func:`texel_id` enumerates them
row by row as ``(i*i + i)/2 + j``, a bijection onto the packed index range.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

# Triangles with 3D area below this (in m^2) are dropped at load time.
DEGENERATE_AREA = 1e-12
# Near clipping plane in meters, shared by area estimation and rasterization.
NEAR_PLANE = 1e-4
# Hard cap on per-triangle subdivision steps; larger requests are clamped.
MAX_STEPS = 1024


@dataclass
class Mesh:
    """Triangle mesh: world-frame vertex positions and index triples.

    Winding is not assumed consistent; surfaces from real reconstructions
    mix orientations freely and downstream stages never cull by facing.
    """

    vertices: np.ndarray  # (n, 3) float64, meters
    triangles: np.ndarray  # (m, 3) int32
    dropped_degenerate: int = 0  # triangles removed at construction time

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size:
            if int(self.triangles.min()) < 0:
                raise DataError("negative vertex index in triangle list")
            if int(self.triangles.max()) >= len(self.vertices):
                raise DataError(
                    "triangle references vertex %d but mesh has %d vertices"
                    % (int(self.triangles.max()), len(self.vertices))
                )

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @classmethod
    def from_arrays(cls, vertices, triangles) -> "Mesh":
        """Build a mesh, silently dropping degenerate (near zero area) triangles."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int32).reshape(-1, 3)
        if len(triangles):
            areas = _triangle_areas(vertices, triangles)
            keep = areas > DEGENERATE_AREA
            dropped = int((~keep).sum())
            if dropped:
                logger.info("dropping %d degenerate triangles", dropped)
            triangles = triangles[keep]
        else:
            dropped = 0
        return cls(vertices=vertices, triangles=triangles, dropped_degenerate=dropped)


def _triangle_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)


def triangle_areas(mesh: Mesh) -> np.ndarray:
    """3D area of every triangle in m^2."""
    return _triangle_areas(mesh.vertices, mesh.triangles)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters. Pixel centers sit at half-integer coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise DataError("image dimensions must be positive")


@dataclass
class CameraFrame:
    """One posed camera: frame id, intrinsics, and world-to-camera transform.

    ``rotation`` and ``translation`` map world points into the camera frame
    as ``x_cam = R @ x_world + t`` with x right, y down, z forward.
    """

    frame_id: int
    intrinsics: Intrinsics
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise DataError(
                "frame %d: rotation is not orthonormal (max deviation %.3g)"
                % (self.frame_id, err)
            )

    # convenience passthroughs, used pervasively
    @property
    def fx(self):
        return self.intrinsics.fx

    @property
    def fy(self):
        return self.intrinsics.fy

    @property
    def cx(self):
        return self.intrinsics.cx

    @property
    def cy(self):
        return self.intrinsics.cy

    @property
    def width(self):
        return self.intrinsics.width

    @property
    def height(self):
        return self.intrinsics.height


def to_camera(frame: CameraFrame, points: np.ndarray) -> np.ndarray:
    """Transform (n, 3) world points into camera space."""
    return points @ frame.rotation.T + frame.translation


def project_camera_points(frame: CameraFrame, cam_points: np.ndarray):
    """Project camera-space points to pixel coordinates.

    Returns (x, y, depth) arrays. Depth is camera-space z and may be <= 0;
    callers are responsible for clipping. x/y are NaN or infinite at z == 0.
    """
    z = cam_points[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = cam_points[..., 0] / z * frame.fx + frame.cx
        y = cam_points[..., 1] / z * frame.fy + frame.cy
    return x, y, z


# ---------------------------------------------------------------------------
# texel parametrization


def texel_count(steps):
    """Number of texels of a triangle subdivided into ``steps`` rows."""
    s = np.asarray(steps, dtype=np.int64)
    out = (s * s + s) // 2
    return out if out.ndim else int(out)


def texel_id(s: int, u: float, v: float) -> int:
    """Packed per-triangle index of the texel covering coordinates (u, v).

    The grid cell is (floor(s*u), floor(s*v)); cells are enumerated row by
    row, row i contributing i + 1 texels. Precondition (asserted): s >= 1
    and 0 <= v <= u < 1, the valid interior of the parametrization.
    """
    assert s >= 1, "subdivision steps must be >= 1"
    assert 0.0 <= v <= u < 1.0, "texel coordinates must satisfy 0 <= v <= u < 1"
    i = int(s * u)
    j = int(s * v)
    return (i * i + i) // 2 + j


def texel_ids_grid(s, i, j):
    """Vectorized packed index from integer cell coordinates (no validation)."""
    i = np.asarray(i, dtype=np.int64)
    return (i * i + i) // 2 + np.asarray(j, dtype=np.int64)


@dataclass
class TexelLayout:
    """Per-triangle subdivision plus packed row offsets into the texture.

    ``offsets[t] + x`` is the global row of texel ``x`` of triangle ``t``;
    offsets ascend with triangle index and leave no gaps, so the global row
    space has exactly ``total_texels`` rows.
    """

    steps: np.ndarray  # (m,) int32, subdivision steps per triangle
    origins: np.ndarray  # (m,) int8, which stored vertex is the uv origin
    offsets: np.ndarray  # (m,) int64, first global row of each triangle
    total_texels: int

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int32)
        self.origins = np.asarray(self.origins, dtype=np.int8)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)

    @property
    def num_triangles(self) -> int:
        return len(self.steps)

    def texel_counts(self) -> np.ndarray:
        return texel_count(self.steps)


def _uv_origins(mesh: Mesh) -> np.ndarray:
    """Pick, per triangle, the vertex whose interior angle is closest to 90 deg.

    Anchoring the parametrization at the most right-angled corner keeps texel
    cells close to square and reduces skew. Ties resolve to the lowest index.
    """
    if mesh.num_triangles == 0:
        return np.zeros(0, dtype=np.int8)
    v = mesh.vertices
    t = mesh.triangles
    corners = [v[t[:, k]] for k in range(3)]
    devs = np.empty((mesh.num_triangles, 3))
    for k in range(3):
        a, b, c = corners[k], corners[(k + 1) % 3], corners[(k + 2) % 3]
        e1 = b - a
        e2 = c - a
        cosang = np.einsum("ij,ij->i", e1, e2)
        cosang /= np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        devs[:, k] = np.abs(np.arccos(np.clip(cosang, -1.0, 1.0)) - 0.5 * np.pi)
    return np.argmin(devs, axis=1).astype(np.int8)  # argmin takes lowest index on ties


def build_texel_layout(mesh: Mesh, areas: np.ndarray, gamma: float) -> TexelLayout:
    """Choose per-triangle subdivision from worst-case projected areas.

    steps = max(1, ceil(gamma * sqrt(area_px))) so texel density tracks the
    finest scale at which any frame observes the triangle; gamma = 0 degrades
    to one texel per triangle. Steps above MAX_STEPS are clamped (warned).
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    areas = np.asarray(areas, dtype=np.float64)
    if areas.shape != (mesh.num_triangles,):
        raise DataError(
            "areas shape %s does not match triangle count %d"
            % (areas.shape, mesh.num_triangles)
        )
    if gamma == 0:
        steps = np.ones(mesh.num_triangles, dtype=np.int64)
    else:
        steps = np.maximum(1, np.ceil(gamma * np.sqrt(areas)).astype(np.int64))
    clamped = int((steps > MAX_STEPS).sum())
    if clamped:
        logger.warning(
            "clamping subdivision steps of %d triangles to %d", clamped, MAX_STEPS
        )
        steps = np.minimum(steps, MAX_STEPS)
    counts = texel_count(steps)
    offsets = np.zeros(mesh.num_triangles, dtype=np.int64)
    if mesh.num_triangles:
        np.cumsum(counts[:-1], out=offsets[1:])
    return TexelLayout(
        steps=steps,
        origins=_uv_origins(mesh),
        offsets=offsets,
        total_texels=int(counts.sum()),
    )


def uniform_layout(mesh: Mesh, steps: int = 1) -> TexelLayout:
    """Layout with the same subdivision everywhere (steps=1: one texel per face)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    s = np.full(mesh.num_triangles, steps, dtype=np.int32)
    counts = texel_count(s)
    offsets = np.zeros(mesh.num_triangles, dtype=np.int64)
    if mesh.num_triangles:
        np.cumsum(counts[:-1], out=offsets[1:])
    return TexelLayout(
        steps=s, origins=_uv_origins(mesh), offsets=offsets, total_texels=int(counts.sum())
    )


# ---------------------------------------------------------------------------
# worst-case projected areas


def _clip_polygon(points: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Keep the part of a convex polygon where the signed distance is >= 0."""
    out = []
    k = len(points)
    for i in range(k):
        j = (i + 1) % k
        di, dj = dist[i], dist[j]
        if di >= 0:
            out.append(points[i])
        if (di >= 0) != (dj >= 0):
            t = di / (di - dj)
            out.append(points[i] + t * (points[j] - points[i]))
    if len(out) < 3:
        return np.zeros((0, points.shape[1]))
    return np.asarray(out)


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def projected_pixel_area(frame: CameraFrame, cam_triangle: np.ndarray) -> float:
    """Pixel area of one camera-space triangle clipped to frustum and image."""
    poly = cam_triangle
    if poly[:, 2].min() < NEAR_PLANE:
        poly = _clip_polygon(poly, poly[:, 2] - NEAR_PLANE)
        if len(poly) < 3:
            return 0.0
    x = poly[:, 0] / poly[:, 2] * frame.fx + frame.cx
    y = poly[:, 1] / poly[:, 2] * frame.fy + frame.cy
    poly2 = np.column_stack([x, y])
    w, h = float(frame.width), float(frame.height)
    if x.max() <= 0 or x.min() >= w or y.max() <= 0 or y.min() >= h:
        return 0.0
    if x.min() < 0:
        poly2 = _clip_polygon(poly2, poly2[:, 0])
    if len(poly2) >= 3 and poly2[:, 0].max() > w:
        poly2 = _clip_polygon(poly2, w - poly2[:, 0])
    if len(poly2) >= 3 and poly2[:, 1].min() < 0:
        poly2 = _clip_polygon(poly2, poly2[:, 1])
    if len(poly2) >= 3 and poly2[:, 1].max() > h:
        poly2 = _clip_polygon(poly2, h - poly2[:, 1])
    return _polygon_area(poly2)


def compute_worst_case_areas(mesh: Mesh, frames) -> np.ndarray:
    """Max projected pixel area of each triangle over all frames.

    Occlusion is deliberately ignored: the result is an upper bound used to
    size texel grids, so a triangle hidden in one frame but close to the
    camera still gets the fine subdivision the close view would warrant.
    Triangles outside every frustum get area 0.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame is required")
    areas = np.zeros(mesh.num_triangles, dtype=np.float64)
    for frame in frames:
        cam = to_camera(frame, mesh.vertices)
        tri_cam = cam[mesh.triangles]  # (m, 3, 3)
        zmax = tri_cam[:, :, 2].max(axis=1)
        for t in np.nonzero(zmax >= NEAR_PLANE)[0]:
            a = projected_pixel_area(frame, tri_cam[t])
            if a > areas[t]:
                areas[t] = a
    return areas
