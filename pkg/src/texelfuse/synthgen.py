"""Synthetic scenes with exact ground truth for end-to-end validation.

Three scene families:
  cube            12 triangles, one class per axis-aligned face
  room            inward-facing tessellated box (floor/ceiling/4 walls)
  checker_sphere  icosphere with a positional checker labeling, so ground
                  truth varies inside individual triangles

Prediction noise is reproducible: each frame is corrupted with a
counter-based generator keyed on (seed, frame_id), so frames can be
written in any order or in parallel without changing a single byte.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .formats import write_probability_image
from .fusion import UNKNOWN
from .geometry import CameraFrame, Intrinsics, Mesh, uniform_layout
from .meshio import save_ply, save_trajectory
from .rasterizer import IdImage, pixel_world_points, rasterize
from .renderback import default_palette, save_palette, write_label_png

SCENE_KINDS = ("cube", "room", "checker_sphere")
NOISE_KINDS = ("flip", "dirichlet")


@dataclass
class NoiseModel:
    """How per-pixel class probabilities are degraded from ground truth.

    flip: with probability epsilon the mass q goes to a uniformly chosen
    wrong class, otherwise to the true one; the remainder spreads evenly.
    dirichlet: sample Dirichlet(1 + kappa * onehot(truth)), so larger kappa
    means cleaner predictions.
    """

    kind: str = "flip"
    epsilon: float = 0.3
    q: float = 0.8
    kappa: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError("unknown noise kind %r (choose from %s)" % (self.kind, NOISE_KINDS))
        if not 0.0 <= self.epsilon < 1.0:
            raise ConfigError("epsilon must be in [0, 1)")
        if not 0.0 < self.q <= 1.0:
            raise ConfigError("q must be in (0, 1]")
        if self.kappa <= 0.0:
            raise ConfigError("kappa must be positive")


@dataclass
class SyntheticScene:
    name: str
    mesh: Mesh
    num_classes: int
    face_labels: np.ndarray | None = None  # (m,) int32, constant per face
    label_fn: object = None  # callable (n,3) points -> (n,) labels
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        if (self.face_labels is None) == (self.label_fn is None):
            raise ValueError("scene needs exactly one of face_labels / label_fn")
        if self.face_labels is not None:
            self.face_labels = np.asarray(self.face_labels, dtype=np.int32)
            if self.face_labels.shape != (self.mesh.num_triangles,):
                raise DataError("face_labels do not match triangle count")


def _quad(a, b, c, d):
    # two triangles, consistent winding
    return [(a, b, c), (a, c, d)]


def make_cube(size: float = 2.0, num_classes: int = 6) -> SyntheticScene:
    """Axis-aligned cube at the origin; classes 0..5 = +x -x +y -y +z -z."""
    if num_classes < 2:
        raise ConfigError("cube needs at least 2 classes")
    h = size / 2.0
    corners = np.array(
        [[sx, sy, sz] for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)],
        dtype=np.float64,
    )
    # corner index bit layout: 4*x + 2*y + z with 0=-h, 1=+h
    quads = [
        (4, 6, 7, 5),  # +x
        (0, 1, 3, 2),  # -x
        (2, 3, 7, 6),  # +y
        (0, 4, 5, 1),  # -y
        (1, 5, 7, 3),  # +z
        (0, 2, 6, 4),  # -z
    ]
    tris, labels = [], []
    for face, quad in enumerate(quads):
        for t in _quad(*quad):
            tris.append(t)
            labels.append(face % num_classes)
    mesh = Mesh.from_arrays(corners, np.array(tris, dtype=np.int32))
    names = ["x_plus", "x_minus", "y_plus", "y_minus", "z_plus", "z_minus"]
    return SyntheticScene(
        name="cube",
        mesh=mesh,
        num_classes=num_classes,
        face_labels=np.array(labels, dtype=np.int32),
        class_names=names[:num_classes] if num_classes <= 6 else [],
    )


def make_room(size=(6.0, 5.0, 3.0), tess: int = 4, num_classes: int = 6) -> SyntheticScene:
    """Box seen from inside. floor=0, ceiling=1, walls +x,-x,+y,-y = 2..5."""
    if tess < 1:
        raise ConfigError("tess must be >= 1")
    if num_classes < 2:
        raise ConfigError("room needs at least 2 classes")
    hx, hy, hz = (float(s) / 2.0 for s in size)
    vertices, tris, labels = [], [], []

    def add_face(origin, eu, ev, cls):
        base = len(vertices)
        origin = np.asarray(origin, dtype=np.float64)
        eu = np.asarray(eu, dtype=np.float64)
        ev = np.asarray(ev, dtype=np.float64)
        for i in range(tess + 1):
            for j in range(tess + 1):
                vertices.append(origin + eu * (i / tess) + ev * (j / tess))
        for i in range(tess):
            for j in range(tess):
                a = base + i * (tess + 1) + j
                b = a + tess + 1
                for t in _quad(a, b, b + 1, a + 1):
                    tris.append(t)
                    labels.append(cls % num_classes)

    ex, ey, ez = (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, 2 * hz)
    add_face((-hx, -hy, -hz), ex, ey, 0)  # floor
    add_face((-hx, -hy, hz), ey, ex, 1)  # ceiling
    add_face((hx, -hy, -hz), ey, ez, 2)  # +x wall
    add_face((-hx, -hy, -hz), ez, ey, 3)  # -x wall
    add_face((-hx, hy, -hz), ex, ez, 4)  # +y wall
    add_face((-hx, -hy, -hz), ez, ex, 5)  # -y wall
    mesh = Mesh.from_arrays(
        np.array(vertices, dtype=np.float64), np.array(tris, dtype=np.int32)
    )
    names = ["floor", "ceiling", "wall_x_plus", "wall_x_minus", "wall_y_plus", "wall_y_minus"]
    return SyntheticScene(
        name="room",
        mesh=mesh,
        num_classes=num_classes,
        face_labels=np.array(labels, dtype=np.int32),
        class_names=names[:num_classes] if num_classes <= 6 else [],
    )


def make_icosphere(radius: float = 1.0, level: int = 2) -> Mesh:
    """Unit icosahedron subdivided ``level`` times, vertices on the sphere."""
    if level < 0:
        raise ConfigError("level must be >= 0")
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    raw = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts = [v / np.linalg.norm(v) for v in raw]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(level):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        split = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            split += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = split
    vertices = np.array(verts, dtype=np.float64) * radius
    return Mesh.from_arrays(vertices, np.array(faces, dtype=np.int32))


def make_checker_sphere(radius: float = 1.0, level: int = 2,
                        num_classes: int = 2) -> SyntheticScene:
    """Sphere with an angular checker pattern finer than its triangles.

    The checker period shrinks with the subdivision level so class borders
    keep cutting through face interiors; per-face labels cannot represent
    this scene exactly, which is the point.
    """
    if num_classes < 2:
        raise ConfigError("checker_sphere needs at least 2 classes")
    mesh = make_icosphere(radius, level)
    period = 36.0 / (2 ** level)

    def labels(points):
        points = np.asarray(points, dtype=np.float64)
        r = np.linalg.norm(points, axis=1)
        r = np.where(r == 0.0, 1.0, r)
        theta = np.degrees(np.arccos(np.clip(points[:, 2] / r, -1.0, 1.0)))
        az = np.degrees(np.arctan2(points[:, 1], points[:, 0])) % 360.0
        cell = np.floor(theta / period).astype(np.int64) + np.floor(az / period).astype(np.int64)
        return (cell % num_classes).astype(np.int32)

    return SyntheticScene(
        name="checker_sphere", mesh=mesh, num_classes=num_classes, label_fn=labels
    )


def make_scene(kind: str, num_classes: int | None = None, **params) -> SyntheticScene:
    if kind == "cube":
        return make_cube(num_classes=num_classes or 6, **params)
    if kind == "room":
        return make_room(num_classes=num_classes or 6, **params)
    if kind == "checker_sphere":
        return make_checker_sphere(num_classes=num_classes or 2, **params)
    raise ConfigError("unknown scene %r (choose from %s)" % (kind, SCENE_KINDS))


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation and translation for a camera at ``eye``.

    Camera convention: x right, y down, z forward. Falls back to a y-up
    reference when the view direction is (anti)parallel to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("eye and target coincide")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    if abs(float(np.dot(z, up)) / np.linalg.norm(up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rotation = np.stack([x, y, z])
    return rotation, -rotation @ eye


def make_orbit_trajectory(center, radius: float, num_frames: int,
                          intrinsics: Intrinsics, tilt_deg: float = 0.0,
                          start_id: int = 0):
    """Cameras on a circle around ``center``, all looking at it.

    tilt_deg > 0 swings the elevation sinusoidally (two up/down cycles per
    orbit) so the top and bottom of an object get seen too; a flat circle
    never covers faces pointing along the orbit axis.
    """
    if num_frames < 1:
        raise ConfigError("need at least one frame")
    if radius <= 0.0:
        raise ConfigError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    tilt = math.radians(tilt_deg)
    frames = []
    for k in range(num_frames):
        theta = 2.0 * math.pi * k / num_frames
        elev = tilt * math.sin(2.0 * theta)
        eye = center + radius * np.array(
            [math.cos(elev) * math.cos(theta), math.cos(elev) * math.sin(theta), math.sin(elev)]
        )
        rotation, translation = look_at(eye, center)
        frames.append(
            CameraFrame(
                frame_id=start_id + k,
                intrinsics=intrinsics,
                rotation=rotation,
                translation=translation,
            )
        )
    return frames


def render_ground_truth(scene: SyntheticScene, frame: CameraFrame,
                        ids: IdImage | None = None) -> np.ndarray:
    """Exact per-pixel labels for one frame; UNKNOWN where nothing projects."""
    if ids is None:
        ids = rasterize(scene.mesh, uniform_layout(scene.mesh), frame)
    out = np.full((ids.height, ids.width), UNKNOWN, dtype=np.int32)
    cov = ids.covered
    if scene.face_labels is not None:
        out[cov] = scene.face_labels[ids.triangle[cov]]
    else:
        points = pixel_world_points(scene.mesh, uniform_layout(scene.mesh), ids)
        out[cov] = scene.label_fn(points)
    return out


def _rng(model: NoiseModel, frame_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[model.seed, frame_id]))


def corrupt(gt: np.ndarray, model: NoiseModel, num_classes: int,
            frame_id: int = 0) -> np.ndarray:
    """Turn a ground-truth label image into a noisy probability image.

    Pixels without ground truth (UNKNOWN) get the uniform distribution.
    Deterministic per (model.seed, frame_id), independent of frame order.
    """
    gt = np.asarray(gt)
    c = num_classes
    if c < 2:
        raise ConfigError("need at least 2 classes to corrupt")
    if model.kind == "flip" and model.q <= 1.0 / c:
        raise ConfigError(
            "flip confidence q=%g must exceed the uniform level 1/%d" % (model.q, c)
        )
    h, w = gt.shape
    rng = _rng(model, frame_id)
    known = (gt >= 0) & (gt < c)
    g = np.where(known, gt, 0).astype(np.int64)
    if model.kind == "flip":
        flip_draw = rng.random((h, w))
        wrong_draw = rng.random((h, w))
        wrong = np.minimum((wrong_draw * (c - 1)).astype(np.int64), c - 2)
        wrong += wrong >= g  # skip the true class
        chosen = np.where(flip_draw < model.epsilon, wrong, g)
        probs = np.full((h, w, c), (1.0 - model.q) / (c - 1), dtype=np.float32)
        np.put_along_axis(probs, chosen[..., None], np.float32(model.q), axis=2)
    else:
        alpha = np.ones((h, w, c), dtype=np.float64)
        np.put_along_axis(alpha, g[..., None], 1.0 + model.kappa, axis=2)
        draws = rng.standard_gamma(alpha)
        probs = (draws / draws.sum(axis=2, keepdims=True)).astype(np.float32)
    probs[~known] = np.float32(1.0 / c)
    return probs


def write_scene_dir(outdir, scene: SyntheticScene, frames, model: NoiseModel,
                    write_gt: bool = True, write_probs: bool = True):
    """Materialize a scene as a self-contained dataset directory.

    Produces mesh.ply, trajectory.txt, palette.txt, gt/<frame_id>.png,
    probs/<frame_id>.smpb and a ready-to-run fuse.cfg. Returns the paths
    of the pieces as a dict.
    """
    os.makedirs(outdir, exist_ok=True)
    mesh_path = os.path.join(outdir, "mesh.ply")
    traj_path = os.path.join(outdir, "trajectory.txt")
    palette_path = os.path.join(outdir, "palette.txt")
    save_ply(mesh_path, scene.mesh)
    save_trajectory(traj_path, frames)
    save_palette(palette_path, default_palette(scene.num_classes),
                 scene.class_names or None)
    gt_dir = os.path.join(outdir, "gt")
    probs_dir = os.path.join(outdir, "probs")
    layout = uniform_layout(scene.mesh)
    if write_gt:
        os.makedirs(gt_dir, exist_ok=True)
    if write_probs:
        os.makedirs(probs_dir, exist_ok=True)
    for frame in frames:
        if not (write_gt or write_probs):
            break
        ids = rasterize(scene.mesh, layout, frame)
        gt = render_ground_truth(scene, frame, ids)
        if write_gt:
            write_label_png(os.path.join(gt_dir, "%d.png" % frame.frame_id),
                            gt, scene.num_classes)
        if write_probs:
            probs = corrupt(gt, model, scene.num_classes, frame.frame_id)
            write_probability_image(
                os.path.join(probs_dir, "%d.smpb" % frame.frame_id), probs
            )
    cfg_path = os.path.join(outdir, "fuse.cfg")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write("mesh=%s\n" % mesh_path)
        fh.write("trajectory=%s\n" % traj_path)
        fh.write("predictions=%s\n" % probs_dir)
        fh.write("classes=%d\n" % scene.num_classes)
        fh.write("palette=%s\n" % palette_path)
        fh.write("ground_truth=%s\n" % gt_dir)
        fh.write("output=%s\n" % os.path.join(outdir, "fused"))
    return {
        "mesh": mesh_path,
        "trajectory": traj_path,
        "palette": palette_path,
        "gt": gt_dir,
        "probs": probs_dir,
        "config": cfg_path,
    }
