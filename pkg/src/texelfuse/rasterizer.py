"""Software z-buffer rasterizer producing per-pixel surface correspondences.

Pixels are sampled at their centers (half-integer coordinates). Triangles
are drawn in ascending index order with no backface culling; depth ties
within DEPTH_TIE meters keep the lower triangle index, and pixels exactly
on a shared edge are claimed by exactly one side through an orientation
rule on the edge direction. The output is bit-for-bit deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import NEAR_PLANE, CameraFrame, Mesh, TexelLayout, to_camera

# Depth difference below which two candidate surfaces count as tied.
DEPTH_TIE = 1e-9
# triangle_ref value for pixels no surface covers.
NONE = -1


@dataclass
class IdImage:
    """Per-pixel rasterization result for one frame.

    ``triangle`` is NONE where uncovered; there ``texel``/``depth``/``u``/``v``
    are meaningless. Where covered, depth is positive camera-space z and
    (u, v) are valid texel coordinates of the winning triangle (v <= u < 1).
    """

    frame_id: int
    width: int
    height: int
    triangle: np.ndarray  # (H, W) int32
    texel: np.ndarray  # (H, W) int32
    depth: np.ndarray  # (H, W) float64, +inf where uncovered
    u: np.ndarray  # (H, W) float64
    v: np.ndarray  # (H, W) float64

    @property
    def covered(self) -> np.ndarray:
        return self.triangle != NONE


def project_point(frame: CameraFrame, point) -> tuple:
    """Project one world point; returns (x_px, y_px, depth).

    Depth is camera-space z and may be <= 0 for points at or behind the
    camera; callers must treat such results as unusable (x/y are NaN at
    depth exactly 0).
    """
    cam = to_camera(frame, np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    z = float(cam[2])
    if z == 0.0:
        return float("nan"), float("nan"), 0.0
    x = cam[0] / z * frame.fx + frame.cx
    y = cam[1] / z * frame.fy + frame.cy
    return float(x), float(y), z


def _clip_near_triangle(pts):
    """Clip a camera-space triangle to z >= NEAR_PLANE.

    Returns (points, barycentric) polygon arrays; barycentric rows give each
    clipped vertex in coordinates of the original triangle so attributes can
    be interpolated across the cut.
    """
    bary = np.eye(3)
    out_p, out_b = [], []
    for k in range(3):
        a, b = pts[k], pts[(k + 1) % 3]
        ba, bb = bary[k], bary[(k + 1) % 3]
        ina, inb = a[2] >= NEAR_PLANE, b[2] >= NEAR_PLANE
        if ina:
            out_p.append(a)
            out_b.append(ba)
        if ina != inb:
            t = (NEAR_PLANE - a[2]) / (b[2] - a[2])
            out_p.append(a + t * (b - a))
            out_b.append(ba + t * (bb - ba))
    return np.asarray(out_p), np.asarray(out_b)


def _boundary_accept(ax, ay, bx, by):
    # Orientation rule deciding which of two triangles sharing an edge owns
    # pixels exactly on it; antisymmetric under edge reversal.
    dy = by - ay
    dx = bx - ax
    return dy > 0 or (dy == 0 and dx < 0)


def rasterize(mesh: Mesh, layout: TexelLayout, frame: CameraFrame) -> IdImage:
    """Render triangle/texel ids, depth, and texel coordinates for one frame."""
    if layout.num_triangles != mesh.num_triangles:
        raise DataError(
            "layout covers %d triangles but mesh has %d"
            % (layout.num_triangles, mesh.num_triangles)
        )
    H, W = frame.height, frame.width
    depth = np.full((H, W), np.inf, dtype=np.float64)
    tri = np.full((H, W), NONE, dtype=np.int32)
    texel = np.zeros((H, W), dtype=np.int32)
    uimg = np.zeros((H, W), dtype=np.float64)
    vimg = np.zeros((H, W), dtype=np.float64)

    cam = to_camera(frame, mesh.vertices)
    for t in range(mesh.num_triangles):
        pts = cam[mesh.triangles[t]]
        z = pts[:, 2]
        if z.max() < NEAR_PLANE:
            continue
        if z.min() >= NEAR_PLANE:
            polys = [(pts, np.eye(3))]
        else:
            poly_p, poly_b = _clip_near_triangle(pts)
            if len(poly_p) < 3:
                continue
            polys = [
                (poly_p[[0, k, k + 1]], poly_b[[0, k, k + 1]])
                for k in range(1, len(poly_p) - 1)
            ]
        s = int(layout.steps[t])
        origin = int(layout.origins[t])
        for p3, b3 in polys:
            _fill_triangle(
                frame, t, s, origin, p3, b3, depth, tri, texel, uimg, vimg
            )
    return IdImage(
        frame_id=frame.frame_id, width=W, height=H,
        triangle=tri, texel=texel, depth=depth, u=uimg, v=vimg,
    )


def _fill_triangle(frame, t, s, origin, pts, bary, depth, tri, texel, uimg, vimg):
    H, W = frame.height, frame.width
    zs = pts[:, 2]
    xs = pts[:, 0] / zs * frame.fx + frame.cx
    ys = pts[:, 1] / zs * frame.fy + frame.cy

    x0 = max(int(np.ceil(xs.min() - 0.5)), 0)
    x1 = min(int(np.floor(xs.max() - 0.5)), W - 1)
    y0 = max(int(np.ceil(ys.min() - 0.5)), 0)
    y1 = min(int(np.floor(ys.max() - 0.5)), H - 1)
    if x0 > x1 or y0 > y1:
        return

    area2 = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (ys[1] - ys[0]) * (xs[2] - xs[0])
    if area2 == 0.0 or not np.isfinite(area2):
        return
    order = (0, 1, 2) if area2 > 0 else (0, 2, 1)
    xs, ys, zs, bary = xs[list(order)], ys[list(order)], zs[list(order)], bary[list(order)]
    area2 = abs(area2)

    px = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
    py = (np.arange(y0, y1 + 1, dtype=np.float64) + 0.5)[:, None]
    inside = None
    edges = []
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3  # edge opposite vertex k
        e = (xs[b] - xs[a]) * (py - ys[a]) - (ys[b] - ys[a]) * (px - xs[a])
        on = (e > 0) | ((e == 0) & _boundary_accept(xs[a], ys[a], xs[b], ys[b]))
        inside = on if inside is None else (inside & on)
        edges.append(e)
    if not inside.any():
        return

    sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = area2 / (edges[0] / zs[0] + edges[1] / zs[1] + edges[2] / zs[2])
    better = inside & (z > 0) & (z < depth[sub] - DEPTH_TIE)
    if not better.any():
        return

    # perspective-correct barycentric of the original (unclipped) triangle,
    # evaluated only at pixels that won the depth test
    w0 = edges[0][better] / zs[0]
    w1 = edges[1][better] / zs[1]
    w2 = edges[2][better] / zs[2]
    wsum = w0 + w1 + w2
    b = np.stack(
        [
            (w0 * bary[0, k] + w1 * bary[1, k] + w2 * bary[2, k]) / wsum
            for k in range(3)
        ]
    )
    np.clip(b, 0.0, None, out=b)
    b /= b.sum(axis=0)

    u = 1.0 - b[origin]
    v = b[(origin + 2) % 3]
    np.clip(u, 0.0, 1.0, out=u)
    np.clip(v, 0.0, u, out=v)
    i = np.minimum((s * u).astype(np.int64), s - 1)
    j = np.minimum((s * v).astype(np.int64), i)
    tid = (i * i + i) // 2 + j

    depth[sub][better] = z[better]
    tri[sub][better] = t
    texel[sub][better] = tid.astype(np.int32)
    uimg[sub][better] = u
    vimg[sub][better] = v


def pixel_world_points(mesh: Mesh, layout: TexelLayout, ids: IdImage) -> np.ndarray:
    """World position of every covered pixel, in ids.covered scan order.

    Inverts the texel parametrization: with origin vertex o, the stored
    (u, v) correspond to barycentric weights (1-u) on o, (u-v) on o+1 and
    v on o+2.
    """
    cov = ids.covered
    tri = ids.triangle[cov].astype(np.int64)
    u = ids.u[cov]
    v = ids.v[cov]
    o = layout.origins[tri].astype(np.int64)
    n = len(tri)
    w = np.empty((n, 3), dtype=np.float64)
    rows = np.arange(n)
    w[rows, o] = 1.0 - u
    w[rows, (o + 1) % 3] = u - v
    w[rows, (o + 2) % 3] = v
    corners = mesh.vertices[mesh.triangles[tri]]  # (n, 3, 3)
    return np.einsum("nk,nkd->nd", w, corners)


def dump_debug_images(ids: IdImage, prefix) -> list:
    """Write 16-bit PNG visualizations (hashed triangle id, texel id, depth).

    Returns the written paths. Intended for eyeballing correspondence bugs;
    the hashing only spreads ids over the gray range.
    """
    from PIL import Image  # local: only this debug path needs imaging

    prefix = str(prefix)
    cov = ids.covered
    out = []

    hashed = ((ids.triangle.astype(np.int64) + 1) * 2654435761 % 65535 + 1).astype(np.uint16)
    hashed[~cov] = 0
    texel = (ids.texel.astype(np.int64) % 65535 + 1).astype(np.uint16)
    texel[~cov] = 0
    dep = np.zeros(ids.depth.shape, dtype=np.uint16)
    if cov.any():
        d = ids.depth[cov]
        lo, hi = float(d.min()), float(d.max())
        scale = 65534.0 / (hi - lo) if hi > lo else 0.0
        dep[cov] = ((ids.depth[cov] - lo) * scale).astype(np.uint16) + 1
    for name, img in (("triangle", hashed), ("texel", texel), ("depth", dep)):
        path = "%s_%s.png" % (prefix, name)
        h, w = img.shape
        Image.frombytes("I;16", (w, h), img.astype("<u2").tobytes()).save(path)
        out.append(path)
    return out
