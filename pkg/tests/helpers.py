"""Shared construction helpers for the test suite."""

import numpy as np

from texelfuse import CameraFrame, Intrinsics, Mesh
from texelfuse.rasterizer import IdImage


def frontal_frame(width=64, height=64, fx=None, fy=None, frame_id=0):
    """Camera at the origin looking down +z with the principal point centered."""
    if fx is None:
        fx = float(width)
    if fy is None:
        fy = fx
    intr = Intrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
                      width=width, height=height)
    return CameraFrame(frame_id=frame_id, intrinsics=intr,
                       rotation=np.eye(3), translation=np.zeros(3))


def strip_mesh(n, z=0.0):
    """n independent triangles side by side in the z plane."""
    verts = []
    tris = []
    for k in range(n):
        x = 2.0 * k
        verts += [(x, 0.0, z), (x + 1.0, 0.0, z), (x, 1.0, z)]
        tris.append((3 * k, 3 * k + 1, 3 * k + 2))
    return Mesh.from_arrays(np.array(verts, dtype=np.float64),
                            np.array(tris, dtype=np.int32))


def square_mesh(half=0.5, z=2.0):
    """Unit-ish square facing the camera, split into two triangles."""
    verts = np.array([
        [-half, -half, z],
        [half, -half, z],
        [half, half, z],
        [-half, half, z],
    ])
    tris = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return Mesh.from_arrays(verts, tris)


def handmade_ids(triangle, texel, width=None, height=1, frame_id=0, depth=1.0):
    """IdImage with explicit per-pixel triangle and texel assignments.

    ``triangle``/``texel`` may be flat lists; -1 marks uncovered pixels.
    Lets fusion tests drive the accumulators without any rasterization.
    """
    tri = np.asarray(triangle, dtype=np.int32)
    tex = np.asarray(texel, dtype=np.int32)
    if width is None:
        width = tri.size // height
    tri = tri.reshape(height, width)
    tex = tex.reshape(height, width)
    cov = tri != -1
    d = np.where(cov, float(depth), np.inf)
    zero = np.zeros((height, width), dtype=np.float64)
    return IdImage(frame_id=frame_id, width=width, height=height,
                   triangle=tri, texel=tex, depth=d, u=zero, v=zero.copy())
