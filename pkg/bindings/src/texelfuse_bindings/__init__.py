"""In-process fusion sessions for segmentation pipelines.

Hosts that already hold per-frame class probabilities as arrays can fuse
them without writing .smpb files: open a session against a mesh and
trajectory, push frames, then finalize and read back label images and the
per-texel distributions. Outputs decode-equal the command line pipeline
when frames are pushed in the same (ascending) order it uses.

Public surface is exactly three functions: open_session, add_frame,
finalize_and_render.
"""

import threading

import numpy as np

from texelfuse import (
    DataError,
    accumulate_frame,
    build_texel_layout,
    compute_pixel_weights,
    compute_worst_case_areas,
    finalize,
    init_texture,
    load_mesh,
    load_trajectory,
    parse_weight_mode,
    rasterize,
    render_labels,
    texel_argmax,
)

__all__ = ["open_session", "add_frame", "finalize_and_render"]

__version__ = "0.1.0"


class _FusionSession:
    """Handle around (mesh, layout, texture, config); not part of the API.

    Create with open_session. ``num_texels`` mirrors the fuse command's
    texel diagnostic for the same inputs.
    """

    def __init__(self, mesh, frames, layout, texture, weight_mode, alpha):
        self.mesh = mesh
        self.frames = {f.frame_id: f for f in frames}
        self.layout = layout
        self.texture = texture
        self.weight_mode = weight_mode
        self.alpha = alpha
        self.fallbacks = {}  # frame_id -> that frame's own argmax labels
        self._gate = threading.Lock()

    @property
    def num_texels(self) -> int:
        return int(self.layout.total_texels)

    @property
    def num_classes(self) -> int:
        return int(self.texture.num_classes)

    @property
    def finalized(self) -> bool:
        return bool(self.texture.finalized)


def open_session(mesh_path, trajectory_path, gamma, aggregator, weight_mode,
                 num_classes) -> _FusionSession:
    """Load the scene and size the probability texture for fusion.

    The texel layout comes from the worst-case projected footprint over the
    whole trajectory, exactly as the fuse command computes it. Errors from
    bad paths or bad configuration propagate with their messages intact.
    """
    mesh = load_mesh(mesh_path)
    frames = load_trajectory(trajectory_path)
    mode, alpha = parse_weight_mode(weight_mode)
    areas = compute_worst_case_areas(mesh, frames)
    layout = build_texel_layout(mesh, areas, gamma)
    texture = init_texture(layout, num_classes, aggregator)
    return _FusionSession(mesh, frames, layout, texture, mode, alpha)


def add_frame(session: _FusionSession, frame_id: int, probabilities) -> int:
    """Fold one frame's H x W x c probability array into the session.

    Returns the number of pixel observations added (covered pixels).
    Rejects unknown frame ids, arrays that do not match the frame's
    intrinsics or the session's class count, and concurrent calls.
    """
    if not session._gate.acquire(blocking=False):
        raise RuntimeError("another add_frame call is running on this session")
    try:
        frame = session.frames.get(frame_id)
        if frame is None:
            raise DataError(
                "frame %r is not in the trajectory (%d frames)"
                % (frame_id, len(session.frames))
            )
        probs = np.ascontiguousarray(probabilities, dtype=np.float32)
        want = (frame.height, frame.width, session.num_classes)
        if probs.shape != want:
            raise DataError(
                "probability array shape %s does not match expected %s"
                % (probs.shape, want)
            )
        ids = rasterize(session.mesh, session.layout, frame)
        weights = compute_pixel_weights(ids, session.weight_mode, session.alpha)
        before = int(session.texture.counts.sum())
        accumulate_frame(session.texture, ids, probs, weights)
        session.fallbacks[frame_id] = probs.argmax(axis=2).astype(np.int32)
        return int(session.texture.counts.sum()) - before
    finally:
        session._gate.release()


def finalize_and_render(session: _FusionSession, frame_ids=()):
    """Normalize the texture, then project labels into the given frames.

    Returns (label_images, texel_distributions) where label_images[k] is
    the H x W int32 rendering for frame_ids[k]; pixels whose texel was
    never observed fall back to the frame's own prediction argmax when the
    frame was added earlier, matching the fuse command's default. With no
    frame_ids the per-texel distribution array alone is returned.
    """
    frame_ids = list(frame_ids)
    missing = [fid for fid in frame_ids if fid not in session.frames]
    if missing:
        raise DataError("frame ids not in the trajectory: %s" % missing)
    finalize(session.texture)
    labels = texel_argmax(session.texture)
    rows = session.texture.rows.copy()
    if not frame_ids:
        return rows
    rendered = []
    for fid in frame_ids:
        ids = rasterize(session.mesh, session.layout, session.frames[fid])
        rendered.append(render_labels(labels, session.layout, ids,
                                      fallback=session.fallbacks.get(fid)))
    return rendered, rows
