"""Readers and writers for meshes (PLY/OBJ) and camera trajectories."""

import logging
import struct

import numpy as np

from .errors import DataError
from .geometry import CameraFrame, Intrinsics, Mesh

logger = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_mesh(path) -> Mesh:
    """Load a PLY or OBJ mesh; normals and colors are ignored on input.

    Degenerate triangles are dropped (the count is kept on the mesh) and
    polygonal faces are fan-triangulated.
    """
    path = str(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise DataError("cannot read mesh file %s: %s" % (path, exc)) from exc
    if head[:3] == b"ply":
        vertices, faces = _read_ply(path)
    else:
        vertices, faces = _read_obj(path)
    triangles = _triangulate(faces)
    if not len(vertices):
        raise DataError("mesh %s has no vertices" % path)
    mesh = Mesh.from_arrays(vertices, triangles)
    if mesh.num_triangles == 0:
        raise DataError("mesh %s has no usable triangles" % path)
    return mesh


def _read_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise DataError("%s: not a PLY file" % path)
        fmt = None
        elements = []  # (name, count, [(prop_name, dtype) or ('list', count_t, item_t, name)])
        while True:
            line = fh.readline()
            if not line:
                raise DataError("%s: unexpected end of PLY header" % path)
            words = line.decode("ascii", "replace").split()
            if not words or words[0] == "comment":
                continue
            if words[0] == "format":
                fmt = words[1]
            elif words[0] == "element":
                elements.append((words[1], int(words[2]), []))
            elif words[0] == "property":
                if not elements:
                    raise DataError("%s: property before element" % path)
                if words[1] == "list":
                    elements[-1][2].append(("list", words[2], words[3], words[4]))
                else:
                    elements[-1][2].append((words[2], words[1]))
            elif words[0] == "end_header":
                break
        if fmt is None:
            raise DataError("%s: PLY header has no format line" % path)
        if fmt == "ascii":
            return _read_ply_ascii(fh, path, elements)
        if fmt in ("binary_little_endian", "binary_big_endian"):
            endian = "<" if fmt == "binary_little_endian" else ">"
            return _read_ply_binary(fh, path, elements, endian)
        raise DataError("%s: unsupported PLY format %r" % (path, fmt))


def _vertex_columns(props, path):
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise DataError("%s: vertex element lacks %s property" % (path, axis))
    return names.index("x"), names.index("y"), names.index("z")


def _read_ply_ascii(fh, path, elements):
    vertices, faces = np.zeros((0, 3)), []
    for name, count, props in elements:
        if name == "vertex":
            ix, iy, iz = _vertex_columns(props, path)
            rows = np.empty((count, 3), dtype=np.float64)
            for i in range(count):
                vals = fh.readline().split()
                rows[i] = float(vals[ix]), float(vals[iy]), float(vals[iz])
            vertices = rows
        elif name == "face":
            for _ in range(count):
                vals = fh.readline().split()
                n = int(vals[0])
                faces.append([int(v) for v in vals[1 : 1 + n]])
        else:
            for _ in range(count):
                fh.readline()
    return vertices, faces


def _read_ply_binary(fh, path, elements, endian):
    vertices, faces = np.zeros((0, 3)), []
    for name, count, props in elements:
        has_list = any(p[0] == "list" for p in props)
        if not has_list:
            dtype = np.dtype([("f%d" % i, endian + _PLY_TYPES[p[1]]) for i, p in enumerate(props)])
            data = np.fromfile(fh, dtype=dtype, count=count)
            if len(data) != count:
                raise DataError("%s: truncated PLY element %s" % (path, name))
            if name == "vertex":
                ix, iy, iz = _vertex_columns(props, path)
                vertices = np.column_stack(
                    [data["f%d" % ix], data["f%d" % iy], data["f%d" % iz]]
                ).astype(np.float64)
        elif name == "face":
            faces = _read_binary_faces(fh, path, count, props, endian)
        else:
            # list property on an element we do not consume: parse item by item
            _skip_binary_list_element(fh, path, count, props, endian)
    return vertices, faces


def _read_binary_faces(fh, path, count, props, endian):
    if not props or props[0][0] != "list":
        raise DataError("%s: face element must start with an index list" % path)
    if any(p[0] == "list" for p in props[1:]):
        raise DataError("%s: face element has multiple list properties" % path)
    _, count_t, item_t, _ = props[0]
    cdt = np.dtype(endian + _PLY_TYPES[count_t])
    idt = np.dtype(endian + _PLY_TYPES[item_t])
    # scalar props after the list (face colors and the like) get skipped
    trailing = sum(np.dtype(_PLY_TYPES[p[1]]).itemsize for p in props[1:])
    start = fh.tell()
    blob = fh.read()
    faces = []
    off = 0
    # fast path: constant face arity, decoded in one step
    if count:
        n0 = int(np.frombuffer(blob, dtype=cdt, count=1, offset=0)[0])
        stride = cdt.itemsize + n0 * idt.itemsize + trailing
        if len(blob) >= count * stride:
            fields = [("n", cdt), ("idx", idt, (n0,))]
            if trailing:
                fields.append(("extra", "V%d" % trailing))
            recs = np.frombuffer(blob, dtype=np.dtype(fields), count=count)
            if (recs["n"] == n0).all():
                fh.seek(start + count * stride)
                return [list(map(int, r)) for r in recs["idx"]]
    while len(faces) < count:
        if off + cdt.itemsize > len(blob):
            raise DataError("%s: truncated PLY face data" % path)
        n = int(np.frombuffer(blob, dtype=cdt, count=1, offset=off)[0])
        off += cdt.itemsize
        idx = np.frombuffer(blob, dtype=idt, count=n, offset=off)
        if len(idx) != n:
            raise DataError("%s: truncated PLY face data" % path)
        off += n * idt.itemsize + trailing
        if off > len(blob):
            raise DataError("%s: truncated PLY face data" % path)
        faces.append([int(v) for v in idx])
    fh.seek(start + off)
    return faces


def _skip_binary_list_element(fh, path, count, props, endian):
    for _ in range(count):
        for p in props:
            if p[0] == "list":
                cdt = np.dtype(endian + _PLY_TYPES[p[1]])
                n = int(np.frombuffer(fh.read(cdt.itemsize), dtype=cdt)[0])
                fh.read(n * np.dtype(endian + _PLY_TYPES[p[2]]).itemsize)
            else:
                fh.read(np.dtype(endian + _PLY_TYPES[p[1]]).itemsize)


def _read_obj(path):
    vertices, faces = [], []
    try:
        with open(path, "r", errors="replace") as fh:
            for line in fh:
                words = line.split()
                if not words:
                    continue
                if words[0] == "v":
                    vertices.append([float(w) for w in words[1:4]])
                elif words[0] == "f":
                    idx = []
                    for w in words[1:]:
                        i = int(w.split("/")[0])
                        # OBJ indices are 1-based; negatives count from the end
                        idx.append(i - 1 if i > 0 else len(vertices) + i)
                    faces.append(idx)
    except OSError as exc:
        raise DataError("cannot read mesh file %s: %s" % (path, exc)) from exc
    except ValueError as exc:
        raise DataError("malformed OBJ file %s: %s" % (path, exc)) from exc
    return np.asarray(vertices, dtype=np.float64).reshape(-1, 3), faces


def _triangulate(faces):
    tris = []
    for f in faces:
        if len(f) < 3:
            continue
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def save_ply(path, mesh: Mesh, face_colors=None, binary: bool = True):
    """Write a mesh, optionally with per-face uchar colors (viewer-friendly)."""
    nv, nf = mesh.num_vertices, mesh.num_triangles
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header += [
        "element vertex %d" % nv,
        "property float x",
        "property float y",
        "property float z",
        "element face %d" % nf,
        "property list uchar int vertex_indices",
    ]
    if face_colors is not None:
        face_colors = np.asarray(face_colors, dtype=np.uint8).reshape(nf, 3)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    verts = mesh.vertices.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(verts.tobytes())
            for i in range(nf):
                fh.write(struct.pack("<B3i", 3, *map(int, mesh.triangles[i])))
                if face_colors is not None:
                    fh.write(struct.pack("<3B", *map(int, face_colors[i])))
        else:
            for v in verts:
                fh.write(("%g %g %g\n" % tuple(v)).encode("ascii"))
            for i in range(nf):
                line = "3 %d %d %d" % tuple(mesh.triangles[i])
                if face_colors is not None:
                    line += " %d %d %d" % tuple(face_colors[i])
                fh.write((line + "\n").encode("ascii"))


# ---------------------------------------------------------------------------
# trajectories
#
# One camera per line:
#   frame_id fx fy cx cy width height r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
# i.e. the world-to-camera [R|t] matrix flattened row-major. '#' starts a comment.


def load_trajectory(path):
    """Read posed frames, returned sorted by ascending frame_id."""
    frames = []
    seen = set()
    try:
        lines = open(path, "r").read().splitlines()
    except OSError as exc:
        raise DataError("cannot read trajectory %s: %s" % (path, exc)) from exc
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        vals = line.split()
        if len(vals) != 19:
            raise DataError("%s:%d: expected 19 fields, got %d" % (path, ln, len(vals)))
        try:
            fid = int(vals[0])
            nums = [float(v) for v in vals[1:]]
        except ValueError as exc:
            raise DataError("%s:%d: %s" % (path, ln, exc)) from exc
        if fid in seen:
            raise DataError("%s:%d: duplicate frame id %d" % (path, ln, fid))
        seen.add(fid)
        mat = np.asarray(nums[6:], dtype=np.float64).reshape(3, 4)
        frames.append(
            CameraFrame(
                frame_id=fid,
                intrinsics=Intrinsics(
                    fx=nums[0], fy=nums[1], cx=nums[2], cy=nums[3],
                    width=int(nums[4]), height=int(nums[5]),
                ),
                rotation=mat[:, :3],
                translation=mat[:, 3],
            )
        )
    if not frames:
        raise DataError("trajectory %s contains no frames" % path)
    frames.sort(key=lambda f: f.frame_id)
    return frames


def save_trajectory(path, frames):
    with open(path, "w") as fh:
        fh.write("# frame_id fx fy cx cy width height  r00 r01 r02 tx  r10 r11 r12 ty  r20 r21 r22 tz\n")
        for f in frames:
            mat = np.column_stack([f.rotation, f.translation]).reshape(-1)
            nums = [f.fx, f.fy, f.cx, f.cy, float(f.width), float(f.height), *mat]
            fh.write("%d %s\n" % (f.frame_id, " ".join("%.17g" % x for x in nums)))
