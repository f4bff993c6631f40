"""Projecting fused texel labels back into frames, plus evaluation helpers.

Labels live in int32 arrays with UNKNOWN (-1) marking pixels or texels that
carry no usable class. On disk label images are grayscale PNGs storing the
class index directly; the sentinel becomes 255 (8-bit, up to 255 classes)
or 65535 (16-bit) so files stay viewable in ordinary tools.
"""

import colorsys
import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError
from .fusion import UNKNOWN
from .geometry import Mesh, TexelLayout
from .meshio import save_ply
from .rasterizer import IdImage

UNOBSERVED_GRAY = (128, 128, 128)

_SENTINEL_8 = 255
_SENTINEL_16 = 65535


def render_labels(texel_labels: np.ndarray, layout: TexelLayout, ids: IdImage,
                  fallback: np.ndarray | None = None) -> np.ndarray:
    """Paint per-texel labels into a frame through its id image.

    Pixels that get no fused label, because nothing covers them or their
    texel was never observed, take the ``fallback`` image's value when one
    is given (typically the frame's own argmax prediction) and UNKNOWN
    otherwise.
    """
    texel_labels = np.asarray(texel_labels)
    if texel_labels.shape != (layout.total_texels,):
        raise DataError(
            "texel labels have %d entries, layout has %d texels"
            % (texel_labels.size, layout.total_texels)
        )
    out = np.full((ids.height, ids.width), UNKNOWN, dtype=np.int32)
    cov = ids.covered
    rows = layout.offsets[ids.triangle[cov]] + ids.texel[cov]
    out[cov] = texel_labels[rows]
    if fallback is not None:
        fallback = np.asarray(fallback)
        if fallback.shape != out.shape:
            raise DataError(
                "fallback image %s does not match frame %dx%d"
                % (fallback.shape, ids.width, ids.height)
            )
        hole = out == UNKNOWN
        out[hole] = fallback[hole]
    return out


def select_frames(total: int, fraction: float):
    """Deterministic evenly spaced frame indices.

    Picks max(1, round(fraction * total)) slots at floor(j * total / n)
    and deduplicates, so fraction=1 returns every index and tiny fractions
    still keep index 0.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1], got %r" % (fraction,))
    if total < 1:
        raise ValueError("total must be >= 1")
    n = max(1, round(fraction * total))
    return sorted({(j * total) // n for j in range(n)})


@dataclass
class EvalReport:
    """Pixel-level confusion between predicted and reference labels.

    UNKNOWN predictions are tallied separately per reference class instead
    of occupying a confusion row; they still count as evaluated (and wrong)
    for the accuracy figure.
    """

    num_classes: int
    confusion: np.ndarray = field(default=None)  # (c, c), rows = reference
    unknown_pred: np.ndarray = field(default=None)  # (c,), UNKNOWN guesses
    ignored: int = 0  # reference pixels excluded (UNKNOWN or ignore set)

    def __post_init__(self):
        c = self.num_classes
        if self.confusion is None:
            self.confusion = np.zeros((c, c), dtype=np.int64)
        if self.unknown_pred is None:
            self.unknown_pred = np.zeros(c, dtype=np.int64)
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        self.unknown_pred = np.asarray(self.unknown_pred, dtype=np.int64)
        if self.confusion.shape != (c, c) or self.unknown_pred.shape != (c,):
            raise DataError("confusion shape does not match num_classes")

    @property
    def evaluated(self) -> int:
        return int(self.confusion.sum() + self.unknown_pred.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion))

    @property
    def accuracy(self) -> float:
        n = self.evaluated
        return self.correct / n if n else 0.0

    def merge(self, other: "EvalReport") -> "EvalReport":
        if other.num_classes != self.num_classes:
            raise DataError("cannot merge reports with different class counts")
        self.confusion += other.confusion
        self.unknown_pred += other.unknown_pred
        self.ignored += other.ignored
        return self

    def to_lines(self, prefix: str = ""):
        return [
            "%sevaluated %d" % (prefix, self.evaluated),
            "%signored %d" % (prefix, self.ignored),
            "%scorrect %d" % (prefix, self.correct),
            "%sunknown_predictions %d" % (prefix, int(self.unknown_pred.sum())),
            "%saccuracy %.6f" % (prefix, self.accuracy),
        ]

    def to_json_dict(self):
        return {
            "num_classes": self.num_classes,
            "evaluated": self.evaluated,
            "ignored": self.ignored,
            "correct": self.correct,
            "unknown_predictions": int(self.unknown_pred.sum()),
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "unknown_by_class": self.unknown_pred.tolist(),
        }


def merge_reports(reports) -> EvalReport:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to merge")
    out = EvalReport(reports[0].num_classes)
    for r in reports:
        out.merge(r)
    return out


def pixel_accuracy(pred: np.ndarray, ref: np.ndarray, num_classes: int,
                   ignore=()) -> EvalReport:
    """Compare a predicted label image against a reference one.

    Reference pixels that are UNKNOWN, out of range, or in ``ignore`` are
    skipped entirely. Predictions outside [0, num_classes) count as UNKNOWN.
    """
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise DataError("prediction %s and reference %s differ in shape" % (pred.shape, ref.shape))
    c = num_classes
    valid = (ref >= 0) & (ref < c)
    for cls in ignore:
        valid &= ref != cls
    g = ref[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    known = (p >= 0) & (p < c)
    confusion = np.bincount(g[known] * c + p[known], minlength=c * c).reshape(c, c)
    unknown = np.bincount(g[~known], minlength=c)
    return EvalReport(c, confusion, unknown, ignored=int(ref.size - g.size))


def default_palette(num_classes: int) -> np.ndarray:
    """Golden-angle hue walk; well separated colors for any class count."""
    colors = np.zeros((num_classes, 3), dtype=np.uint8)
    for i in range(num_classes):
        hue = (i * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
        colors[i] = (round(r * 255), round(g * 255), round(b * 255))
    return colors


def load_palette(path):
    """Read 'index r g b name' lines; returns (colors (c,3) uint8, names)."""
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 4)
            if len(parts) < 4:
                raise DataError("%s:%d: expected 'index r g b [name]'" % (path, ln))
            try:
                idx = int(parts[0])
                rgb = tuple(int(x) for x in parts[1:4])
            except ValueError as exc:
                raise DataError("%s:%d: %s" % (path, ln, exc)) from exc
            if idx < 0:
                raise DataError("%s:%d: negative class index" % (path, ln))
            if not all(0 <= v <= 255 for v in rgb):
                raise DataError("%s:%d: color out of range" % (path, ln))
            if idx in entries:
                raise DataError("%s:%d: duplicate class %d" % (path, ln, idx))
            name = parts[4] if len(parts) > 4 else "class_%d" % idx
            entries[idx] = (rgb, name)
    if not entries:
        raise DataError("%s: empty palette" % path)
    c = max(entries) + 1
    colors = np.zeros((c, 3), dtype=np.uint8)
    names = ["class_%d" % i for i in range(c)]
    for idx, (rgb, name) in entries.items():
        colors[idx] = rgb
        names[idx] = name
    return colors, names


def save_palette(path, colors: np.ndarray, names=None):
    colors = np.asarray(colors, dtype=np.uint8)
    with open(path, "w", encoding="utf-8") as fh:
        for i, (r, g, b) in enumerate(colors):
            name = names[i] if names else "class_%d" % i
            fh.write("%d %d %d %d %s\n" % (i, r, g, b, name))


def colorize_labels(labels: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """(H, W) labels to (H, W, 3) uint8; UNKNOWN pixels go gray."""
    labels = np.asarray(labels)
    out = np.empty(labels.shape + (3,), dtype=np.uint8)
    out[:] = UNOBSERVED_GRAY
    known = (labels >= 0) & (labels < len(colors))
    out[known] = colors[labels[known]]
    return out


def write_label_png(path, labels: np.ndarray, num_classes: int):
    """Store an int label image as grayscale PNG (8-bit when classes fit)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError("label image must be 2-d, got shape %s" % (labels.shape,))
    in_range = (labels >= 0) & (labels < num_classes)
    if num_classes <= _SENTINEL_8:
        arr = np.full(labels.shape, _SENTINEL_8, dtype=np.uint8)
        arr[in_range] = labels[in_range]
        Image.fromarray(arr, mode="L").save(path)
    elif num_classes <= _SENTINEL_16:
        arr = np.full(labels.shape, _SENTINEL_16, dtype=np.uint16)
        arr[in_range] = labels[in_range]
        h, w = arr.shape
        Image.frombytes("I;16", (w, h), arr.astype("<u2").tobytes()).save(path)
    else:
        raise DataError("cannot encode %d classes in a label PNG" % num_classes)


def read_label_png(path) -> np.ndarray:
    """Inverse of write_label_png; sentinel pixels come back as UNKNOWN."""
    try:
        img = Image.open(path)
    except OSError as exc:
        raise DataError("cannot read label image %s: %s" % (path, exc)) from exc
    with img:
        if img.mode == "L":
            sentinel = _SENTINEL_8
        elif img.mode in ("I", "I;16", "I;16B", "I;16L"):
            sentinel = _SENTINEL_16
        else:
            raise DataError("%s: mode %s is not a grayscale label image" % (path, img.mode))
        arr = np.asarray(img).astype(np.int32)
    arr[arr == sentinel] = UNKNOWN
    return arr


def export_colored_mesh(path, mesh: Mesh, layout: TexelLayout,
                        texel_labels: np.ndarray, colors: np.ndarray):
    """Write a PLY whose faces carry the majority class color of their texels.

    Faces with no observed texel at all get UNOBSERVED_GRAY.
    """
    texel_labels = np.asarray(texel_labels)
    if texel_labels.shape != (layout.total_texels,):
        raise DataError("texel labels do not match layout")
    m = layout.num_triangles
    c = len(colors)
    per_tri = np.asarray(layout.texel_counts(), dtype=np.int64)
    face_of_row = np.repeat(np.arange(m, dtype=np.int64), per_tri)
    known = (texel_labels >= 0) & (texel_labels < c)
    votes = np.zeros((m, c), dtype=np.int64)
    np.add.at(votes, (face_of_row[known], texel_labels[known].astype(np.int64)), 1)
    majority = votes.argmax(axis=1)
    face_colors = np.asarray(colors, dtype=np.uint8)[majority]
    face_colors[votes.sum(axis=1) == 0] = UNOBSERVED_GRAY
    save_ply(path, mesh, face_colors=face_colors)


def write_report(path_txt, path_json, sections):
    """Write paired text ('key value' lines) and JSON reports.

    sections: list of (prefix, EvalReport) plus optional ('', dict) extras
    merged into the JSON root and emitted as plain lines in the text file.
    """
    lines = []
    blob = {}
    for prefix, part in sections:
        if isinstance(part, EvalReport):
            lines.extend(part.to_lines(prefix))
            blob[prefix.rstrip("_") or "report"] = part.to_json_dict()
        else:
            for key, value in part.items():
                lines.append("%s%s %s" % (prefix, key, value))
                blob["%s%s" % (prefix, key)] = value
    if path_txt is not None:
        with open(path_txt, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    if path_json is not None:
        with open(path_json, "w", encoding="utf-8") as fh:
            json.dump(blob, fh, indent=2, sort_keys=True)
            fh.write("\n")
