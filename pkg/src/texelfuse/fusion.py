"""Per-texel probability accumulation and the weighted aggregation rules.

A probability texture is a dense (total_texels, num_classes) table: row
``layout.offsets[t] + x`` holds the running aggregate for texel ``x`` of
triangle ``t``. Three aggregation rules are supported, all folds over
weighted per-pixel class distributions followed by one L1 normalization:

* ``sum``    - weighted arithmetic mean: rows accumulate ``w * p``.
* ``maxsum`` - like sum but each pixel first keeps only its maximal
  component(s), all others zeroed, so confident pixels vote winner-take-all.
* ``mul``    - weighted geometric (Bayesian) fusion: rows accumulate
  ``w * log(p)`` with p clamped to [MUL_CLAMP, 1]; finalization shifts by
  the row maximum before exponentiating so long products cannot underflow.

Accumulation is order-independent up to float rounding, which is what makes
frame-parallel schedules safe; accumulators are float64 and finalized rows
are stored float32.

Reference vectors (two unit-weight pixels on one texel, two classes):

    sum     (0.6, 0.4) + (0.2, 0.8)   -> (0.4, 0.6)
    mul     (0.6, 0.4) + (0.6, 0.4)   -> (0.36, 0.16)/0.52 = (9/13, 4/13)
    maxsum  (0.6, 0.4) + (0.45, 0.55) -> (0.6, 0.55)/1.15
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DataError
from .geometry import TexelLayout
from .rasterizer import IdImage

AGGREGATORS = ("sum", "maxsum", "mul")
WEIGHT_MODES = ("pixels_iid", "images_iid", "blend")

# Probabilities entering the log-space product are clamped to at least this,
# bounding any single observation's veto at log(MUL_CLAMP).
MUL_CLAMP = 1e-7

# Label sentinel: unobserved texel / uncovered or unlabeled pixel.
UNKNOWN = -1

DEFAULT_MEMORY_BUDGET = 4 * 1024**3


@dataclass
class ProbabilityTexture:
    """Accumulation state for one mesh layout; see module docstring."""

    layout: TexelLayout
    num_classes: int
    aggregator: str
    accum: np.ndarray  # (n, c) float64; log-space for mul
    counts: np.ndarray  # (n,) int64 observations per texel
    finalized: bool = False
    rows: np.ndarray | None = None  # (n, c) float32 after finalize
    unobserved: np.ndarray | None = None  # (n,) bool after finalize

    @property
    def total_texels(self) -> int:
        return self.layout.total_texels


def texture_nbytes(total_texels: int, num_classes: int) -> int:
    """Bytes needed for accumulator, counts, and finalized rows."""
    return total_texels * num_classes * 12 + total_texels * 8


def init_texture(
    layout: TexelLayout,
    num_classes: int,
    aggregator: str = "mul",
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> ProbabilityTexture:
    """Allocate a zeroed texture (zero is the fold identity for every rule)."""
    if aggregator not in AGGREGATORS:
        raise ValueError("unknown aggregator %r (expected one of %s)" % (aggregator, AGGREGATORS))
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    need = texture_nbytes(layout.total_texels, num_classes)
    if need > memory_budget:
        raise CapacityError(
            "probability texture needs %d bytes (%d texels x %d classes) "
            "but the memory budget is %d bytes" % (need, layout.total_texels, num_classes, memory_budget)
        )
    return ProbabilityTexture(
        layout=layout,
        num_classes=num_classes,
        aggregator=aggregator,
        accum=np.zeros((layout.total_texels, num_classes), dtype=np.float64),
        counts=np.zeros(layout.total_texels, dtype=np.int64),
    )


def parse_weight_mode(spec: str):
    """Parse 'pixels_iid' | 'images_iid' | 'blend:<alpha>' into (mode, alpha)."""
    spec = spec.strip()
    if spec in ("pixels_iid", "images_iid"):
        return spec, None
    for pre, post in (("blend:", ""), ("blend(", ")")):
        if spec.startswith(pre) and spec.endswith(post):
            body = spec[len(pre) : len(spec) - len(post)]
            try:
                alpha = float(body)
            except ValueError:
                break
            if not 0.0 <= alpha <= 1.0:
                raise ValueError("blend alpha %g outside [0, 1]" % alpha)
            return "blend", alpha
    raise ValueError("unknown weight mode %r" % spec)


def compute_pixel_weights(ids: IdImage, mode: str, alpha: float | None = None) -> np.ndarray:
    """Per-pixel fusion weight for one frame; uncovered pixels get 0.

    ``pixels_iid`` weights every covered pixel 1 (pixels treated as
    independent evidence). ``images_iid`` divides by the number of this
    frame's pixels landing on the same texel, so each image contributes
    total weight 1 per texel it sees, however close it is. ``blend`` is the
    convex mix (1 - alpha) * pixels + alpha * images.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError("unknown weight mode %r (expected one of %s)" % (mode, WEIGHT_MODES))
    if mode == "blend":
        if alpha is None or not 0.0 <= alpha <= 1.0:
            raise ValueError("blend weight mode needs alpha in [0, 1]")
    w = np.zeros((ids.height, ids.width), dtype=np.float64)
    cov = ids.covered
    if not cov.any():
        return w
    if mode == "pixels_iid":
        w[cov] = 1.0
        return w
    key = ids.triangle[cov].astype(np.int64) << 32 | ids.texel[cov].astype(np.int64)
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    per_image = 1.0 / counts[inverse]
    if mode == "images_iid":
        w[cov] = per_image
    else:
        w[cov] = (1.0 - alpha) + alpha * per_image
    return w


def accumulate_frame(
    tex: ProbabilityTexture, ids: IdImage, probs: np.ndarray, weights: np.ndarray
) -> ProbabilityTexture:
    """Fold one frame's class distributions into the texture.

    ``probs`` is (H, W, num_classes); rows at uncovered pixels are ignored.
    Calls commute up to float rounding, so any frame order yields the same
    texture within tolerance; a fixed order reproduces results bit-exactly.
    """
    if tex.finalized:
        raise RuntimeError("texture is already finalized")
    H, W = ids.height, ids.width
    if probs.shape != (H, W, tex.num_classes):
        raise DataError(
            "probability image shape %s does not match frame %dx%d with %d classes"
            % (probs.shape, W, H, tex.num_classes)
        )
    if weights.shape != (H, W):
        raise DataError("weight image shape %s does not match frame" % (weights.shape,))
    cov = ids.covered
    if not cov.any():
        return tex
    rows = tex.layout.offsets[ids.triangle[cov]] + ids.texel[cov]
    p = probs[cov].astype(np.float64)
    w = weights[cov].astype(np.float64)

    if tex.aggregator == "sum":
        contrib = w[:, None] * p
    elif tex.aggregator == "maxsum":
        keep = p == p.max(axis=1, keepdims=True)  # ties all survive
        contrib = w[:, None] * np.where(keep, p, 0.0)
    else:  # mul, accumulated in log space
        contrib = w[:, None] * np.log(np.clip(p, MUL_CLAMP, 1.0))

    n = tex.total_texels
    for k in range(tex.num_classes):
        tex.accum[:, k] += np.bincount(rows, weights=contrib[:, k], minlength=n)
    tex.counts += np.bincount(rows, minlength=n)
    return tex


def finalize(tex: ProbabilityTexture) -> ProbabilityTexture:
    """Normalize accumulated rows into per-texel class distributions.

    Unobserved rows become the uniform distribution and are flagged; for
    sum/maxsum an observed row can still be all-zero (every contribution had
    zero mass), which is flagged unobserved rather than divided by zero.
    """
    if tex.finalized:
        raise RuntimeError("texture is already finalized")
    c = tex.num_classes
    if tex.aggregator == "mul":
        unobserved = tex.counts == 0
        shifted = tex.accum - tex.accum.max(axis=1, keepdims=True)
        rows = np.exp(shifted)
        rows /= rows.sum(axis=1, keepdims=True)
    else:
        norm = tex.accum.sum(axis=1)
        unobserved = (tex.counts == 0) | (norm <= 0)
        safe = np.where(norm > 0, norm, 1.0)
        rows = tex.accum / safe[:, None]
    rows[unobserved] = 1.0 / c
    tex.rows = rows.astype(np.float32)
    tex.unobserved = unobserved
    tex.finalized = True
    return tex


def texel_argmax(tex: ProbabilityTexture) -> np.ndarray:
    """Most probable class per texel; UNKNOWN where unobserved.

    Ties resolve to the smallest class index (argmax convention).
    """
    if not tex.finalized:
        raise RuntimeError("texture must be finalized before argmax")
    labels = tex.rows.argmax(axis=1).astype(np.int32)
    labels[tex.unobserved] = UNKNOWN
    return labels
