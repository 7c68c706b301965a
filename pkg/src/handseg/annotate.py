"""Auto-annotation of aligned depth/color frame pairs.

A frame is labeled in four steps: keep only pixels within a fixed depth
range of the nearest surface, split that foreground into skin and non-skin
via HSV thresholds, clean each binary mask with morphological
opening/closing, and drop connected components that are too small or too
elongated. The result is a 3-class label map: 0 background, 1 hand,
2 object.

Depth maps are H x W arrays in millimeters with 0 meaning no sensor
return; color images are H x W x 3 uint8; masks are boolean H x W.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

DEPTH_RANGE_MM = 160.0
DEFAULT_THETA = 64.0
DEFAULT_PHI = 64.0

LABEL_BACKGROUND = 0
LABEL_HAND = 1
LABEL_OBJECT = 2

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class EmptyFrameError(ValueError):
    """Depth map contains no valid returns."""


@dataclass(frozen=True)
class HsvThresholds:
    """Per-channel bounds describing skin color.

    Hue wraps: an upper bound above 360 continues past zero, so the default
    (340, 385) covers [340, 360) and [0, 25]. Saturation and value are
    plain closed intervals in [0, 1].
    """

    h_lo: float = 340.0
    h_hi: float = 385.0
    s_lo: float = 0.2
    s_hi: float = 0.8
    v_lo: float = 0.3
    v_hi: float = 1.0

    def __post_init__(self):
        for lo, hi, name in ((self.h_lo, self.h_hi, "hue"),
                             (self.s_lo, self.s_hi, "saturation"),
                             (self.v_lo, self.v_hi, "value")):
            if lo > hi:
                raise ValueError(f"{name} lower bound {lo} exceeds upper {hi}")
        if self.h_hi - self.h_lo >= 360.0:
            raise ValueError("hue interval spans the full circle")

    def contains(self, hsv: np.ndarray) -> np.ndarray:
        h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
        hue_ok = np.mod(h - self.h_lo, 360.0) <= (self.h_hi - self.h_lo)
        return (hue_ok & (s >= self.s_lo) & (s <= self.s_hi)
                & (v >= self.v_lo) & (v <= self.v_hi))


@dataclass
class Segment:
    """One 8-connected component of a binary mask.

    Perimeter counts pixels with at least one 4-neighbor outside the
    segment; the image border counts as outside.
    """

    pixels: np.ndarray  # (area, 2) row/col coordinates
    area: int
    perimeter: int

    @property
    def compactness(self) -> float:
        return self.perimeter ** 2 / self.area


def crop_depth_range(depth: np.ndarray, range_mm: float = DEPTH_RANGE_MM) -> np.ndarray:
    """Mask of pixels within `range_mm` of the nearest valid depth.

    The hand and object are assumed to be the closest surfaces; zero-depth
    (no-return) pixels never pass.
    """
    depth = np.asarray(depth)
    valid = depth > 0
    if not valid.any():
        raise EmptyFrameError("empty frame: depth map has no valid pixels")
    d_min = depth[valid].min()
    return valid & (depth <= d_min + range_mm)


def rgb_to_hsv(color: np.ndarray) -> np.ndarray:
    """Hexcone RGB[0,255] -> HSV with h in [0,360), s and v in [0,1].

    Gray pixels get s = 0 and, by convention, h = 0.
    """
    rgb = np.asarray(color, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    delta = v - rgb.min(axis=-1)
    chromatic = delta > 0

    s = np.zeros_like(v)
    np.divide(delta, v, out=s, where=v > 0)

    h = np.zeros_like(v)
    safe = np.where(chromatic, delta, 1.0)
    rmax = chromatic & (v == r)
    gmax = chromatic & (v == g) & ~rmax
    bmax = chromatic & ~rmax & ~gmax
    h[rmax] = np.mod((g - b)[rmax] / safe[rmax], 6.0)
    h[gmax] = (b - r)[gmax] / safe[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / safe[bmax] + 4.0
    return np.stack([h * 60.0, s, v], axis=-1)


def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Inverse hexcone conversion to uint8 RGB (used by scene generators)."""
    h = np.mod(np.asarray(h, dtype=np.float64), 360.0) / 60.0
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.choose(i, [c[0] for c in table])
    g = np.choose(i, [c[1] for c in table])
    b = np.choose(i, [c[2] for c in table])
    return np.clip(np.round(np.stack([r, g, b], axis=-1) * 255.0), 0, 255).astype(np.uint8)


def hsv_threshold(hsv: np.ndarray, fg: np.ndarray,
                  thresholds: HsvThresholds) -> tuple:
    """Split the foreground into (hand, object) by skin-color bounds.

    The two masks partition `fg`: skin-colored pixels become hand, the rest
    object.
    """
    skin = thresholds.contains(hsv)
    hand = fg & skin
    return hand, fg & ~skin


def _erode(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    return sliding_window_view(p, (3, 3)).all(axis=(2, 3))


def _dilate(mask: np.ndarray) -> np.ndarray:
    p = np.pad(mask, 1, constant_values=False)
    return sliding_window_view(p, (3, 3)).any(axis=(2, 3))


def morph_filter(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Morphological opening then closing with a square structuring element.

    Computed on a padded copy so the result equals the infinite-plane
    (world-is-false) operator, which makes the open-close composition
    exactly idempotent.
    """
    mask = np.asarray(mask, dtype=bool)
    pad = 2 * radius
    m = np.pad(mask, pad, constant_values=False)
    for _ in range(radius):  # opening: erode then dilate
        m = _erode(m)
    for _ in range(2 * radius):  # ... then closing: dilate then erode
        m = _dilate(m)
    for _ in range(radius):
        m = _erode(m)
    return m[pad:-pad, pad:-pad]


def _label_stats(mask: np.ndarray):
    """8-connected labeling with per-segment area and boundary-pixel counts."""
    labels, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if count == 0:
        return labels, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    areas = np.bincount(labels.ravel(), minlength=count + 1)[1:]

    p = np.pad(mask, 1, constant_values=False)
    interior = (p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:])
    boundary = mask & ~interior
    perims = np.bincount(labels[boundary].ravel(), minlength=count + 1)[1:]
    return labels, areas, perims


def connected_components(mask: np.ndarray) -> list:
    """All 8-connected segments of the mask with area/perimeter statistics."""
    mask = np.asarray(mask, dtype=bool)
    labels, areas, perims = _label_stats(mask)
    if areas.size == 0:
        return []
    rows, cols = np.nonzero(mask)
    labs = labels[rows, cols]
    order = np.argsort(labs, kind="stable")
    coords = np.stack([rows[order], cols[order]], axis=1)
    starts = np.searchsorted(labs[order], np.arange(1, areas.size + 2))
    return [Segment(pixels=coords[starts[i]:starts[i + 1]],
                    area=int(areas[i]), perimeter=int(perims[i]))
            for i in range(areas.size)]


def contour_filter(mask: np.ndarray, theta: float = DEFAULT_THETA,
                   phi: float = DEFAULT_PHI) -> np.ndarray:
    """Keep segments whose area exceeds theta and whose squared perimeter
    over area stays below phi; everything else is cleared.

    Output is a subset of the input and the operation is idempotent.
    """
    if theta < 0 or phi <= 0:
        raise ValueError(f"need theta >= 0 and phi > 0, got theta={theta} phi={phi}")
    mask = np.asarray(mask, dtype=bool)
    labels, areas, perims = _label_stats(mask)
    if areas.size == 0:
        return np.zeros_like(mask)
    keep = (areas > theta) & (perims.astype(np.float64) ** 2 / areas < phi)
    lut = np.concatenate([[False], keep])
    return lut[labels]


def annotate_frame(depth: np.ndarray, color: np.ndarray,
                   thresholds: HsvThresholds = HsvThresholds(),
                   theta: float = DEFAULT_THETA,
                   phi: float = DEFAULT_PHI,
                   range_mm: float = DEPTH_RANGE_MM) -> np.ndarray:
    """Full auto-annotation of one aligned depth/color pair.

    Hand and object masks are cleaned independently; morphological closing
    can spill past the depth crop, so both are clipped back to it before
    contour filtering. Where the cleaned masks overlap, hand wins.
    """
    fg = crop_depth_range(depth, range_mm)
    hsv = rgb_to_hsv(color)
    hand, obj = hsv_threshold(hsv, fg, thresholds)
    hand = morph_filter(hand) & fg
    obj = morph_filter(obj) & fg
    hand = contour_filter(hand, theta, phi)
    obj = contour_filter(obj, theta, phi)

    labels = np.zeros(depth.shape, dtype=np.uint8)
    labels[obj] = LABEL_OBJECT
    labels[hand] = LABEL_HAND
    return labels
