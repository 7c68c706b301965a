"""Procedural hand/object scene generator.

Each frame composes a hand (ellipse palm plus 3-5 finger capsules, skin
colored, on a near depth plane with a smooth gradient) interacting with an
object (disc or regular polygon, non-skin colored, 40-115 mm behind the
hand) over an empty background (no depth return). The hand occludes the
object where they overlap, and ground-truth labels fall out of the
construction. All depths stay well inside a 160 mm window above the
frame's nearest return so the annotation crop keeps the full scene.

The injection helpers fabricate the two failure modes the annotation
pipeline must absorb: isolated color speckle and a misaligned skin-colored
band over the background ("sliver") that only contour filtering can
reject.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import LABEL_HAND, LABEL_OBJECT, hsv_to_rgb

SLIVER_THICKNESS = 3
SLIVER_CLEARANCE = 5  # Chebyshev gap to hand pixels; closing bridges <= 2


@dataclass
class Frame:
    depth: np.ndarray   # uint16, millimeters, 0 = no return
    color: np.ndarray   # uint8 RGB
    label: np.ndarray   # uint8 in {0,1,2}
    contact: bool       # hand overlaps the object region


def _grid(size):
    return np.mgrid[0:size, 0:size].astype(np.float64)


def _ellipse(size, center, axes, theta):
    yy, xx = _grid(size)
    dy, dx = yy - center[0], xx - center[1]
    c, s = np.cos(theta), np.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _capsule(size, p0, p1, radius):
    yy, xx = _grid(size)
    d = np.array([p1[0] - p0[0], p1[1] - p0[1]])
    L2 = max(float(d @ d), 1e-9)
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / L2, 0.0, 1.0)
    cy, cx = p0[0] + t * d[0], p0[1] + t * d[1]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _polygon(size, center, radius, n_sides, theta):
    """Convex regular polygon as an intersection of half planes."""
    yy, xx = _grid(size)
    inside = np.ones((size, size), dtype=bool)
    angles = theta + np.arange(n_sides) * 2.0 * np.pi / n_sides
    apothem = radius * np.cos(np.pi / n_sides)
    for a in angles:
        ny, nx = np.sin(a), np.cos(a)
        inside &= ((yy - center[0]) * ny + (xx - center[1]) * nx) <= apothem
    return inside


def _render_hand(size, rng, u):
    cy = size / 2.0 + rng.uniform(-3.0, 3.0) * u
    cx = size / 2.0 + rng.uniform(-3.0, 3.0) * u
    theta = rng.uniform(0.0, 2.0 * np.pi)
    dy, dx = np.sin(theta), np.cos(theta)

    a = rng.uniform(10.0, 12.0) * u
    b = rng.uniform(7.5, 9.0) * u
    palm_c = (cy - dy * 11.0 * u, cx - dx * 11.0 * u)
    mask = _ellipse(size, palm_c, (a, b), theta)

    n_fingers = int(rng.integers(3, 6))
    spread = np.deg2rad(64.0)
    flen = rng.uniform(8.0, 11.0) * u
    frad = rng.uniform(2.6, 3.1) * u
    tip_reach = 0.0
    for i in range(n_fingers):
        off = (i / (n_fingers - 1) - 0.5) * spread if n_fingers > 1 else 0.0
        fd = theta + off
        fy, fx = np.sin(fd), np.cos(fd)
        base = (palm_c[0] + fy * 0.75 * a, palm_c[1] + fx * 0.75 * a)
        tip = (base[0] + fy * flen, base[1] + fx * flen)
        mask |= _capsule(size, base, tip, frad)
        tip_reach = max(tip_reach, 0.75 * a + flen)
    return mask, palm_c, theta, a, tip_reach


def _render_object(size, rng, u, palm_c, theta, a, tip_reach, contact):
    radius = rng.uniform(11.0, 14.0) * u
    gamma = rng.uniform(0.35, 0.7) if contact else rng.uniform(1.5, 1.8)
    dist = 0.2 * a + tip_reach + gamma * radius
    dy, dx = np.sin(theta), np.cos(theta)
    center = (palm_c[0] + dy * dist, palm_c[1] + dx * dist)
    if rng.random() < 0.5:
        return _ellipse(size, center, (radius, radius), 0.0)
    return _polygon(size, center, radius * 1.1, int(rng.integers(5, 7)),
                    rng.uniform(0, np.pi))


def _along(size, center, theta):
    yy, xx = _grid(size)
    return (yy - center[0]) * np.sin(theta) + (xx - center[1]) * np.cos(theta)


def synth_frame(size: int, rng: np.random.Generator,
                force_contact: bool = False) -> Frame:
    u = size / 64.0
    hand, palm_c, theta, a, tip_reach = _render_hand(size, rng, u)
    wants_contact = force_contact or rng.random() < 0.75
    obj_full = _render_object(size, rng, u, palm_c, theta, a, tip_reach,
                              wants_contact)
    contact = bool((hand & obj_full).any())
    obj = obj_full & ~hand  # the hand occludes the object

    z0 = rng.uniform(400.0, 520.0)
    depth = np.zeros((size, size), dtype=np.float64)
    hand_slope = rng.uniform(-0.6, 0.6)
    depth[hand] = np.clip(z0 + hand_slope * _along(size, palm_c, theta)[hand],
                          z0 - 20.0, z0 + 20.0)
    z_obj = z0 + rng.uniform(45.0, 110.0)
    obj_slope = rng.uniform(-0.2, 0.2)
    depth[obj] = np.clip(z_obj + obj_slope * _along(size, palm_c, theta)[obj],
                         z0 + 40.0, z0 + 115.0)

    color = np.zeros((size, size, 3), dtype=np.uint8)
    color[:, :] = hsv_to_rgb(rng.uniform(180, 260), 0.1, rng.uniform(0.05, 0.15))
    skin_h = rng.uniform(6.0, 20.0)
    skin_s = rng.uniform(0.32, 0.68)
    skin_v = rng.uniform(0.45, 0.85)
    color[hand] = hsv_to_rgb(skin_h, skin_s, skin_v)
    color[obj] = hsv_to_rgb(rng.uniform(70.0, 310.0), rng.uniform(0.4, 0.8),
                            rng.uniform(0.4, 0.84))

    label = np.zeros((size, size), dtype=np.uint8)
    label[obj] = LABEL_OBJECT
    label[hand] = LABEL_HAND
    return Frame(depth=np.round(depth).astype(np.uint16), color=color,
                 label=label, contact=contact)


def synth_dataset(n_frames: int, image_size: int = 64, rng=7) -> list:
    """Generate frames; at least every fourth frame is forced into
    hand-object contact so the >= 10% occlusion share always holds."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return [synth_frame(image_size, rng, force_contact=(i % 4 == 0))
            for i in range(n_frames)]


# ---------------------------------------------------------------------------
# corruption helpers for robustness experiments
# ---------------------------------------------------------------------------

def inject_color_noise(frame: Frame, rng: np.random.Generator,
                       n_pixels: int = 6, avoid: np.ndarray | None = None) -> Frame:
    """Recolor isolated random pixels (some skin-toned, some not).

    `avoid` masks pixels that must stay untouched, e.g. an injected sliver
    whose geometry a test depends on.
    """
    size = frame.color.shape[0]
    color = frame.color.copy()
    placed = 0
    while placed < n_pixels:
        r, c = int(rng.integers(size)), int(rng.integers(size))
        if avoid is not None and avoid[r, c]:
            continue
        placed += 1
        if rng.random() < 0.5:
            color[r, c] = hsv_to_rgb(rng.uniform(0, 25), rng.uniform(0.3, 0.7),
                                     rng.uniform(0.45, 0.9))
        else:
            color[r, c] = hsv_to_rgb(rng.uniform(70, 310), rng.uniform(0.4, 0.8),
                                     rng.uniform(0.4, 0.84))
    return Frame(frame.depth, color, frame.label, frame.contact)


def _chebyshev_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for axis in (0, 1):
        acc = out.copy()
        for shift in range(1, radius + 1):
            pos = np.zeros_like(out)
            neg = np.zeros_like(out)
            if axis == 0:
                pos[shift:] = out[:-shift]
                neg[:-shift] = out[shift:]
            else:
                pos[:, shift:] = out[:, :-shift]
                neg[:, :-shift] = out[:, shift:]
            acc |= pos | neg
        out = acc
    return out


def inject_sliver(frame: Frame, rng: np.random.Generator,
                  length: int | None = None) -> tuple:
    """Paint a misaligned skin-colored band over background pixels.

    The band gets a valid depth near the hand plane, so it survives the
    depth crop and thresholds as a spurious thin hand segment; its true
    class remains background. It is kept clear of the hand mask so
    morphological closing cannot merge it. Returns (corrupted frame,
    sliver mask). For the default geometry (3 x 50 at 64 px) the band's
    compactness is (2L+2)^2 / 3L ~ 69, above the default filter threshold.
    """
    size = frame.depth.shape[0]
    if length is None:
        length = max(int(round(50 * size / 64.0)), 46)
    hand = frame.label == LABEL_HAND
    forbidden = _chebyshev_dilate(hand, SLIVER_CLEARANCE)
    allowed = (frame.depth == 0) & ~forbidden

    candidates = []
    for r in range(1, size - SLIVER_THICKNESS - 1):
        ok = allowed[r:r + SLIVER_THICKNESS].all(axis=0)
        run = 0
        for c in range(size):
            run = run + 1 if ok[c] else 0
            if run >= length:
                candidates.append((r, c - length + 1, False))
    for c in range(1, size - SLIVER_THICKNESS - 1):
        ok = allowed[:, c:c + SLIVER_THICKNESS].all(axis=1)
        run = 0
        for r in range(size):
            run = run + 1 if ok[r] else 0
            if run >= length:
                candidates.append((r - length + 1, c, True))
    if not candidates:
        raise RuntimeError("no room for a sliver in this frame")

    r, c, vertical = candidates[int(rng.integers(len(candidates)))]
    sliver = np.zeros((size, size), dtype=bool)
    if vertical:
        sliver[r:r + length, c:c + SLIVER_THICKNESS] = True
    else:
        sliver[r:r + SLIVER_THICKNESS, c:c + length] = True

    hand_depth = int(np.median(frame.depth[hand]))
    depth = frame.depth.copy()
    depth[sliver] = hand_depth
    color = frame.color.copy()
    color[sliver] = hsv_to_rgb(rng.uniform(6, 20), rng.uniform(0.35, 0.65),
                               rng.uniform(0.5, 0.85))
    return Frame(depth, color, frame.label, frame.contact), sliver
