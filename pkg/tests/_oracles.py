"""Brute-force reference implementations shared across test modules.

Everything here is written for clarity over speed and stays independent of
the library code paths it checks.
"""

import numpy as np


def conv2d_loops(x, k, stride=1, padding="zero"):
    """Nested-loop cross-correlation with same-padding."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = k.shape
    oh, ow = -(-h // stride), -(-w // stride)
    pht = max((oh - 1) * stride + kh - h, 0)
    pwt = max((ow - 1) * stride + kw - w, 0)
    pt, pl = pht // 2, pwt // 2
    out = np.zeros((n, oc, oh, ow))
    for ni in range(n):
        for o in range(oc):
            for p in range(oh):
                for q in range(ow):
                    acc = 0.0
                    for ci in range(ic):
                        for i in range(kh):
                            for j in range(kw):
                                r = p * stride + i - pt
                                s = q * stride + j - pl
                                if padding == "replicate":
                                    r = min(max(r, 0), h - 1)
                                    s = min(max(s, 0), w - 1)
                                    v = x[ni, ci, r, s]
                                elif 0 <= r < h and 0 <= s < w:
                                    v = x[ni, ci, r, s]
                                else:
                                    v = 0.0
                                acc += v * k[o, ci, i, j]
                    out[ni, o, p, q] = acc
    return out


def bilinear_point(x, oh, ow):
    """Per-pixel half-pixel-center interpolation."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, oh, ow))
    for p in range(oh):
        for q in range(ow):
            sy = min(max((p + 0.5) * h / oh - 0.5, 0.0), h - 1.0)
            sx = min(max((q + 0.5) * w / ow - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            wy, wx = sy - y0, sx - x0
            out[:, :, p, q] = (
                x[:, :, y0, x0] * (1 - wy) * (1 - wx)
                + x[:, :, y0, x1] * (1 - wy) * wx
                + x[:, :, y1, x0] * wy * (1 - wx)
                + x[:, :, y1, x1] * wy * wx)
    return out


def flood_fill_segments(mask):
    """8-connected components by explicit flood fill.

    Returns a list of (pixel_list, area, perimeter) where the perimeter
    counts pixels with at least one 4-neighbor outside the segment (image
    border counts as outside).
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    seen = np.zeros_like(mask)
    segments = []
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            pixels = []
            while stack:
                r, c = stack.pop()
                pixels.append((r, c))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        if dr == 0 and dc == 0:
                            continue
                        rr, cc = r + dr, c + dc
                        if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] \
                                and not seen[rr, cc]:
                            seen[rr, cc] = True
                            stack.append((rr, cc))
            pixset = set(pixels)
            perim = 0
            for r, c in pixels:
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if not (0 <= rr < h and 0 <= cc < w) or (rr, cc) not in pixset:
                        perim += 1
                        break
            segments.append((pixels, len(pixels), perim))
    return segments


def contour_filter_bruteforce(mask, theta, phi):
    """Keep segments with area > theta and perimeter^2/area < phi."""
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros_like(mask)
    for pixels, area, perim in flood_fill_segments(mask):
        if area > theta and (perim ** 2) / area < phi:
            for r, c in pixels:
                out[r, c] = True
    return out


def metrics_by_counting(pred, gt, n_classes=3):
    """All five evaluation quantities by direct per-pixel counting."""
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    total = gt.size
    diag = {c: int(np.sum((gt == c) & (pred == c))) for c in range(n_classes)}
    row = {c: int(np.sum(gt == c)) for c in range(n_classes)}
    col = {c: int(np.sum(pred == c)) for c in range(n_classes)}
    present = [c for c in range(n_classes) if row[c] > 0]
    iu = {c: diag[c] / (row[c] + col[c] - diag[c]) for c in present}
    out = {
        "pixel_accuracy": sum(diag.values()) / total,
        "mean_accuracy": float(np.mean([diag[c] / row[c] for c in present])),
        "mean_iu": float(np.mean([iu[c] for c in present])),
        "fw_iu": sum(row[c] * iu[c] for c in present) / total,
    }
    ho = [iu[c] for c in (1, 2) if c in iu]
    out["hand_object_mean_iou"] = float(np.mean(ho)) if ho else None
    return out
