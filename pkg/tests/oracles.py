"""Slow, obviously-correct reference implementations used only by tests.

None of these call into the vectorized code paths they check.
"""

import math
import random

import numpy as np


def naive_weights(n_frames, lam):
    raw = [math.exp(-lam * (n_frames - 2 - i)) for i in range(n_frames - 1)]
    total = math.fsum(raw)
    return [w / total for w in raw]


def naive_draw(n_frames, n, lam, rng):
    """Sequential weighted picks, renormalizing after each one. Returns picks in draw order."""
    pool = list(range(n_frames - 1))
    weights = naive_weights(n_frames, lam) if n_frames >= 2 else []
    picks = []
    for _ in range(min(n - 1, n_frames - 1)):
        total = sum(weights)
        r = rng.random() * total
        acc = 0.0
        chosen = len(pool) - 1
        for j, w in enumerate(weights):
            acc += w
            if r < acc:
                chosen = j
                break
        picks.append(pool.pop(chosen))
        weights.pop(chosen)
    return picks


def _rhu(v):
    return math.floor(v + 0.5)


def naive_trail_color(k, count, recent=(255, 0, 0), oldest=(0, 0, 255)):
    if count == 1:
        return recent
    t = k / (count - 1)
    return tuple(_rhu(a + (b - a) * t) for a, b in zip(recent, oldest))


def naive_gaze(pixels, fixations, t, window=15, radius=8, line_width=3):
    """Per-pixel rasterization of the trail rules.

    ``fixations`` is a list of (timestamp, x, y) sorted by time.
    """
    out = pixels.copy()
    h, w = out.shape[:2]
    visible = [f for f in fixations if f[0] <= t][-window:]
    if not visible:
        return out
    pts = [(_rhu(x * (w - 1)), _rhu(y * (h - 1))) for _, x, y in visible]
    K = len(pts)
    cols = [naive_trail_color(K - 1 - j, K) for j in range(K)]
    hw = line_width / 2
    for j in range(K - 1):
        (x0, y0), (x1, y1) = pts[j], pts[j + 1]
        for py in range(h):
            for px in range(w):
                dx, dy = x1 - x0, y1 - y0
                L = dx * dx + dy * dy
                s = 0.0 if L == 0 else min(1.0, max(0.0, ((px - x0) * dx + (py - y0) * dy) / L))
                qx, qy = x0 + s * dx, y0 + s * dy
                if (px - qx) ** 2 + (py - qy) ** 2 <= hw * hw:
                    out[py, px] = cols[j]
    for j in range(K):
        cx, cy = pts[j]
        for py in range(h):
            for px in range(w):
                if (px - cx) ** 2 + (py - cy) ** 2 <= radius * radius:
                    out[py, px] = cols[j]
    return out


def naive_erode(mask, iterations):
    h, w = mask.shape
    cur = mask.copy()
    for _ in range(iterations):
        nxt = cur.copy()
        for y in range(h):
            for x in range(w):
                if not cur[y, x]:
                    continue
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and not cur[yy, xx]:
                        nxt[y, x] = False
                        break
        cur = nxt
    return cur


def naive_som(pixels, regions, colors, alpha, contour_width=2, contours=True):
    """``regions``: list of (id, bool mask); ``colors``: id -> RGB."""
    out = pixels.astype(np.int64).copy()
    h, w = out.shape[:2]
    for rid, mask in sorted(regions, key=lambda r: r[0]):
        c = colors[rid]
        for y in range(h):
            for x in range(w):
                if mask[y, x]:
                    for ch in range(3):
                        out[y, x, ch] = _rhu((1 - alpha) * float(out[y, x, ch]) + alpha * c[ch])
        if contours:
            inner = naive_erode(mask, contour_width)
            for y in range(h):
                for x in range(w):
                    if mask[y, x] and not inner[y, x]:
                        out[y, x] = c
    return out.astype(np.uint8)


def gradient_frame(size=64):
    yy, xx = np.mgrid[:size, :size]
    img = np.stack([xx * 4 % 256, yy * 4 % 256, (xx + yy) * 2 % 256], axis=-1)
    return img.astype(np.uint8)


def seeded(seed):
    return random.Random(seed)


KITCHEN_CANDIDATES = ("The lid.", "The pot with handle.", "The egg.", "The pan.", "The glass bowl.")
BASE_QUESTION_TEXT = "What object will the person interact with next, ignoring ongoing interactions?"


def kitchen_record():
    from gazesom.data import QuestionRecord

    return QuestionRecord("kitchen", "P01-demo", BASE_QUESTION_TEXT, KITCHEN_CANDIDATES, 4)
