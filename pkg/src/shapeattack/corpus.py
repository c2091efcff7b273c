"""Synthetic infrared-style corpus for exercising the attack offline.

Each frame is a mid-gray noisy background with one warm pedestrian
silhouette (head disc over a torso/legs block). The annotated box is the
silhouette's tight bounding box.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imaging import save_frame
from .runs import ManifestEntry, write_manifest


def synth_frame(rng: np.random.Generator, width: int = 160, height: int = 120,
                box_w=(12, 26), box_h=(30, 60)):
    """Return ``(frame, box)`` for one pedestrian."""
    bw = int(rng.integers(box_w[0], box_w[1] + 1))
    bh = int(rng.integers(box_h[0], box_h[1] + 1))
    x1 = int(rng.integers(2, width - bw - 2))
    y1 = int(rng.integers(2, height - bh - 2))
    img = rng.normal(90, 8, size=(height, width)).clip(70, 120)

    body = np.zeros((height, width), dtype=bool)
    head_r = max(2, bw // 4)
    cx = x1 + bw // 2
    yy, xx = np.mgrid[0:height, 0:width]
    body |= (xx - cx) ** 2 + (yy - (y1 + head_r)) ** 2 <= head_r ** 2
    body[y1 + 2 * head_r:y1 + bh, x1:x1 + bw] = True
    img[body] = rng.normal(200, 12, size=int(body.sum())).clip(150, 245)

    ys, xs = np.nonzero(body)
    box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    gray = np.floor(img + 0.5).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2), box


def make_corpus(out_dir, n: int = 50, seed: int = 0, width: int = 160, height: int = 120) -> Path:
    """Write ``n`` frames plus ``manifest.json`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    entries = []
    for k in range(n):
        frame, box = synth_frame(rng, width, height)
        path = save_frame(frame, out / "images" / f"frame_{k:03d}.png")
        entries.append(ManifestEntry(f"frame_{k:03d}", path, [box]))
    return write_manifest(entries, out / "manifest.json")
