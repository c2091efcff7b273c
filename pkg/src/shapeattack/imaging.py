"""Frames, perturbation fusion, and the multi-scale transform family.

A frame is a ``uint8`` array of shape ``(height, width, channels)`` with
``channels`` in ``{1, 3}``. Three equal channels model 8-bit infrared
renderings; single-channel frames are accepted everywhere.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import InvalidParameterError
from .geometry import PixelSet, round_half_away

DEFAULT_EOT_SCALES = (0.7, 0.85, 1.0, 1.15, 1.3)


def as_frame(data) -> np.ndarray:
    """Validate and normalise to ``(H, W, C)`` uint8."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise InvalidParameterError(f"frame must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidParameterError("frame must be at least 1x1")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255) or np.any(arr != np.floor(arr)):
            raise InvalidParameterError("frame intensities must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def frame_size(frame: np.ndarray) -> tuple[int, int]:
    """``(width, height)``"""
    return int(frame.shape[1]), int(frame.shape[0])


def load_frame(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I"):
            arr = np.array(im.convert("L"))
        else:
            arr = np.array(im.convert("RGB"))
    return as_frame(arr)


def _to_image(frame: np.ndarray) -> Image.Image:
    frame = as_frame(frame)
    if frame.shape[2] == 1:
        return Image.fromarray(frame[:, :, 0], mode="L")
    return Image.fromarray(frame, mode="RGB")


def save_frame(frame: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _to_image(frame).save(path, format="PNG")
    return path


def encode_png(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    _to_image(frame).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode == "L":
            return as_frame(np.array(im))
        return as_frame(np.array(im.convert("RGB")))


def fuse(clean: np.ndarray, perturb_pixels: PixelSet, color: Sequence[int],
         alpha: float = 1.0) -> np.ndarray:
    """Paint ``perturb_pixels`` onto a copy of ``clean``.

    ``alpha=1`` is a full-opacity overwrite. Smaller values blend linearly,
    ``round((1 - alpha) * clean + alpha * color)``. Single-channel frames
    take the rounded mean of ``color``.
    """
    clean = as_frame(clean)
    grid = perturb_pixels.grid
    if grid.shape != clean.shape[:2]:
        raise InvalidParameterError(
            f"pixel set is {perturb_pixels.width}x{perturb_pixels.height}, "
            f"frame is {clean.shape[1]}x{clean.shape[0]}"
        )
    if not 0.0 < alpha <= 1.0:
        raise InvalidParameterError("fusion alpha must be in (0, 1]")
    c = np.asarray([int(v) for v in color], dtype=np.float64)
    if clean.shape[2] == 1:
        c = np.floor(c.mean(keepdims=True) + 0.5)
    out = clean.copy()
    if alpha == 1.0:
        out[grid] = c.astype(np.uint8)
    else:
        blended = (1.0 - alpha) * out[grid].astype(np.float64) + alpha * c
        out[grid] = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return out


@dataclass(frozen=True)
class TransformSpec:
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidParameterError(f"scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class TransformSet:
    transforms: tuple[TransformSpec, ...]

    def __post_init__(self):
        ts = tuple(t if isinstance(t, TransformSpec) else TransformSpec(float(t))
                   for t in self.transforms)
        if not ts:
            raise InvalidParameterError("transform set must not be empty")
        if not any(t.scale == 1.0 for t in ts):
            raise InvalidParameterError("transform set must contain the identity scale 1.0")
        object.__setattr__(self, "transforms", ts)

    @classmethod
    def from_scales(cls, scales: Sequence[float]) -> "TransformSet":
        return cls(tuple(TransformSpec(float(s)) for s in scales))

    @classmethod
    def identity(cls) -> "TransformSet":
        return cls((TransformSpec(1.0),))

    @property
    def scales(self) -> list[float]:
        return [t.scale for t in self.transforms]

    def __len__(self) -> int:
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)


def scaled_size(width: int, height: int, scale: float) -> tuple[int, int]:
    return int(round_half_away(width * scale)), int(round_half_away(height * scale))


def apply_transform(frame: np.ndarray, t: TransformSpec) -> np.ndarray:
    """Bilinear resample to ``(round(W*s), round(H*s))``.

    Pixel centers are aligned (``src = (dst + 0.5) * W / W' - 0.5``, clamped
    to the edge) and results are rounded half-up. The whole computation is
    done in exact integer arithmetic, so output is identical across runs
    and platforms.
    """
    frame = as_frame(frame)
    if not t.scale > 0:
        raise InvalidParameterError("scale must be > 0")
    if t.scale == 1.0:
        return frame.copy()
    h, w = frame.shape[:2]
    nw, nh = scaled_size(w, h, t.scale)
    if nw < 1 or nh < 1:
        raise InvalidParameterError(f"scale {t.scale} shrinks {w}x{h} to nothing")

    def axis(n_out, n_in):
        # source position as num / den
        den = 2 * n_out
        num = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
        num = np.clip(num, 0, (n_in - 1) * den)
        lo = num // den
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, num - lo * den, den

    x0, x1, wx, dx = axis(nw, w)
    y0, y1, wy, dy = axis(nh, h)
    f = frame.astype(np.int64)
    wx = wx[None, :, None]
    top = f[y0][:, x0] * (dx - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (dx - wx) + f[y1][:, x1] * wx
    wy = wy[:, None, None]
    num = top * (dy - wy) + bot * wy
    den = dx * dy
    return np.clip((2 * num + den) // (2 * den), 0, 255).astype(np.uint8)


def eot_expand(adv: np.ndarray, transforms: TransformSet) -> list[np.ndarray]:
    return [apply_transform(adv, t) for t in transforms]


def scale_box(box: Sequence[float], src_size: tuple[int, int],
              dst_size: tuple[int, int]) -> tuple[int, int, int, int]:
    """Map a box between frame resolutions, rounding each edge."""
    sx = dst_size[0] / src_size[0]
    sy = dst_size[1] / src_size[1]
    x1, y1, x2, y2 = box
    return tuple(int(v) for v in round_half_away([x1 * sx, y1 * sy, x2 * sx, y2 * sy]))
