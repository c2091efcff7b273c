"""Shape parameterizations and their rasterization onto a pixel grid.

Three perturbation families are supported:

- line sets: ``2n`` endpoints, traced with the integer midpoint rule and
  thickened by a square structuring element;
- polygons: ``k >= 3`` vertices, filled with an inclusive even-odd rule at
  pixel centers;
- axis-aligned ellipses: integer center plus horizontal/vertical semi-axes.

Coordinates are ``(i, j)`` = (column, row). Rasterizers return a
:class:`PixelSet`, a boolean grid of shape ``(height, width)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence, Union

import numpy as np

from .errors import InvalidParameterError

LINES = "lines"
POLYGON = "polygon"
ELLIPSE = "ellipse"
FAMILIES = (LINES, POLYGON, ELLIPSE)

DEFAULT_THICKNESS = 3


class Point(NamedTuple):
    i: int
    j: int


def _points(seq) -> tuple[Point, ...]:
    return tuple(Point(int(p[0]), int(p[1])) for p in seq)


@dataclass(frozen=True)
class LineSetParams:
    endpoints: tuple[Point, ...]
    thickness: int = DEFAULT_THICKNESS

    def __post_init__(self):
        object.__setattr__(self, "endpoints", _points(self.endpoints))
        n = len(self.endpoints)
        if n < 2 or n % 2:
            raise InvalidParameterError(
                f"line set needs an even number (>= 2) of endpoints, got {n}"
            )
        if int(self.thickness) < 1:
            raise InvalidParameterError("line thickness must be >= 1")

    @property
    def segments(self) -> list[tuple[Point, Point]]:
        pts = self.endpoints
        return [(pts[k], pts[k + 1]) for k in range(0, len(pts), 2)]


@dataclass(frozen=True)
class PolygonParams:
    vertices: tuple[Point, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", _points(self.vertices))
        if len(self.vertices) < 3:
            raise InvalidParameterError(
                f"polygon needs at least 3 vertices, got {len(self.vertices)}"
            )


@dataclass(frozen=True)
class EllipseParams:
    center: Point
    semi_axis_h: int
    semi_axis_v: int

    def __post_init__(self):
        object.__setattr__(self, "center", Point(int(self.center[0]), int(self.center[1])))
        if int(self.semi_axis_h) < 1 or int(self.semi_axis_v) < 1:
            raise InvalidParameterError("ellipse semi-axes must be >= 1")


Shape = Union[LineSetParams, PolygonParams, EllipseParams]


def _check_color(color) -> tuple[int, int, int]:
    c = tuple(int(v) for v in color)
    if len(c) != 3 or any(v < 0 or v > 255 for v in c):
        raise InvalidParameterError(f"color must be three channels in [0, 255], got {color!r}")
    return c


@dataclass(frozen=True)
class PerturbationSpec:
    shape: Shape
    color: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if not isinstance(self.shape, (LineSetParams, PolygonParams, EllipseParams)):
            raise InvalidParameterError(f"unknown shape variant {type(self.shape).__name__}")
        object.__setattr__(self, "color", _check_color(self.color))

    @property
    def family(self) -> str:
        return family_of(self.shape)

    def to_dict(self) -> dict:
        s = self.shape
        if isinstance(s, LineSetParams):
            shape = {"family": LINES, "endpoints": [list(p) for p in s.endpoints],
                     "thickness": s.thickness}
        elif isinstance(s, PolygonParams):
            shape = {"family": POLYGON, "vertices": [list(p) for p in s.vertices]}
        else:
            shape = {"family": ELLIPSE, "center": list(s.center),
                     "semi_axis_h": s.semi_axis_h, "semi_axis_v": s.semi_axis_v}
        return {"shape": shape, "color": list(self.color)}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        s = d["shape"]
        fam = s["family"]
        if fam == LINES:
            shape = LineSetParams(s["endpoints"], s.get("thickness", DEFAULT_THICKNESS))
        elif fam == POLYGON:
            shape = PolygonParams(s["vertices"])
        elif fam == ELLIPSE:
            shape = EllipseParams(s["center"], s["semi_axis_h"], s["semi_axis_v"])
        else:
            raise InvalidParameterError(f"unknown shape family {fam!r}")
        return cls(shape, tuple(d.get("color", (0, 0, 0))))


def family_of(shape: Shape) -> str:
    if isinstance(shape, LineSetParams):
        return LINES
    if isinstance(shape, PolygonParams):
        return POLYGON
    return ELLIPSE


@dataclass(frozen=True)
class ShapeKind:
    """A shape family plus its size: line count ``n`` or vertex count ``k``."""

    family: str
    count: int = 0
    thickness: int = DEFAULT_THICKNESS

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameterError(f"unknown shape family {self.family!r}")
        if self.family == LINES and self.count < 1:
            raise InvalidParameterError("line count must be >= 1")
        if self.family == POLYGON and self.count < 3:
            raise InvalidParameterError("polygon needs >= 3 vertices")
        if self.family == ELLIPSE:
            object.__setattr__(self, "count", 1)
        if self.thickness < 1:
            raise InvalidParameterError("line thickness must be >= 1")

    @classmethod
    def lines(cls, n: int = 2, thickness: int = DEFAULT_THICKNESS) -> "ShapeKind":
        return cls(LINES, n, thickness)

    @classmethod
    def polygon(cls, k: int = 3) -> "ShapeKind":
        return cls(POLYGON, k)

    @classmethod
    def ellipse(cls) -> "ShapeKind":
        return cls(ELLIPSE, 1)

    @property
    def dimension(self) -> int:
        if self.family == LINES:
            return 4 * self.count
        if self.family == POLYGON:
            return 2 * self.count
        return 4

    def label(self) -> str:
        if self.family == ELLIPSE:
            return ELLIPSE
        return f"{self.family}{self.count}"


@dataclass(frozen=True)
class ClampBox:
    """Inclusive pixel rectangle ``[x_min, x_max] x [y_min, y_max]``.

    ``width``/``height`` are the coordinate spans (``x_max - x_min``), which
    is what the ellipse semi-axis cap of ``side / 2`` is measured against.
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise InvalidParameterError(f"empty clamp box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    @property
    def max_semi_axes(self) -> tuple[int, int]:
        return max(1, self.width // 2), max(1, self.height // 2)


class PixelSet:
    """Deduplicated set of in-bounds pixels, stored as a boolean grid."""

    __slots__ = ("grid",)

    def __init__(self, grid: np.ndarray):
        self.grid = np.asarray(grid, dtype=bool)

    @classmethod
    def empty(cls, width: int, height: int) -> "PixelSet":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_points(cls, points, width: int, height: int) -> "PixelSet":
        grid = np.zeros((height, width), dtype=bool)
        for i, j in points:
            if not (0 <= i < width and 0 <= j < height):
                raise InvalidParameterError(f"pixel ({i}, {j}) outside {width}x{height}")
            grid[j, i] = True
        return cls(grid)

    @property
    def width(self) -> int:
        return self.grid.shape[1]

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    def points(self) -> set[Point]:
        jj, ii = np.nonzero(self.grid)
        return {Point(int(i), int(j)) for i, j in zip(ii, jj)}

    def __len__(self) -> int:
        return int(self.grid.sum())

    def __iter__(self) -> Iterator[Point]:
        jj, ii = np.nonzero(self.grid)
        return (Point(int(i), int(j)) for i, j in zip(ii, jj))

    def __contains__(self, p) -> bool:
        i, j = p
        return 0 <= i < self.width and 0 <= j < self.height and bool(self.grid[j, i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelSet):
            return NotImplemented
        return self.grid.shape == other.grid.shape and bool(np.array_equal(self.grid, other.grid))

    def __repr__(self) -> str:
        return f"PixelSet({len(self)} px on {self.width}x{self.height})"


@dataclass(frozen=True)
class Mask:
    """Pixels that may be perturbed (``bits[j, i]`` true)."""

    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise InvalidParameterError("mask must be a 2-D grid")
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def full(cls, width: int, height: int) -> "Mask":
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def from_box(cls, box: Sequence[float], width: int, height: int) -> "Mask":
        """Mask covering the pixels ``x1 <= i < x2, y1 <= j < y2`` of a detection box."""
        x1, y1, x2, y2 = (int(v) for v in round_half_away(box))
        bits = np.zeros((height, width), dtype=bool)
        bits[max(0, y1):max(0, min(height, y2)), max(0, x1):max(0, min(width, x2))] = True
        return cls(bits)

    def bbox(self) -> ClampBox:
        """Tight inclusive bounding rectangle of the true pixels."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        if rows.size == 0:
            raise InvalidParameterError("mask has no true pixels")
        return ClampBox(int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def _check_bounds(width: int, height: int):
    if width < 1 or height < 1:
        raise InvalidParameterError(f"frame bounds must be positive, got {width}x{height}")


def _segment_trace(p0: Point, p1: Point) -> tuple[np.ndarray, np.ndarray]:
    """Integer midpoint trace from ``p0`` to ``p1`` (both endpoints included).

    Steps once per unit of the major axis; the minor offset after ``t``
    steps is ``floor((2*t*|d_minor| + D) / (2*D))``, i.e. the nearest pixel
    with exact halves resolved away from ``p0``.
    """
    dx, dy = p1.i - p0.i, p1.j - p0.j
    big = max(abs(dx), abs(dy))
    if big == 0:
        return np.array([p0.i]), np.array([p0.j])
    t = np.arange(big + 1, dtype=np.int64)
    sx, sy = (1 if dx >= 0 else -1), (1 if dy >= 0 else -1)
    if abs(dx) >= abs(dy):
        xs = p0.i + sx * t
        ys = p0.j + sy * ((2 * t * abs(dy) + big) // (2 * big))
    else:
        ys = p0.j + sy * t
        xs = p0.i + sx * ((2 * t * abs(dx) + big) // (2 * big))
    return xs, ys


def rasterize_lines(params: LineSetParams, width: int, height: int) -> PixelSet:
    _check_bounds(width, height)
    if not params.endpoints:
        raise InvalidParameterError("empty endpoint list")
    traces = [_segment_trace(a, b) for a, b in params.segments]
    xs = np.concatenate([t[0] for t in traces])
    ys = np.concatenate([t[1] for t in traces])
    lo, hi = -((params.thickness - 1) // 2), params.thickness // 2
    grid = np.zeros((height, width), dtype=bool)
    for oy in range(lo, hi + 1):
        for ox in range(lo, hi + 1):
            px, py = xs + ox, ys + oy
            ok = (px >= 0) & (px < width) & (py >= 0) & (py < height)
            grid[py[ok], px[ok]] = True
    return PixelSet(grid)


def polygon_membership(xs: np.ndarray, ys: np.ndarray, vertices: Sequence[Point]) -> np.ndarray:
    """Inclusive even-odd test of integer points against an integer polygon.

    Exact integer arithmetic throughout: boundary points are found with a
    zero cross product, interior ones by counting edge crossings of a ray
    toward +x (half-open in y, so shared vertices count once).
    """
    inside = np.zeros(np.broadcast(xs, ys).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    k = len(vertices)
    for n in range(k):
        ax, ay = vertices[n]
        bx, by = vertices[(n + 1) % k]
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        on_edge |= ((cross == 0) & (xs >= min(ax, bx)) & (xs <= max(ax, bx))
                    & (ys >= min(ay, by)) & (ys <= max(ay, by)))
        if ay == by:
            continue
        straddle = (ay > ys) != (by > ys)
        # crossing x lies strictly right of the point
        num = (ax - xs) * (by - ay) + (ys - ay) * (bx - ax)
        inside ^= straddle & (num * (1 if by > ay else -1) > 0)
    return inside | on_edge


def rasterize_polygon(params: PolygonParams, width: int, height: int) -> PixelSet:
    _check_bounds(width, height)
    verts = params.vertices
    if len(verts) < 3:
        raise InvalidParameterError("polygon needs at least 3 vertices")
    x0 = max(0, min(p.i for p in verts))
    x1 = min(width - 1, max(p.i for p in verts))
    y0 = max(0, min(p.j for p in verts))
    y1 = min(height - 1, max(p.j for p in verts))
    grid = np.zeros((height, width), dtype=bool)
    if x0 > x1 or y0 > y1:
        return PixelSet(grid)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    grid[y0:y1 + 1, x0:x1 + 1] = polygon_membership(xs.astype(np.int64), ys.astype(np.int64), verts)
    return PixelSet(grid)


def rasterize_ellipse(params: EllipseParams, width: int, height: int) -> PixelSet:
    _check_bounds(width, height)
    a, b = int(params.semi_axis_h), int(params.semi_axis_v)
    if a < 1 or b < 1:
        raise InvalidParameterError("ellipse semi-axes must be >= 1")
    cx, cy = params.center
    grid = np.zeros((height, width), dtype=bool)
    x0, x1 = max(0, cx - a), min(width - 1, cx + a)
    y0, y1 = max(0, cy - b), min(height - 1, cy + b)
    if x0 > x1 or y0 > y1:
        return PixelSet(grid)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.int64)
    # ((i-cx)/a)^2 + ((j-cy)/b)^2 <= 1, cleared of denominators
    grid[y0:y1 + 1, x0:x1 + 1] = (xs - cx) ** 2 * b * b + (ys - cy) ** 2 * a * a <= a * a * b * b
    return PixelSet(grid)


def rasterize(spec_or_shape, width: int, height: int) -> PixelSet:
    shape = spec_or_shape.shape if isinstance(spec_or_shape, PerturbationSpec) else spec_or_shape
    if isinstance(shape, LineSetParams):
        return rasterize_lines(shape, width, height)
    if isinstance(shape, PolygonParams):
        return rasterize_polygon(shape, width, height)
    return rasterize_ellipse(shape, width, height)


def clip_to_mask(shape_pixels: PixelSet, mask: Mask) -> PixelSet:
    if shape_pixels.grid.shape != mask.bits.shape:
        raise InvalidParameterError(
            f"mask is {mask.width}x{mask.height}, pixels are {shape_pixels.width}x{shape_pixels.height}"
        )
    return PixelSet(shape_pixels.grid & mask.bits)


# -- continuous encoding helpers shared with the optimizer --------------------

def encode(spec: PerturbationSpec) -> np.ndarray:
    """Flatten a spec's shape into its real-valued search vector."""
    s = spec.shape
    if isinstance(s, LineSetParams):
        vals = [c for p in s.endpoints for c in p]
    elif isinstance(s, PolygonParams):
        vals = [c for p in s.vertices for c in p]
    else:
        vals = [s.center.i, s.center.j, s.semi_axis_h, s.semi_axis_v]
    return np.asarray(vals, dtype=float)


def param_bounds(kind: ShapeKind, bbox: ClampBox) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension inclusive integer bounds of the feasible search space."""
    if kind.family == ELLIPSE:
        ah, av = bbox.max_semi_axes
        lower = [bbox.x_min, bbox.y_min, 1, 1]
        upper = [bbox.x_max, bbox.y_max, ah, av]
    else:
        pairs = kind.dimension // 2
        lower = [bbox.x_min, bbox.y_min] * pairs
        upper = [bbox.x_max, bbox.y_max] * pairs
    return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)


def round_half_away(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def build_spec(kind: ShapeKind, ints: Sequence[int], color=(0, 0, 0)) -> PerturbationSpec:
    vals = [int(v) for v in ints]
    if len(vals) != kind.dimension:
        raise InvalidParameterError(
            f"{kind.label()} expects {kind.dimension} values, got {len(vals)}"
        )
    pts = list(zip(vals[0::2], vals[1::2]))
    if kind.family == LINES:
        shape = LineSetParams(pts, kind.thickness)
    elif kind.family == POLYGON:
        shape = PolygonParams(pts)
    else:
        shape = EllipseParams((vals[0], vals[1]), vals[2], vals[3])
    return PerturbationSpec(shape, color)


def kind_of(spec: PerturbationSpec) -> ShapeKind:
    s = spec.shape
    if isinstance(s, LineSetParams):
        return ShapeKind.lines(len(s.endpoints) // 2, s.thickness)
    if isinstance(s, PolygonParams):
        return ShapeKind.polygon(len(s.vertices))
    return ShapeKind.ellipse()


def clamp_params(spec: PerturbationSpec, mask_bbox: ClampBox) -> PerturbationSpec:
    """Clamp every coordinate into ``mask_bbox`` and semi-axes into ``[1, side // 2]``."""
    if not isinstance(mask_bbox, ClampBox):
        mask_bbox = ClampBox(*mask_bbox)
    kind = kind_of(spec)
    lower, upper = param_bounds(kind, mask_bbox)
    clamped = np.clip(encode(spec), lower, upper)
    return build_spec(kind, clamped, spec.color)


def random_params(kind: ShapeKind, mask_bbox: ClampBox, rng_seed, color=(0, 0, 0)) -> PerturbationSpec:
    """Uniform integer draw over the feasible box.

    ``rng_seed`` may be an int or a ``numpy.random.Generator`` (the latter is
    consumed in place, which is how the swarm initializer draws a population).
    """
    rng = np.random.default_rng(rng_seed)
    lower, upper = param_bounds(kind, mask_bbox)
    draw = rng.integers(lower.astype(np.int64), upper.astype(np.int64) + 1)
    return build_spec(kind, draw, color)
