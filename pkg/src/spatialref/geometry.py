"""Camera model, rigid transforms, box math and top-down occupancy maps.

Conventions
-----------
Camera frame: +X right, +Y down, +Z forward (pinhole standard). Pixel
``(u, v)`` has its centre at integer coordinates, so pixel index is
``floor(u + 0.5)``.

Gravity-aligned frame: +Y up. Object footprints live on the XZ plane and are
handled as shapely polygons with ``(x, z)`` vertex coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPoint, Polygon

from .errors import (
    BehindCameraError,
    BoundsError,
    ConfigurationError,
    DomainError,
    ValidationError,
)

FREE = 0
OCCUPIED = 1
OUTSIDE_PLATFORM = 2

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not self.fx > 0:
            raise ValidationError(f"intrinsics.fx must be > 0, got {self.fx}")
        if not self.fy > 0:
            raise ValidationError(f"intrinsics.fy must be > 0, got {self.fy}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValidationError("intrinsics.width/height must be >= 1")
        if not 0 <= self.cx < self.width:
            raise ValidationError(f"intrinsics.cx must lie in [0, width), got {self.cx}")
        if not 0 <= self.cy < self.height:
            raise ValidationError(f"intrinsics.cy must lie in [0, height), got {self.cy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


def _check_rotation(rotation: np.ndarray, name: str = "rotation") -> np.ndarray:
    r = np.asarray(rotation, dtype=float)
    if r.shape == (9,):
        r = r.reshape(3, 3)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        raise ValidationError(f"{name} must be a finite 3x3 matrix")
    if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
        raise ValidationError(f"{name} is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
        raise ValidationError(f"{name} must have determinant +1")
    return r


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``p' = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (3,):
            raise ValidationError("translation must be a 3-vector")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def apply_direction(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform that applies ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def to_dict(self) -> dict:
        return {"rotation": [float(x) for x in self.rotation.reshape(-1)],
                "translation": [float(x) for x in self.translation]}


def rotation_aligning(source, target) -> np.ndarray:
    """Smallest rotation taking direction ``source`` onto ``target`` (Rodrigues)."""
    a = np.asarray(source, float)
    b = np.asarray(target, float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate pi about any axis orthogonal to a
        helper = np.array([1.0, 0, 0]) if abs(a[0]) < 0.9 else np.array([0, 1.0, 0])
        k = np.cross(a, helper)
        k /= np.linalg.norm(k)
        return 2.0 * np.outer(k, k) - np.eye(3)
    k = axis / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    angle = np.arctan2(s, c)
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def gravity_rotation_from_vector(gravity) -> RigidTransform:
    """Rotation mapping the measured gravity direction onto ``(0, -1, 0)``."""
    return RigidTransform(rotation_aligning(gravity, (0.0, -1.0, 0.0)))


@dataclass(eq=False)
class DepthMap:
    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("depth values must be a 2D array")
        if self.valid is None:
            self.valid = np.isfinite(self.values) & (self.values > 0)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.values.shape:
                raise ValidationError("depth validity mask shape mismatch")
        if np.any(self.values[self.valid] < 0):
            raise ValidationError("valid depth values must be >= 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Point2:
    """A 2D image point; ``space`` is ``"pixels"`` or ``"normalized"``."""

    x: float
    y: float
    space: str = "pixels"

    def __post_init__(self):
        if self.space not in ("pixels", "normalized"):
            raise ValidationError(f"unknown point space {self.space!r}")
        if self.space == "normalized" and not (0 <= self.x <= 1 and 0 <= self.y <= 1):
            raise ValidationError(f"normalized point outside [0,1]^2: ({self.x}, {self.y})")

    def to_pixels(self, width: int, height: int) -> "Point2":
        if self.space == "pixels":
            return self
        return Point2(self.x * width, self.y * height, "pixels")

    def to_normalized(self, width: int, height: int) -> "Point2":
        if self.space == "normalized":
            return self
        return Point2(self.x / width, self.y / height, "normalized")


def pixel_index(u: float, v: float) -> tuple[int, int]:
    """Column/row of the pixel containing continuous coordinate ``(u, v)`` (round half-up)."""
    return int(np.floor(u + 0.5)), int(np.floor(v + 0.5))


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"invalid box {self.as_list()}")

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Box2D":
        if len(values) != 4:
            raise ValidationError("box2d needs 4 numbers")
        return cls(*(float(v) for v in values))

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, u: float, v: float) -> bool:
        return self.x_min <= u <= self.x_max and self.y_min <= v <= self.y_max


@dataclass(frozen=True, eq=False)
class OrientedBox3:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        h = np.asarray(self.half_extents, dtype=float).reshape(-1)
        if c.shape != (3,) or h.shape != (3,):
            raise ValidationError("obb center and half_extents must be 3-vectors")
        if np.any(h <= 0):
            raise ValidationError("obb half_extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "obb.rotation"))

    @classmethod
    def from_yaw(cls, center, half_extents, yaw: float = 0.0) -> "OrientedBox3":
        """Box rotated by ``yaw`` radians about the vertical (+Y) axis."""
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return cls(center, half_extents, rot)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=float)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    @property
    def bottom(self) -> float:
        return float(self.corners()[:, 1].min())

    @property
    def top(self) -> float:
        return float(self.corners()[:, 1].max())

    @property
    def height(self) -> float:
        return self.top - self.bottom

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def footprint(self) -> Polygon:
        """Convex XZ-plane projection."""
        xz = self.corners()[:, [0, 2]]
        return MultiPoint([tuple(p) for p in xz]).convex_hull

    def footprint_diagonal(self) -> float:
        pts = np.asarray(self.footprint().exterior.coords)
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def contains(self, points) -> np.ndarray:
        local = (np.atleast_2d(points) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + 1e-12, axis=1)

    def to_dict(self) -> dict:
        return {"center": [float(x) for x in self.center],
                "half_extents": [float(x) for x in self.half_extents],
                "rotation": [float(x) for x in self.rotation.reshape(-1)]}


def _as_polygon(shape) -> Polygon:
    if isinstance(shape, OrientedBox3):
        return shape.footprint()
    if isinstance(shape, Polygon):
        return shape
    pts = np.asarray(shape, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValidationError("polygon needs at least 3 (x, z) vertices")
    return Polygon(pts)


# -- camera operations -------------------------------------------------------

def backproject(u: float, v: float, depth: float, k: CameraIntrinsics) -> np.ndarray:
    if not (0 <= u <= k.width - 1 and 0 <= v <= k.height - 1):
        raise BoundsError(f"pixel ({u}, {v}) outside {k.width}x{k.height} image")
    if depth < 0:
        raise DomainError(f"negative depth {depth}")
    return np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, float(depth)])


def backproject_many(uv: np.ndarray, depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorised :func:`backproject` without bounds checks."""
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(depth, dtype=float)
    return np.stack([(uv[:, 0] - k.cx) / k.fx * d, (uv[:, 1] - k.cy) / k.fy * d, d], axis=1)


def project(p, k: CameraIntrinsics) -> np.ndarray:
    x, y, z = (float(c) for c in p)
    if z <= 0:
        raise BehindCameraError(f"point with z={z} is behind the camera")
    return np.array([k.fx * x / z + k.cx, k.fy * y / z + k.cy])


def project_many(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorised projection; points with ``z <= 0`` map to NaN."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    z = p[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.stack([k.fx * p[:, 0] / z + k.cx, k.fy * p[:, 1] / z + k.cy], axis=1)
    out[z <= 0] = np.nan
    return out


def gravity_align(points, g_rot: RigidTransform) -> np.ndarray:
    if not isinstance(g_rot, RigidTransform):
        g_rot = RigidTransform(np.asarray(g_rot))
    return g_rot.apply(np.asarray(points, dtype=float))


def point_cloud_from_mask(depth: DepthMap, mask, k: CameraIntrinsics) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != depth.values.shape:
        raise ValidationError(f"mask shape {mask.shape} != depth shape {depth.values.shape}")
    rows, cols = np.nonzero(mask & depth.valid)  # row-major order
    uv = np.stack([cols, rows], axis=1).astype(float)
    return backproject_many(uv, depth.values[rows, cols], k)


# -- boxes -------------------------------------------------------------------

def box_iou_2d(a: Box2D, b: Box2D) -> float:
    if not isinstance(a, Box2D):
        a = Box2D.from_list(a)
    if not isinstance(b, Box2D):
        b = Box2D.from_list(b)
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def footprint_overlap_ratio(subject, support) -> float:
    """Share of ``subject``'s XZ footprint covered by ``support``."""
    s = _as_polygon(subject)
    if s.area <= 0:
        raise DomainError("subject footprint has zero area")
    return float(min(1.0, s.intersection(_as_polygon(support)).area / s.area))


# -- occupancy ---------------------------------------------------------------

@dataclass(eq=False)
class OccupancyMap:
    """Top-down grid over a platform footprint.

    ``grid[row, col]`` covers ``x in [x0 + col*cs, x0 + (col+1)*cs)`` and
    ``z in [z0 + row*cs, z0 + (row+1)*cs)``.
    """

    origin: tuple[float, float]
    cell_size: float
    grid: np.ndarray
    occupant_masks: dict[str, np.ndarray]

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        rows, cols = self.grid.shape
        xs = self.origin[0] + (np.arange(cols) + 0.5) * self.cell_size
        zs = self.origin[1] + (np.arange(rows) + 0.5) * self.cell_size
        return np.meshgrid(xs, zs)

    def cell_of(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        col = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(int)
        row = np.floor((np.asarray(z) - self.origin[1]) / self.cell_size).astype(int)
        return row, col

    def state_at(self, x, z) -> np.ndarray:
        """Cell state for each point; points off the grid are OUTSIDE_PLATFORM."""
        row, col = self.cell_of(x, z)
        inside = (row >= 0) & (row < self.grid.shape[0]) & (col >= 0) & (col < self.grid.shape[1])
        out = np.full(np.shape(row), OUTSIDE_PLATFORM, dtype=np.int8)
        out[inside] = self.grid[row[inside], col[inside]]
        return out

    def occupants(self, row: int, col: int) -> frozenset[str]:
        return frozenset(oid for oid, m in self.occupant_masks.items() if m[row, col])

    def free_area(self, region: Polygon | None = None) -> float:
        """Area of Free cells, optionally restricted to cells centred in ``region``."""
        free = self.grid == FREE
        if region is not None:
            cx, cz = self.cell_centers()
            free &= shapely.contains_xy(region, cx, cz)
        # rounded so that whole-cell areas compare exactly against thresholds
        return round(float(free.sum()) * self.cell_size ** 2, 12)


def build_occupancy_map(platform, occupiers: Sequence | Mapping, cell_size: float = 0.01,
                        ids: Sequence[str] | None = None) -> OccupancyMap:
    """Rasterise occupier footprints over the platform footprint at cell centres.

    ``occupiers`` is a sequence of boxes/polygons (ids default to their index)
    or a mapping ``id -> box``.
    """
    if not cell_size > 0:
        raise ConfigurationError("cell_size must be positive")
    plat = _as_polygon(platform)
    x0, z0, x1, z1 = plat.bounds
    if cell_size > min(x1 - x0, z1 - z0):
        raise ConfigurationError(f"cell_size {cell_size} exceeds platform extent")
    cols = int(np.ceil((x1 - x0) / cell_size - 1e-9))
    rows = int(np.ceil((z1 - z0) / cell_size - 1e-9))
    xs = x0 + (np.arange(cols) + 0.5) * cell_size
    zs = z0 + (np.arange(rows) + 0.5) * cell_size
    cx, cz = np.meshgrid(xs, zs)
    inside = shapely.contains_xy(plat, cx, cz)

    if isinstance(occupiers, Mapping):
        items = list(occupiers.items())
    else:
        names = list(ids) if ids is not None else [str(i) for i in range(len(occupiers))]
        if len(names) != len(occupiers):
            raise ValidationError("ids and occupiers differ in length")
        items = list(zip(names, occupiers))

    grid = np.full((rows, cols), OUTSIDE_PLATFORM, dtype=np.int8)
    grid[inside] = FREE
    masks: dict[str, np.ndarray] = {}
    for oid, shape in items:
        poly = _as_polygon(shape)
        bx0, bz0, bx1, bz1 = poly.bounds
        m = np.zeros((rows, cols), dtype=bool)
        c0 = max(0, int(np.floor((bx0 - x0) / cell_size)))
        c1 = min(cols, int(np.ceil((bx1 - x0) / cell_size)) + 1)
        r0 = max(0, int(np.floor((bz0 - z0) / cell_size)))
        r1 = min(rows, int(np.ceil((bz1 - z0) / cell_size)) + 1)
        if c0 < c1 and r0 < r1:
            sub = shapely.contains_xy(poly, cx[r0:r1, c0:c1], cz[r0:r1, c0:c1])
            m[r0:r1, c0:c1] = sub & inside[r0:r1, c0:c1]
        masks[str(oid)] = m
        grid[m] = OCCUPIED
    return OccupancyMap((float(x0), float(z0)), float(cell_size), grid, masks)


def polygon_from_points(points: Iterable) -> Polygon:
    return MultiPoint([tuple(p) for p in points]).convex_hull
