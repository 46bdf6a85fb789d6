"""Annotated RGB-D frames and their JSON schema."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ValidationError
from .geometry import (
    Box2D,
    CameraIntrinsics,
    DepthMap,
    OrientedBox3,
    Point2,
    RigidTransform,
)
from .io import read_depth, read_json, read_mask


@dataclass(eq=False)
class ObjectInstance:
    id: str
    category: str
    box2d: Box2D
    obb: OrientedBox3
    color: str | None = None
    caption: str | None = None
    mask_ref: str | None = None
    orientation: np.ndarray | None = None  # unit vector, camera frame
    point2d: Point2 | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.orientation is not None:
            o = np.asarray(self.orientation, dtype=float).reshape(-1)
            if o.shape != (3,) or abs(np.linalg.norm(o) - 1.0) > 1e-6:
                raise ValidationError(f"object {self.id}: orientation must be a unit 3-vector")
            self.orientation = o
        if self.point2d is None:
            b = self.box2d
            self.point2d = Point2((b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2)
        elif not self.box2d.contains(self.point2d.x, self.point2d.y):
            raise ValidationError(f"object {self.id}: representative point outside box2d")

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "id": self.id,
            "category": self.category,
            "color": self.color,
            "caption": self.caption,
            "box2d": self.box2d.as_list(),
            "mask_ref": self.mask_ref,
            "obb": self.obb.to_dict(),
        }
        if self.orientation is not None:
            d["orientation"] = [float(x) for x in self.orientation]
        d["point"] = [float(self.point2d.x), float(self.point2d.y)]
        return d


@dataclass(eq=False)
class ViewAxes:
    """Viewer-aligned horizontal axes expressed in the gravity frame."""

    right: np.ndarray
    forward: np.ndarray
    camera_position: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def coords(self, p) -> np.ndarray:
        """(right, up, forward) coordinates of gravity-frame points."""
        p = np.asarray(p, dtype=float)
        return np.stack([p @ self.right, p @ self.up, p @ self.forward], axis=-1)

    def horizontal(self, name: str) -> np.ndarray:
        return {"right": self.right, "left": -self.right,
                "behind": self.forward, "front": -self.forward}[name]


@dataclass(eq=False)
class SceneFrame:
    frame_id: str
    intrinsics: CameraIntrinsics
    extrinsics: RigidTransform  # camera -> world
    gravity_rotation: RigidTransform  # world -> gravity-aligned
    depth_ref: str | None
    objects: list[ObjectInstance]
    platform_ids: list[str] | None = None
    image_ref: str | None = None
    depth: DepthMap | None = None
    base_dir: Path | None = None

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"frame {self.frame_id}: duplicate object ids")
        if self.depth is not None:
            self._check_depth(self.depth)

    def _check_depth(self, depth: DepthMap):
        k = self.intrinsics
        if depth.values.shape != (k.height, k.width):
            raise ValidationError(
                f"frame {self.frame_id}: depth {depth.width}x{depth.height} does not match "
                f"intrinsics {k.width}x{k.height}")

    # -- transforms --
    @property
    def camera_to_gravity(self) -> RigidTransform:
        return self.gravity_rotation.compose(self.extrinsics)

    @property
    def gravity_to_camera(self) -> RigidTransform:
        return self.camera_to_gravity.inverse()

    def view_axes(self) -> ViewAxes:
        c2g = self.camera_to_gravity
        fwd = c2g.apply_direction([0.0, 0.0, 1.0])
        fwd = np.array([fwd[0], 0.0, fwd[2]])
        if np.linalg.norm(fwd) < 1e-9:  # looking straight down: use image "up" as forward
            fwd = c2g.apply_direction([0.0, -1.0, 0.0])
            fwd = np.array([fwd[0], 0.0, fwd[2]])
        fwd /= np.linalg.norm(fwd)
        # horizontal right completes a right-handed (right, down, forward) triad
        right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        return ViewAxes(right, fwd, c2g.translation.copy())

    # -- lookup --
    def object(self, oid: str) -> ObjectInstance:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def load_depth(self) -> DepthMap:
        if self.depth is None:
            if self.depth_ref is None:
                raise ValidationError(f"frame {self.frame_id}: no depth_ref")
            path = Path(self.depth_ref)
            if not path.is_absolute() and self.base_dir is not None:
                path = self.base_dir / path
            depth = read_depth(path)
            self._check_depth(depth)
            self.depth = depth
        return self.depth

    def object_mask(self, oid: str) -> np.ndarray:
        o = self.object(oid)
        if o.mask is None:
            if o.mask_ref is None:
                raise ValidationError(f"object {oid}: no mask")
            path = Path(o.mask_ref)
            if not path.is_absolute() and self.base_dir is not None:
                path = self.base_dir / path
            o.mask = read_mask(path)
        return o.mask

    def to_dict(self) -> dict:
        d = {
            "frame_id": self.frame_id,
            "intrinsics": self.intrinsics.to_dict(),
            "extrinsics": self.extrinsics.to_dict(),
            "gravity_rotation": self.gravity_rotation.to_dict(),
            "depth_ref": self.depth_ref,
            "objects": [o.to_dict() for o in self.objects],
        }
        if self.image_ref is not None:
            d["image_ref"] = self.image_ref
        if self.platform_ids is not None:
            d["platforms"] = list(self.platform_ids)
        return d


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ValidationError(f"{where}{key}: missing field")
    return d[key]


def _floats(value, n: int, where: str) -> list[float]:
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: expected {n} numbers") from None
    if len(out) != n:
        raise ValidationError(f"{where}: expected {n} numbers, got {len(out)}")
    return out


def _transform(d: dict, where: str) -> RigidTransform:
    rot = _floats(_require(d, "rotation", f"{where}."), 9, f"{where}.rotation")
    trans = _floats(d.get("translation", [0, 0, 0]), 3, f"{where}.translation")
    try:
        return RigidTransform(np.array(rot).reshape(3, 3), np.array(trans))
    except ValidationError as exc:
        raise ValidationError(f"{where}.rotation: {exc}") from None


def scene_from_dict(d: dict, base_dir: Path | None = None) -> SceneFrame:
    """Validate and build a :class:`SceneFrame`; errors name the offending field."""
    k = _require(d, "intrinsics", "")
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        _require(k, key, "intrinsics.")
    try:
        intr = CameraIntrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                                int(k["width"]), int(k["height"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"intrinsics: {exc}") from None
    objects = []
    for i, od in enumerate(_require(d, "objects", "")):
        where = f"objects[{i}]"
        obb_d = _require(od, "obb", f"{where}.")
        try:
            obb = OrientedBox3(
                np.array(_floats(_require(obb_d, "center", f"{where}.obb."), 3, f"{where}.obb.center")),
                np.array(_floats(_require(obb_d, "half_extents", f"{where}.obb."), 3,
                                 f"{where}.obb.half_extents")),
                np.array(_floats(obb_d.get("rotation", np.eye(3).reshape(-1)), 9,
                                 f"{where}.obb.rotation")).reshape(3, 3))
            box = Box2D.from_list(_floats(_require(od, "box2d", f"{where}."), 4, f"{where}.box2d"))
            point = od.get("point")
            objects.append(ObjectInstance(
                id=str(_require(od, "id", f"{where}.")),
                category=str(_require(od, "category", f"{where}.")),
                box2d=box,
                obb=obb,
                color=od.get("color"),
                caption=od.get("caption"),
                mask_ref=od.get("mask_ref"),
                orientation=None if od.get("orientation") is None
                else np.array(_floats(od["orientation"], 3, f"{where}.orientation")),
                point2d=None if point is None else Point2(*_floats(point, 2, f"{where}.point")),
            ))
        except ValidationError as exc:
            msg = str(exc)
            raise ValidationError(msg if msg.startswith(where) else f"{where}: {msg}") from None
    return SceneFrame(
        frame_id=str(_require(d, "frame_id", "")),
        intrinsics=intr,
        extrinsics=_transform(_require(d, "extrinsics", ""), "extrinsics"),
        gravity_rotation=_transform(_require(d, "gravity_rotation", ""), "gravity_rotation"),
        depth_ref=d.get("depth_ref"),
        objects=objects,
        platform_ids=d.get("platforms"),
        image_ref=d.get("image_ref"),
        base_dir=base_dir,
    )


def load_scene(path, load_depth: bool = True) -> SceneFrame:
    path = Path(path)
    frame = scene_from_dict(read_json(path), base_dir=path.parent)
    if load_depth:
        frame.load_depth()
    return frame
