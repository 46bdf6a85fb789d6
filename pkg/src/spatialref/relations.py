"""The 31 spatial relations and their evaluation on gravity-aligned boxes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .defaults import DEFAULTS, Defaults
from .errors import MissingAnnotationError, UsageError
from .geometry import OrientedBox3
from .scene import ObjectInstance, SceneFrame, ViewAxes


class SpatialRelationKind(str, Enum):
    # position
    LEFT = "left"
    RIGHT = "right"
    ABOVE_WORLD = "above-world"
    BELOW_WORLD = "below-world"
    ABOVE_CAMERA = "above-camera"
    BELOW_CAMERA = "below-camera"
    FRONT = "front"
    BEHIND = "behind"
    NEAR = "near"
    FAR = "far"
    INSIDE = "inside"
    OUTSIDE = "outside"
    TOUCHING = "touching"
    SEPARATED = "separated"
    BETWEEN = "between"
    # orientation
    FACING_TOWARD = "facing-toward"
    FACING_AWAY = "facing-away"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"
    RELATIVE_ANGLE = "relative-angle"
    # attribute
    BIGGER = "bigger"
    SMALLER = "smaller"
    TALLER = "taller"
    SHORTER = "shorter"
    WIDER = "wider"
    THINNER = "thinner"
    # quantitative
    POINT_DEPTH = "point-depth"
    PAIRWISE_DISTANCE = "pairwise-distance"
    OBJECT_WIDTH = "object-width"
    OBJECT_HEIGHT = "object-height"
    # placement
    FREE_SPACE_DIRECTIONAL = "free-space-directional"

    @property
    def info(self) -> "RelationInfo":
        return RELATION_INFO[self]

    @property
    def arity(self) -> int:
        return RELATION_INFO[self].arity

    @property
    def is_metric(self) -> bool:
        return RELATION_INFO[self].value_type != "bool"


@dataclass(frozen=True)
class RelationInfo:
    group: str
    arity: int
    value_type: str  # "bool", "meters", "radians" or "region"
    needs_orientation: bool = False
    graph_edge: bool = True


R = SpatialRelationKind
RELATION_INFO: dict[SpatialRelationKind, RelationInfo] = {
    **{r: RelationInfo("position", 2, "bool") for r in (
        R.LEFT, R.RIGHT, R.ABOVE_WORLD, R.BELOW_WORLD, R.ABOVE_CAMERA, R.BELOW_CAMERA,
        R.FRONT, R.BEHIND, R.NEAR, R.FAR, R.INSIDE, R.OUTSIDE, R.TOUCHING, R.SEPARATED)},
    R.BETWEEN: RelationInfo("position", 3, "bool"),
    R.FACING_TOWARD: RelationInfo("orientation", 2, "bool", needs_orientation=True),
    R.FACING_AWAY: RelationInfo("orientation", 2, "bool", needs_orientation=True),
    R.HORIZONTAL: RelationInfo("orientation", 1, "bool", needs_orientation=True),
    R.VERTICAL: RelationInfo("orientation", 1, "bool", needs_orientation=True),
    R.RELATIVE_ANGLE: RelationInfo("orientation", 2, "radians", needs_orientation=True),
    **{r: RelationInfo("attribute", 2, "bool") for r in (
        R.BIGGER, R.SMALLER, R.TALLER, R.SHORTER, R.WIDER, R.THINNER)},
    R.POINT_DEPTH: RelationInfo("quantitative", 1, "meters"),
    R.PAIRWISE_DISTANCE: RelationInfo("quantitative", 2, "meters"),
    R.OBJECT_WIDTH: RelationInfo("quantitative", 1, "meters"),
    R.OBJECT_HEIGHT: RelationInfo("quantitative", 1, "meters"),
    R.FREE_SPACE_DIRECTIONAL: RelationInfo("placement", 1, "region", graph_edge=False),
}
assert len(RELATION_INFO) == 31

# relation -> (counterpart, argument order swapped?)
INVERSE = {R.LEFT: R.RIGHT, R.RIGHT: R.LEFT, R.FRONT: R.BEHIND, R.BEHIND: R.FRONT,
           R.ABOVE_WORLD: R.BELOW_WORLD, R.BELOW_WORLD: R.ABOVE_WORLD,
           R.ABOVE_CAMERA: R.BELOW_CAMERA, R.BELOW_CAMERA: R.ABOVE_CAMERA,
           R.BIGGER: R.SMALLER, R.SMALLER: R.BIGGER, R.TALLER: R.SHORTER,
           R.SHORTER: R.TALLER, R.WIDER: R.THINNER, R.THINNER: R.WIDER}


def obb_distance(a: OrientedBox3, b: OrientedBox3, tol: float = 1e-10,
                 max_iter: int = 2000) -> float:
    """Minimum Euclidean gap between two boxes (0 when they intersect).

    Alternating projections between two convex sets converge to a closest pair.
    """
    def proj(box: OrientedBox3, p: np.ndarray) -> np.ndarray:
        local = box.rotation.T @ (p - box.center)
        return box.center + box.rotation @ np.clip(local, -box.half_extents, box.half_extents)

    q = proj(b, a.center)
    p = proj(a, q)
    for _ in range(max_iter):
        q_new = proj(b, p)
        p_new = proj(a, q_new)
        if np.linalg.norm(p_new - p) < tol and np.linalg.norm(q_new - q) < tol:
            p, q = p_new, q_new
            break
        p, q = p_new, q_new
    return float(np.linalg.norm(p - q))


def horizontal_extent(box: OrientedBox3, axis: np.ndarray) -> float:
    proj = box.corners() @ axis
    return float(proj.max() - proj.min())


def _margin(extent_a: float, extent_b: float, d: Defaults) -> float:
    return max(d.position_margin_abs_m, d.position_margin_rel * min(extent_a, extent_b))


def orientation_in_gravity(frame: SceneFrame, obj: ObjectInstance) -> np.ndarray:
    if obj.orientation is None:
        raise MissingAnnotationError(f"object {obj.id} has no orientation annotation")
    return frame.camera_to_gravity.apply_direction(obj.orientation)


class RelationEvaluator:
    """Evaluates relations on one frame, caching per-frame geometry."""

    def __init__(self, frame: SceneFrame, defaults: Defaults = DEFAULTS):
        self.frame = frame
        self.d = defaults
        self.view: ViewAxes = frame.view_axes()
        self._g2c = frame.gravity_to_camera
        self._objects = {o.id: o for o in frame.objects}

    def obj(self, oid: str) -> ObjectInstance:
        try:
            return self._objects[oid]
        except KeyError:
            raise UsageError(f"unknown object id {oid!r}") from None

    def width(self, o: ObjectInstance) -> float:
        return horizontal_extent(o.obb, self.view.right)

    def depth_extent(self, o: ObjectInstance) -> float:
        return horizontal_extent(o.obb, self.view.forward)

    def evaluate(self, relation, subject: str, others: Sequence[str] = ()):
        relation = SpatialRelationKind(relation)
        info = relation.info
        others = list(others)
        if len(others) != info.arity - 1:
            raise UsageError(f"{relation.value} takes {info.arity - 1} other object(s), "
                             f"got {len(others)}")
        if not info.graph_edge:
            raise UsageError(f"{relation.value} is evaluated by the free-space module")
        a = self.obj(subject)
        bs = [self.obj(o) for o in others]
        d, v = self.d, self.view
        ca = v.coords(a.obb.center)

        if relation in (R.HORIZONTAL, R.VERTICAL):
            o = orientation_in_gravity(self.frame, a)
            vertical_component = abs(o[1]) / np.linalg.norm(o)
            tol = np.radians(d.upright_tol_deg)
            if relation is R.VERTICAL:
                return bool(vertical_component >= np.cos(tol))
            return bool(vertical_component <= np.sin(tol))
        if relation is R.POINT_DEPTH:
            return float(self._g2c.apply(a.obb.center)[2])
        if relation is R.OBJECT_WIDTH:
            return self.width(a)
        if relation is R.OBJECT_HEIGHT:
            return a.obb.height
        if relation is R.BETWEEN:
            b, c = bs
            p = a.obb.center[[0, 2]]
            pb, pc = b.obb.center[[0, 2]], c.obb.center[[0, 2]]
            seg = pc - pb
            length2 = float(seg @ seg)
            if length2 == 0:
                return False
            t = float((p - pb) @ seg) / length2
            rel = p - pb
            lateral = abs(float(seg[0] * rel[1] - seg[1] * rel[0])) / np.sqrt(length2)
            limit = 0.5 * 0.5 * (b.obb.footprint_diagonal() + c.obb.footprint_diagonal())
            return bool(0 < t < 1 and lateral <= limit)

        b = bs[0]
        cb = v.coords(b.obb.center)
        if relation in (R.LEFT, R.RIGHT):
            m = _margin(self.width(a), self.width(b), d)
            delta = cb[0] - ca[0]
            return bool(delta > m) if relation is R.LEFT else bool(-delta > m)
        if relation in (R.FRONT, R.BEHIND):
            m = _margin(self.depth_extent(a), self.depth_extent(b), d)
            delta = cb[2] - ca[2]  # positive: a is closer to the viewer
            return bool(delta > m) if relation is R.FRONT else bool(-delta > m)
        if relation in (R.ABOVE_WORLD, R.BELOW_WORLD):
            m = _margin(a.obb.height, b.obb.height, d)
            delta = ca[1] - cb[1]
            return bool(delta > m) if relation is R.ABOVE_WORLD else bool(-delta > m)
        if relation in (R.ABOVE_CAMERA, R.BELOW_CAMERA):
            m = _margin(a.obb.height, b.obb.height, d)
            ya = self._g2c.apply(a.obb.center)[1]
            yb = self._g2c.apply(b.obb.center)[1]
            delta = yb - ya  # camera +Y points down
            return bool(delta > m) if relation is R.ABOVE_CAMERA else bool(-delta > m)
        if relation in (R.NEAR, R.FAR):
            dist = float(np.linalg.norm(a.obb.center - b.obb.center))
            limit = d.near_diag_factor * 0.5 * (a.obb.footprint_diagonal()
                                                 + b.obb.footprint_diagonal())
            near = dist < limit
            return bool(near) if relation is R.NEAR else bool(not near)
        if relation in (R.INSIDE, R.OUTSIDE):
            inside = bool(np.all(b.obb.contains(a.obb.corners())))
            return inside if relation is R.INSIDE else not inside
        if relation in (R.TOUCHING, R.SEPARATED):
            touching = obb_distance(a.obb, b.obb) < d.touching_gap_m
            return bool(touching) if relation is R.TOUCHING else bool(not touching)
        if relation in (R.FACING_TOWARD, R.FACING_AWAY):
            o = orientation_in_gravity(self.frame, a)
            to_b = b.obb.center - a.obb.center
            n = np.linalg.norm(to_b)
            if n == 0:
                return False
            cos = float(o @ to_b / (np.linalg.norm(o) * n))
            if relation is R.FACING_TOWARD:
                return bool(cos > d.facing_cos_min)
            return bool(cos < -d.facing_cos_min)
        if relation is R.RELATIVE_ANGLE:
            oa = orientation_in_gravity(self.frame, a)
            ob = orientation_in_gravity(self.frame, b)
            return float(np.arccos(np.clip(oa @ ob, -1.0, 1.0)))
        if relation is R.PAIRWISE_DISTANCE:
            return float(np.linalg.norm(a.obb.center - b.obb.center))
        sizes = {R.BIGGER: lambda o: o.obb.volume, R.SMALLER: lambda o: o.obb.volume,
                 R.TALLER: lambda o: o.obb.height, R.SHORTER: lambda o: o.obb.height,
                 R.WIDER: self.width, R.THINNER: self.width}
        f = sizes[relation]
        sa, sb = f(a), f(b)
        if relation in (R.BIGGER, R.TALLER, R.WIDER):
            return bool(sa > sb * (1 + d.size_margin_rel))
        return bool(sb > sa * (1 + d.size_margin_rel))


def evaluate_relation(frame: SceneFrame, relation, subject: str, others: Sequence[str] = (),
                      defaults: Defaults = DEFAULTS):
    return RelationEvaluator(frame, defaults).evaluate(relation, subject, others)
