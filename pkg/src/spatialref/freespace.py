"""Free-space placement regions: platforms, neighbours, sampling, visibility, selection.

All horizontal geometry is on the gravity-aligned XZ plane; sampled points
sit at the platform's top height.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import shapely
from shapely import affinity
from shapely.geometry import Polygon

from .defaults import DEFAULTS, Defaults
from .errors import InvalidQueryError, UsageError, ValidationError
from .geometry import (
    FREE,
    OccupancyMap,
    Point2,
    build_occupancy_map,
    footprint_overlap_ratio,
    project_many,
)
from .scene import ObjectInstance, SceneFrame, ViewAxes

DIRECTIONAL = ("front", "behind", "left", "right", "facing")
VERTICAL = ("above", "below")
RELATIONS = DIRECTIONAL + VERTICAL + ("between",)


@dataclass(eq=False)
class PlatformSurface:
    object_id: str
    top_height: float
    footprint: Polygon

    def __post_init__(self):
        if not self.footprint.area > 0:
            raise ValidationError(f"platform {self.object_id}: degenerate footprint")


def platform_from_object(obj: ObjectInstance) -> PlatformSurface:
    return PlatformSurface(obj.id, obj.obb.top, obj.obb.footprint())


def candidate_platforms(scene: SceneFrame) -> list[PlatformSurface]:
    """Annotated platforms, or every object's top surface when none are listed."""
    if scene.platform_ids is not None:
        return [platform_from_object(scene.object(i)) for i in scene.platform_ids]
    return [platform_from_object(o) for o in scene.objects]


@dataclass
class FreeSpaceQuery:
    relation: str
    target_ids: tuple[str, ...]
    sample_count: int | None = None
    min_visible: int | None = None

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValidationError(f"unknown free-space relation {self.relation!r}")
        self.target_ids = tuple(str(t) for t in self.target_ids)
        need = 2 if self.relation == "between" else 1
        if len(self.target_ids) != need:
            raise ValidationError(f"{self.relation} needs exactly {need} target id(s)")

    @property
    def is_directional(self) -> bool:
        return self.relation in DIRECTIONAL

    def quotas(self, d: Defaults = DEFAULTS) -> tuple[int, int]:
        if self.is_directional:
            n, m = d.directional_samples, d.directional_min_visible
        else:
            n, m = d.vertical_samples, d.vertical_min_visible
        return (self.sample_count if self.sample_count is not None else n,
                self.min_visible if self.min_visible is not None else m)

    def to_dict(self) -> dict:
        return {"relation": self.relation, "target_ids": list(self.target_ids)}


@dataclass(eq=False)
class FreeSpaceRegion:
    query: FreeSpaceQuery
    platform: PlatformSurface | None
    polygon: Polygon | None
    sampled_points3d: np.ndarray
    visible_points2d: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    visible_points3d: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    selected_point: Point2 | None = None
    selected_point3d: np.ndarray | None = None
    region_area: float = 0.0
    occupancy: OccupancyMap | None = None
    neighbor_ids: tuple[str, ...] = ()
    rejection: str | None = None
    seed: int | None = None

    @property
    def accepted(self) -> bool:
        return self.selected_point is not None

    def to_dict(self, width: int | None = None, height: int | None = None) -> dict:
        d = {"query": self.query.to_dict(),
             "seed": self.seed,
             "platform_id": self.platform.object_id if self.platform else None,
             "region_area_m2": round(self.region_area, 6),
             "sampled_count": int(len(self.sampled_points3d)),
             "visible_count": int(len(self.visible_points2d)),
             "neighbor_ids": list(self.neighbor_ids),
             "selected_point": None,
             "selected_point_normalized": None,
             "rejection": self.rejection}
        if self.selected_point is not None:
            p = self.selected_point
            d["selected_point"] = [float(p.x), float(p.y)]
            if width and height:
                d["selected_point_normalized"] = [float(p.x) / width, float(p.y) / height]
        return d


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; seed is reduced to 64 bits."""
    return np.random.Generator(np.random.Philox(int(seed) % (1 << 64)))


# -- step 3: platforms -----------------------------------------------------------

def find_supporting_platform(obj: ObjectInstance, scene: SceneFrame,
                             platforms: Sequence[PlatformSurface] | None = None,
                             defaults: Defaults = DEFAULTS) -> PlatformSurface | None:
    """Platform whose top is within the gap tolerance of ``obj``'s bottom and covers
    enough of its footprint; the smallest vertical gap wins."""
    if platforms is None:
        platforms = candidate_platforms(scene)
    bottom = obj.obb.bottom
    fp = obj.obb.footprint()
    best, best_gap = None, np.inf
    for p in platforms:
        if p.object_id == obj.id:
            continue
        gap = abs(bottom - p.top_height)
        if gap > defaults.platform_gap_m:
            continue
        if footprint_overlap_ratio(fp, p.footprint) < defaults.platform_overlap_min:
            continue
        if gap < best_gap:
            best, best_gap = p, gap
    return best


def find_platform_below(obj: ObjectInstance, scene: SceneFrame,
                        platforms: Sequence[PlatformSurface] | None = None,
                        defaults: Defaults = DEFAULTS) -> PlatformSurface | None:
    """Nearest platform beneath a (possibly suspended) object."""
    if platforms is None:
        platforms = candidate_platforms(scene)
    bottom = obj.obb.bottom
    fp = obj.obb.footprint()
    best, best_gap = None, np.inf
    for p in platforms:
        if p.object_id == obj.id:
            continue
        gap = bottom - p.top_height
        if gap < -defaults.platform_gap_m:
            continue
        if footprint_overlap_ratio(fp, p.footprint) < defaults.platform_overlap_min:
            continue
        if gap < best_gap:
            best, best_gap = p, gap
    return best


def resolve_platform(query: FreeSpaceQuery, scene: SceneFrame,
                     platforms: Sequence[PlatformSurface] | None = None,
                     defaults: Defaults = DEFAULTS) -> PlatformSurface | None:
    targets = [scene.object(t) for t in query.target_ids]
    if query.relation == "above":
        return platform_from_object(targets[0])
    if query.relation == "below":
        return find_platform_below(targets[0], scene, platforms, defaults)
    supports = [find_supporting_platform(t, scene, platforms, defaults) for t in targets]
    if query.relation == "between":
        a, b = supports
        if a is None or b is None or a.object_id != b.object_id:
            raise InvalidQueryError(
                f"between {query.target_ids}: targets do not share a supporting platform")
    return supports[0]


# -- search regions ------------------------------------------------------------

def sector_radius(target: ObjectInstance, defaults: Defaults = DEFAULTS) -> float:
    return max(target.obb.footprint_diagonal(), defaults.sector_radius_min_m)


def direction_vector(target: ObjectInstance, relation: str, view: ViewAxes,
                     scene: SceneFrame | None = None) -> np.ndarray:
    """Horizontal unit vector (x, z) for a directional query."""
    if relation == "facing":
        if target.orientation is None or scene is None:
            raise InvalidQueryError(f"object {target.id} has no orientation for 'facing'")
        o = scene.camera_to_gravity.apply_direction(target.orientation)
        v = np.array([o[0], o[2]])
    else:
        v3 = view.horizontal(relation)
        v = np.array([v3[0], v3[2]])
    n = np.linalg.norm(v)
    if n < 1e-9:
        raise InvalidQueryError(f"direction {relation} is vertical for object {target.id}")
    return v / n


def sector_polygon(apex, direction, radius: float, angle_deg: float = 90.0,
                   segments: int = 64) -> Polygon:
    """Circular sector as a polygon; the chordal arc stays inside the true sector."""
    phi = np.arctan2(direction[1], direction[0])
    half = np.radians(angle_deg) / 2
    angles = np.linspace(phi - half, phi + half, segments + 1)
    arc = np.stack([apex[0] + radius * np.cos(angles), apex[1] + radius * np.sin(angles)], 1)
    return Polygon(np.vstack([[apex[0], apex[1]], arc]))


def shrink_footprint(obj: ObjectInstance, factor: float) -> Polygon:
    return affinity.scale(obj.obb.footprint(), factor, factor, origin="centroid")


def between_polygon(a: ObjectInstance, b: ObjectInstance) -> Polygon:
    fa, fb = a.obb.footprint(), b.obb.footprint()
    return fa.union(fb).convex_hull.difference(fa).difference(fb)


def search_region(query: FreeSpaceQuery, scene: SceneFrame, platform: PlatformSurface,
                  view: ViewAxes | None = None, defaults: Defaults = DEFAULTS):
    targets = [scene.object(t) for t in query.target_ids]
    if query.is_directional:
        view = view or scene.view_axes()
        t = targets[0]
        region = sector_polygon(t.obb.center[[0, 2]],
                                direction_vector(t, query.relation, view, scene),
                                sector_radius(t, defaults), defaults.sector_angle_deg)
    elif query.relation in VERTICAL:
        region = shrink_footprint(targets[0], defaults.vertical_shrink)
    else:
        region = between_polygon(*targets)
    return region.intersection(platform.footprint)


# -- step 4: neighbours ----------------------------------------------------------

def candidate_neighbors(target: str | Sequence[str], platform: PlatformSurface,
                        scene: SceneFrame, query: FreeSpaceQuery, region=None,
                        defaults: Defaults = DEFAULTS) -> list[ObjectInstance]:
    """Objects that may occupy the query's search space on ``platform``."""
    target_ids = [target] if isinstance(target, str) else list(target)
    targets = [scene.object(t) for t in target_ids]
    excluded = set(target_ids) | {platform.object_id}
    out = []
    if query.relation == "below":
        t = targets[0]
        t_fp = t.obb.footprint()
        for o in scene.objects:
            if o.id in excluded:
                continue
            if (o.obb.footprint().intersects(t_fp) and o.obb.bottom <= t.obb.top
                    and o.obb.top >= platform.top_height):
                out.append(o)
        return out
    if query.relation == "above":
        for o in scene.objects:
            if o.id in excluded:
                continue
            if (o.obb.bottom - platform.top_height <= defaults.above_bottom_max_m
                    and o.obb.top >= platform.top_height
                    and o.obb.footprint().intersects(platform.footprint)):
                out.append(o)
        return out

    if region is None:
        region = search_region(query, scene, platform, defaults=defaults)
    target_top = max(t.obb.top for t in targets)
    target_volume = max(t.obb.volume for t in targets)
    for o in scene.objects:
        if o.id in excluded:
            continue
        if o.obb.bottom > target_top + defaults.neighbor_height_margin_m:
            continue
        if o.obb.top <= platform.top_height:
            continue
        if not o.obb.footprint().intersects(region):
            continue
        if o.obb.volume > defaults.neighbor_volume_ratio_max * target_volume:
            continue
        out.append(o)
    return out


# -- step 5: sampling ------------------------------------------------------------

def sample_in_polygon(polygon: Polygon, n: int, rng: np.random.Generator,
                      max_rounds: int = 1000) -> np.ndarray:
    """``n`` uniform (x, z) samples inside ``polygon`` by bounding-box rejection."""
    if polygon.is_empty or polygon.area <= 0 or n <= 0:
        return np.zeros((0, 2))
    x0, z0, x1, z1 = polygon.bounds
    fill = polygon.area / ((x1 - x0) * (z1 - z0))
    out: list[np.ndarray] = []
    have = 0
    for _ in range(max_rounds):
        batch = int((n - have) / fill * 1.2) + 16
        xy = rng.random((batch, 2)) * [x1 - x0, z1 - z0] + [x0, z0]
        xy = xy[shapely.contains_xy(polygon, xy[:, 0], xy[:, 1])]
        out.append(xy[: n - have])
        have += len(out[-1])
        if have >= n:
            break
    return np.concatenate(out) if out else np.zeros((0, 2))


def _lift(xz: np.ndarray, height: float) -> np.ndarray:
    return np.stack([xz[:, 0], np.full(len(xz), height), xz[:, 1]], axis=1)


def _occupancy(platform: PlatformSurface, occupiers: Sequence[ObjectInstance],
               defaults: Defaults) -> OccupancyMap:
    return build_occupancy_map(platform.footprint, {o.id: o.obb for o in occupiers},
                               defaults.cell_size_m)


def _sample_free(region: Polygon, n: int, occupancy: OccupancyMap, height: float,
                 seed: int) -> np.ndarray:
    # a fixed set of draws filtered by occupancy: extra occupiers can only remove points
    xz = sample_in_polygon(region, n, make_rng(seed))
    if len(xz):
        xz = xz[occupancy.state_at(xz[:, 0], xz[:, 1]) == FREE]
    return _lift(xz, height)


def sample_directional_region(target: ObjectInstance, direction: str,
                              platform: PlatformSurface,
                              neighbors: Sequence[ObjectInstance],
                              occupancy: OccupancyMap | None, rng_seed: int,
                              scene: SceneFrame, query: FreeSpaceQuery | None = None,
                              defaults: Defaults = DEFAULTS) -> FreeSpaceRegion:
    if direction not in DIRECTIONAL:
        raise UsageError(f"{direction!r} is not a horizontal direction")
    query = query or FreeSpaceQuery(direction, (target.id,))
    region = search_region(query, scene, platform, defaults=defaults)
    if occupancy is None:
        occupancy = _occupancy(platform, [target, *neighbors], defaults)
    n, _ = query.quotas(defaults)
    pts = _sample_free(region, n, occupancy, platform.top_height, rng_seed)
    out = FreeSpaceRegion(query, platform, region, pts,
                          region_area=occupancy.free_area(region), occupancy=occupancy,
                          neighbor_ids=tuple(o.id for o in neighbors), seed=rng_seed)
    if len(pts) == 0:
        out.rejection = "empty_region"
    return out


def sample_vertical_region(target: ObjectInstance, which: str, platform: PlatformSurface,
                           neighbors: Sequence[ObjectInstance],
                           occupancy: OccupancyMap | None, rng_seed: int,
                           scene: SceneFrame | None = None,
                           query: FreeSpaceQuery | None = None,
                           defaults: Defaults = DEFAULTS) -> FreeSpaceRegion:
    if which not in VERTICAL:
        raise UsageError(f"{which!r} is not a vertical relation")
    query = query or FreeSpaceQuery(which, (target.id,))
    region = shrink_footprint(target, defaults.vertical_shrink).intersection(platform.footprint)
    if occupancy is None:
        occupancy = _occupancy(platform, neighbors, defaults)
    return _area_gated(query, platform, region, occupancy, neighbors, rng_seed, defaults)


def sample_between_region(a: str, b: str, scene: SceneFrame, occupancy: OccupancyMap | None,
                          rng_seed: int, platforms: Sequence[PlatformSurface] | None = None,
                          query: FreeSpaceQuery | None = None,
                          defaults: Defaults = DEFAULTS) -> FreeSpaceRegion:
    query = query or FreeSpaceQuery("between", (a, b))
    platform = resolve_platform(query, scene, platforms, defaults)
    oa, ob = scene.object(a), scene.object(b)
    region = between_polygon(oa, ob).intersection(platform.footprint)
    neighbors = candidate_neighbors([a, b], platform, scene, query, region, defaults)
    if occupancy is None:
        occupancy = _occupancy(platform, [oa, ob, *neighbors], defaults)
    return _area_gated(query, platform, region, occupancy, neighbors, rng_seed, defaults)


def _area_gated(query, platform, region, occupancy, neighbors, seed, defaults):
    area = occupancy.free_area(region)
    out = FreeSpaceRegion(query, platform, region, np.zeros((0, 3)), region_area=area,
                          occupancy=occupancy, neighbor_ids=tuple(o.id for o in neighbors),
                          seed=seed)
    if not area > defaults.free_area_min_m2:
        out.rejection = "area_below_floor"
        return out
    n, _ = query.quotas(defaults)
    out.sampled_points3d = _sample_free(region, n, occupancy, platform.top_height, seed)
    if len(out.sampled_points3d) == 0:
        out.rejection = "empty_region"
    return out


# -- step 6: visibility and selection ---------------------------------------------

def depth_consistency(points3d: np.ndarray, frame: SceneFrame,
                      defaults: Defaults = DEFAULTS) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates of gravity-frame points and a mask of the depth-visible ones."""
    depth = frame.load_depth()
    pts = np.atleast_2d(np.asarray(points3d, dtype=float)).reshape(-1, 3)
    cam = frame.gravity_to_camera.apply(pts)
    uv = project_many(cam, frame.intrinsics)
    ok = np.isfinite(uv).all(axis=1)
    col = np.zeros(len(pts), dtype=int)
    row = np.zeros(len(pts), dtype=int)
    col[ok] = np.floor(uv[ok, 0] + 0.5).astype(int)
    row[ok] = np.floor(uv[ok, 1] + 0.5).astype(int)
    ok &= (col >= 0) & (col < depth.width) & (row >= 0) & (row < depth.height)
    d = np.zeros(len(pts))
    d[ok] = depth.values[row[ok], col[ok]]
    ok[ok] &= depth.valid[row[ok], col[ok]]
    ok &= np.abs(cam[:, 2] - d) <= defaults.visibility_depth_tol_m
    return uv, ok


def filter_visible(points3d: np.ndarray, frame: SceneFrame,
                   defaults: Defaults = DEFAULTS) -> np.ndarray:
    """Pixel coordinates of the points whose depth agrees with the depth map."""
    uv, ok = depth_consistency(points3d, frame, defaults)
    return uv[ok]


def ray_to_plane(u: float, v: float, height: float, frame: SceneFrame) -> np.ndarray | None:
    """Gravity-frame point where the pixel ray meets the plane ``y = height``."""
    k = frame.intrinsics
    c2g = frame.camera_to_gravity
    d = c2g.apply_direction([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
    if abs(d[1]) < 1e-12:
        return None
    t = (height - c2g.translation[1]) / d[1]
    if t <= 0:
        return None
    return c2g.translation + t * d


def select_placement_point(region: FreeSpaceRegion, frame: SceneFrame,
                           defaults: Defaults = DEFAULTS) -> Point2 | None:
    """Mean visible pixel, or the visible point nearest to it when the mean fails."""
    _, quota = region.query.quotas(defaults)
    if len(region.visible_points2d) < quota:
        if region.rejection is None:
            region.rejection = "visibility_quota"
        return None
    uv = region.visible_points2d
    mean = uv.mean(axis=0)
    p3 = ray_to_plane(mean[0], mean[1], region.platform.top_height, frame)
    if p3 is not None and _placement_ok(p3, region, frame, defaults):
        region.selected_point3d = p3
        return Point2(float(mean[0]), float(mean[1]))
    i = int(np.argmin(((uv - mean) ** 2).sum(axis=1)))
    region.selected_point3d = region.visible_points3d[i]
    return Point2(float(uv[i, 0]), float(uv[i, 1]))


def _placement_ok(p3: np.ndarray, region: FreeSpaceRegion, frame: SceneFrame,
                  defaults: Defaults) -> bool:
    if not shapely.contains_xy(region.polygon, p3[0], p3[2]):
        return False
    if region.occupancy.state_at(np.array([p3[0]]), np.array([p3[2]]))[0] != FREE:
        return False
    return bool(depth_consistency(p3[None], frame, defaults)[1][0])


def finish_region(region: FreeSpaceRegion, frame: SceneFrame,
                  defaults: Defaults = DEFAULTS) -> FreeSpaceRegion:
    """Visibility filtering and point selection for a sampled region."""
    if len(region.sampled_points3d):
        uv, ok = depth_consistency(region.sampled_points3d, frame, defaults)
        region.visible_points2d = uv[ok]
        region.visible_points3d = region.sampled_points3d[ok]
    if region.rejection is None:
        region.selected_point = select_placement_point(region, frame, defaults)
    return region


def solve_query(scene: SceneFrame, query: FreeSpaceQuery, seed: int,
                platforms: Sequence[PlatformSurface] | None = None,
                defaults: Defaults = DEFAULTS) -> FreeSpaceRegion:
    """Run platform association through point selection for one query.

    Raises :class:`InvalidQueryError` for between-queries across platforms;
    any other failure is reported through ``region.rejection``.
    """
    for t in query.target_ids:
        try:
            scene.object(t)
        except KeyError:
            raise InvalidQueryError(f"unknown target id {t!r}") from None
    if platforms is None:
        platforms = candidate_platforms(scene)
    if query.relation == "between":
        region = sample_between_region(*query.target_ids, scene, None, seed, platforms,
                                       query, defaults)
        return finish_region(region, scene, defaults)

    target = scene.object(query.target_ids[0])
    platform = resolve_platform(query, scene, platforms, defaults)
    if platform is None:
        return FreeSpaceRegion(query, None, None, np.zeros((0, 3)), rejection="no_platform",
                               seed=seed)
    if query.is_directional:
        region_poly = search_region(query, scene, platform, defaults=defaults)
        neighbors = candidate_neighbors(target.id, platform, scene, query, region_poly, defaults)
        region = sample_directional_region(target, query.relation, platform, neighbors, None,
                                           seed, scene, query, defaults)
    else:
        neighbors = candidate_neighbors(target.id, platform, scene, query, None, defaults)
        region = sample_vertical_region(target, query.relation, platform, neighbors, None, seed,
                                        scene, query, defaults)
    return finish_region(region, scene, defaults)


def placement_mask(region: FreeSpaceRegion, frame: SceneFrame,
                   defaults: Defaults = DEFAULTS) -> np.ndarray:
    """Pixels whose centre ray meets the platform inside the region, on a Free cell, visibly."""
    k = frame.intrinsics
    mask = np.zeros((k.height, k.width), dtype=bool)
    if region.polygon is None or region.occupancy is None or region.platform is None:
        return mask
    c2g = frame.camera_to_gravity
    u, v = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    dirs = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dirs = dirs.reshape(-1, 3) @ c2g.rotation.T
    o = c2g.translation
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (region.platform.top_height - o[1]) / dirs[:, 1]
    hit = np.isfinite(t) & (t > 0)
    pts = o + t[hit, None] * dirs[hit]
    ok = shapely.contains_xy(region.polygon, pts[:, 0], pts[:, 2])
    ok &= region.occupancy.state_at(pts[:, 0], pts[:, 2]) == FREE
    if ok.any():
        ok[ok] = depth_consistency(pts[ok], frame, defaults)[1]
    flat = mask.reshape(-1)
    idx = np.flatnonzero(hit)
    flat[idx[ok]] = True
    return mask
