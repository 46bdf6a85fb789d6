"""Procedural tabletop scenes with ray-cast depth and instance masks.

A lightweight stand-in for a full renderer: every object is an oriented box
on a table, the camera looks at the table from the front, and depth is the
exact z-depth of the first box hit along each pixel-centre ray.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import (
    Box2D,
    CameraIntrinsics,
    DepthMap,
    OrientedBox3,
    Point2,
    RigidTransform,
)
from .io import write_depth, write_json, write_mask
from .scene import ObjectInstance, SceneFrame

# category -> (half-extent ranges (x, y, z), has semantic orientation, materials)
CATALOG = {
    "cup": (((0.035, 0.045), (0.045, 0.06), None), True, ("ceramic", "paper")),
    "mug": (((0.04, 0.05), (0.045, 0.055), None), True, ("ceramic", "enamel")),
    "bottle": (((0.03, 0.04), (0.09, 0.13), None), False, ("plastic", "glass")),
    "book": (((0.075, 0.11), (0.012, 0.025), (0.1, 0.14)), False, ("hardcover", "paperback")),
    "box": (((0.05, 0.1), (0.04, 0.09), (0.05, 0.1)), False, ("cardboard", "wooden")),
    "bowl": (((0.06, 0.08), (0.03, 0.04), None), False, ("ceramic", "glass")),
    "laptop": (((0.15, 0.17), (0.01, 0.014), (0.11, 0.12)), True, ("aluminium", "plastic")),
    "apple": (((0.035, 0.042), (0.035, 0.042), None), False, ("glossy", "matte")),
    "can": (((0.032, 0.034), (0.055, 0.062), None), False, ("metal", "aluminium")),
    "teddy bear": (((0.06, 0.09), (0.08, 0.12), (0.05, 0.07)), True, ("plush", "fluffy")),
}
COLORS = ("red", "blue", "green", "white", "black", "yellow", "orange", "gray")
STACK_BASES = ("box", "book")


@dataclass(eq=False)
class SyntheticScene:
    frame: SceneFrame
    instance_map: np.ndarray  # object index into frame.objects, -1 background

    def save(self, directory) -> Path:
        """Write ``scene.json``, ``depth.bin`` and one mask PNG per object."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        f = self.frame
        write_depth(directory / "depth.bin", f.depth.values, f.depth.valid)
        f.depth_ref = "depth.bin"
        for o in f.objects:
            rel = f"masks/{o.id}.png"
            write_mask(directory / rel, o.mask)
            o.mask_ref = rel
        f.base_dir = directory
        write_json(directory / "scene.json", f.to_dict())
        return directory / "scene.json"


def look_at(eye, target) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``eye`` looking at ``target`` (+Y up)."""
    fwd = np.asarray(target, float) - np.asarray(eye, float)
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def render(boxes: list[OrientedBox3], k: CameraIntrinsics,
           cam_to_gravity: RigidTransform) -> tuple[np.ndarray, np.ndarray]:
    """Z-depth and first-hit box index for every pixel centre (index -1: no hit)."""
    u, v = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    dirs_c = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dirs = dirs_c.reshape(-1, 3) @ cam_to_gravity.rotation.T
    origin = cam_to_gravity.translation
    best = np.full(len(dirs), np.inf)
    index = np.full(len(dirs), -1, dtype=int)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i, b in enumerate(boxes):
            o = b.rotation.T @ (origin - b.center)
            d = dirs @ b.rotation
            t1 = (-b.half_extents - o) / d
            t2 = (b.half_extents - o) / d
            near, far = np.minimum(t1, t2), np.maximum(t1, t2)
            # fmax/fmin skip the NaNs of rays parallel to a slab
            lo = np.fmax(np.fmax(near[:, 0], near[:, 1]), near[:, 2])
            hi = np.fmin(np.fmin(far[:, 0], far[:, 1]), far[:, 2])
            t = np.where(lo > 0, lo, hi)
            hit = (hi >= lo) & (hi > 0) & (t < best)
            best[hit] = t[hit]
            index[hit] = i
    # parameter t equals camera z because every ray has unit z in the camera frame
    depth = np.where(np.isfinite(best), best, 0.0).reshape(k.height, k.width)
    return depth, index.reshape(k.height, k.width)


def _half_extents(category: str, rng: np.random.Generator) -> np.ndarray:
    (rx, ry, rz), _, _ = CATALOG[category]
    hx = rng.uniform(*rx)
    hy = rng.uniform(*ry)
    hz = hx if rz is None else rng.uniform(*rz)
    return np.array([hx, hy, hz])


def representative_pixel(mask: np.ndarray) -> tuple[int, int]:
    """Mask pixel farthest from the mask boundary (first in row-major order on ties)."""
    rows, cols = np.nonzero(mask)
    r0, c0 = rows.min(), cols.min()
    # the zero ring around the bounding box is never farther than any outside pixel
    crop = mask[r0:rows.max() + 1, c0:cols.max() + 1]
    dist = ndimage.distance_transform_edt(np.pad(crop, 1))[1:-1, 1:-1]
    r, c = np.unravel_index(int(np.argmax(dist)), dist.shape)
    return int(c + c0), int(r + r0)


def generate_tabletop_scene(seed: int, n_objects: tuple[int, int] = (3, 10),
                            width: int = 320, height: int = 240,
                            tilt_world: bool = False, stack_prob: float = 0.15,
                            min_pixels: int = 40, frame_id: str | None = None) -> SyntheticScene:
    rng = np.random.Generator(np.random.Philox(seed))
    table_h = np.array([rng.uniform(0.55, 0.8), 0.375, rng.uniform(0.35, 0.5)])
    table = OrientedBox3([0.0, 0.375, 0.0], table_h)
    floor = OrientedBox3([0.0, -0.05, 0.0], [20.0, 0.05, 20.0])
    top = 0.75

    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    n_cats = int(rng.integers(max(1, n // 3), n + 1))
    cats = list(rng.choice(sorted(CATALOG), size=min(n_cats, len(CATALOG)), replace=False))
    categories = [str(cats[i]) if i < len(cats) else str(cats[int(rng.integers(len(cats)))])
                  for i in range(n)]

    placed: list[tuple[str, OrientedBox3, float]] = []
    footprints = []
    for cat in categories:
        half = _half_extents(cat, rng)
        box = None
        bases = [(i, b) for i, (c, b, _) in enumerate(placed) if c in STACK_BASES]
        if bases and rng.random() < stack_prob:
            _, base = bases[int(rng.integers(len(bases)))]
            yaw = rng.uniform(-np.pi, np.pi)
            cand = OrientedBox3.from_yaw([base.center[0], base.top + half[1], base.center[2]],
                                         half, yaw)
            if cand.footprint().within(base.footprint()):
                box = cand
        for _ in range(200):
            if box is not None:
                break
            yaw = rng.uniform(-np.pi, np.pi)
            x = rng.uniform(-table_h[0] + 0.05, table_h[0] - 0.05)
            z = rng.uniform(-table_h[2] + 0.05, table_h[2] - 0.05)
            cand = OrientedBox3.from_yaw([x, top + half[1], z], half, yaw)
            fp = cand.footprint()
            if not fp.within(table.footprint()):
                continue
            if any(fp.buffer(0.02).intersects(f) for f in footprints):
                continue
            box = cand
        if box is None:
            continue
        placed.append((cat, box, yaw))
        if box.bottom <= top + 1e-9:
            footprints.append(box.footprint())

    # camera in front of the table (-Z side), looking at the table top
    eye = np.array([rng.uniform(-0.3, 0.3), top + rng.uniform(0.45, 0.75),
                    -(table_h[2] + rng.uniform(0.45, 0.8))])
    look = np.array([rng.uniform(-0.1, 0.1), top, rng.uniform(-0.05, 0.1)])
    c2g = RigidTransform(look_at(eye, look), eye)
    fx = width / (2 * np.tan(np.radians(70.0) / 2))
    k = CameraIntrinsics(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height)

    # drop objects that end up (almost) invisible, then re-render
    while True:
        boxes = [floor, table] + [b for _, b, _ in placed]
        depth, hit = render(boxes, k, c2g)
        counts = np.bincount(hit.reshape(-1) + 1, minlength=len(boxes) + 1)[1:]
        keep = [i for i in range(len(placed)) if counts[i + 2] >= min_pixels]
        if len(keep) == len(placed):
            break
        placed = [placed[i] for i in keep]

    if tilt_world:
        g = RigidTransform(random_rotation(rng), rng.normal(size=3))
    else:
        g = RigidTransform.identity()
    extrinsics = g.inverse().compose(c2g)

    objects = []
    table_mask = hit == 1
    objects.append(_instance("table", "table", table, table_mask, None, c2g, rng,
                             material="wooden"))
    for i, (cat, box, yaw) in enumerate(placed):
        mask = hit == i + 2
        orient = None
        if CATALOG[cat][1]:
            orient = box.rotation @ np.array([1.0, 0.0, 0.0])
        objects.append(_instance(f"obj{i:02d}", cat, box, mask, orient, c2g, rng))

    frame = SceneFrame(frame_id or f"synthetic-{seed}", k, extrinsics, g, None, objects,
                       depth=DepthMap(depth, depth > 0))
    # instance map indexed by position in frame.objects (table is 0)
    inst = np.where(hit >= 1, hit - 1, -1)
    return SyntheticScene(frame, inst)


def _instance(oid, category, box, mask, orient_g, c2g, rng, material=None) -> ObjectInstance:
    color = str(rng.choice(COLORS))
    if material is None:
        material = str(rng.choice(CATALOG[category][2]))
    rows, cols = np.nonzero(mask)
    box2d = Box2D(float(cols.min()), float(rows.min()), float(cols.max()), float(rows.max()))
    u, v = representative_pixel(mask)
    orientation = None
    if orient_g is not None:
        o = c2g.rotation.T @ orient_g
        orientation = o / np.linalg.norm(o)
    return ObjectInstance(id=oid, category=category, box2d=box2d, obb=box, color=color,
                          caption=f"the {color} {material} {category}", orientation=orientation,
                          point2d=Point2(float(u), float(v)), mask=mask)
