"""Find free spots around an object, and show why some requests are refused."""

import sys
from pathlib import Path

from spatialref.freespace import FreeSpaceQuery, placement_mask, solve_query
from spatialref.io import write_mask
from spatialref.synthetic import generate_tabletop_scene

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
scene = generate_tabletop_scene(seed=2).frame
target = next(o for o in scene.objects if o.id != "table")
print(f"target: {target.caption} ({target.id})")

for rel in ("front", "behind", "left", "right", "above"):
    region = solve_query(scene, FreeSpaceQuery(rel, (target.id,)), seed=0)
    if not region.accepted:
        print(f"  {rel:7s} refused: {region.rejection}")
        continue
    p = region.selected_point
    mask = placement_mask(region, scene)
    path = out / f"free_{rel}.png"
    write_mask(path, mask)
    print(f"  {rel:7s} pixel ({p.x:6.1f}, {p.y:6.1f}), area {region.region_area:.3f} m2, "
          f"{len(region.visible_points2d)} visible samples, "
          f"{len(region.neighbor_ids)} neighbours treated as obstacles -> {path}")
