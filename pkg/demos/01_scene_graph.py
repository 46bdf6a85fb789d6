"""A procedural tabletop, its scene graph and the expressions that name each object."""

from spatialref.scene_graph import build_scene_graph
from spatialref.synthetic import generate_tabletop_scene

scene = generate_tabletop_scene(seed=4).frame
print(f"scene {scene.frame_id}: {len(scene.objects)} objects, "
      f"{scene.intrinsics.width}x{scene.intrinsics.height} image")

graph = build_scene_graph(scene, relations=["left", "front", "near", "pairwise-distance"])
print("\nHow each object can be referred to without ambiguity:")
for oid, e in sorted(graph.expressions.items()):
    print(f"  {oid:8s} {e.text if e else '(no unique expression)'}"
          + (f"  [{e.tier}]" if e else ""))

print("\nA few viewer-centric facts:")
name = lambda i: graph.expressions[i].text if graph.expressions.get(i) else i  # noqa: E731
phrase = {"left": "to the left of", "front": "in front of"}
facts = [e for e in graph.edges if e.relation.value in phrase
         and "table" not in (e.subject, *e.objects)]
for edge in facts[:6]:
    print(f"  {name(edge.subject)} is {phrase[edge.relation.value]} {name(edge.objects[0])}")
print(f"  ... {len(facts)} such facts in total")

dists = [e for e in graph.edges if e.relation.value == "pairwise-distance"]
a, b = min(dists, key=lambda e: e.value).subject, min(dists, key=lambda e: e.value).objects[0]
print(f"\nClosest pair: {name(a)} and {name(b)}, "
      f"{min(e.value for e in dists):.3f} m apart")
