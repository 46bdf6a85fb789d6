"""Independent re-solving of generated QA items against a procedural scene."""

from __future__ import annotations

import math

import numpy as np

from oracles import (
    _extent,
    _vertical_half,
    box_corners,
    cam_to_grav_matrices,
    cell_is_free,
    depth_visible,
    grav_to_cam,
    in_region,
    rank_oracle,
    ray_platform_point,
    relation_oracle,
    viewer_axes,
)
from spatialref.evaluation import count_reasoning_steps
from spatialref.freespace import FreeSpaceQuery, solve_query


def answer_pixel(xy, frame):
    k = frame.intrinsics
    return math.floor(xy[0] * k.width + 0.5), math.floor(xy[1] * k.height + 0.5)


def object_at_pixel(sc, col, row):
    idx = sc.instance_map[row, col]
    return None if idx < 0 else sc.frame.objects[idx].id


def expression_resolves(frame, expr) -> bool:
    """Does the structured expression pick out exactly ``expr.object_id``?"""
    me = frame.object(expr.object_id)
    group = [o for o in frame.objects if o.category == me.category]
    if expr.tier == "ordinal":
        ranks = rank_oracle(group, frame, expr.direction)
        return [i for i, r in ranks.items() if r == expr.ordinal] == [me.id]
    if expr.tier == "category":
        return len(group) == 1
    if expr.tier == "attribute":
        if len(group) == 1:
            return True
        return sum(o.color == me.color for o in group) == 1 and me.color in expr.text
    if expr.tier == "anchored":
        anchor = frame.object(expr.anchor_id)
        d = sorted((np.linalg.norm(o.obb.center - anchor.obb.center), o.id) for o in group)
        return d[0][1] == me.id and d[1][0] - d[0][0] >= 0.01
    return False


def metric_oracle(frame, relation, a, b=None) -> float:
    if relation == "point-depth":
        return float(grav_to_cam(frame, a.obb.center)[2])
    if relation == "pairwise-distance":
        return float(np.linalg.norm(a.obb.center - b.obb.center))
    if relation == "object-width":
        return float(_extent(a.obb, viewer_axes(frame)[0]))
    if relation == "object-height":
        return float(2 * _vertical_half(a.obb))
    raise KeyError(relation)


def _view_dir(frame, relation, target):
    right, fwd = viewer_axes(frame)
    if relation == "facing":
        r, _ = cam_to_grav_matrices(frame)
        o = r @ target.orientation
        v = np.array([o[0], o[2]])
        return v / np.linalg.norm(v)
    return {"front": -fwd, "behind": fwd, "left": -right, "right": right}[relation][[0, 2]]


def verify_region(f, region, u, v) -> str | None:
    """Check the platform point seen at pixel (u, v) is in-region, on a free cell and visible."""
    rel, ids = region.query.relation, region.query.target_ids
    p = ray_platform_point(f, u, v, region.platform.top_height)
    if p is None:
        return "ray misses the platform"
    targets = [f.object(i) for i in ids]
    plat = f.object(region.platform.object_id).obb
    vd = _view_dir(f, rel, targets[0]) if rel in ("front", "behind", "left", "right",
                                                   "facing") else None
    if not in_region(f, rel, targets, p, plat, vd):
        return "outside the region"
    occupiers = [f.object(i).obb for i in region.neighbor_ids]
    if rel not in ("above", "below"):
        occupiers += [t.obb for t in targets]
    if not cell_is_free(plat, occupiers, p):
        return "on an occupied cell"
    if not depth_visible(f, p):
        return "not visible"
    return None


def check_region_answer(qa, sc) -> str | None:
    f = sc.frame
    mask_spec = qa.meta["mask"]
    region = solve_query(f, FreeSpaceQuery(mask_spec["relation"], tuple(mask_spec["target_ids"])),
                         mask_spec["seed"])
    if not region.accepted:
        return "region no longer accepted"
    col, row = answer_pixel(qa.answer, f)
    return verify_region(f, region, col, row)


def check_qa(qa, sc, graph) -> str | None:
    """None when the item re-solves to its recorded answer, else a reason."""
    f = sc.frame
    if qa.step_count != count_reasoning_steps(qa.constraints):
        return "step count disagrees with constraints"
    if not 1 <= qa.step_count <= 5 or len(qa.reasoning) > 5:
        return "step bounds"
    tid = qa.template_id
    meta = qa.meta
    ids = meta.get("object_ids") or []
    for oid in ids:
        e = graph.expressions.get(oid)
        if e is None or not expression_resolves(f, e):
            return f"expression for {oid} does not resolve"
    if tid in ("rsn-locate",):
        e = graph.expressions[meta["answer_id"]]
        if not expression_resolves(f, e):
            return "described object does not resolve"

    if qa.answer_type == "text" and tid != "att-at-point":
        a, b = (f.object(i) for i in ids)
        want = relation_oracle(f, meta["relation"], a, b)
        return None if (qa.answer == "Yes") == want else "boolean answer disagrees"
    if qa.answer_type == "choice":
        a, b = (f.object(i) for i in ids)
        if relation_oracle(f, meta["relation"], a, b):
            want = a.id
        elif relation_oracle(f, meta["relation"], b, a):
            want = b.id
        else:
            return "choice has no clear winner"
        return None if meta["answer_id"] == want else "choice answer disagrees"
    if qa.answer_type == "number+unit":
        objs = [f.object(i) for i in ids]
        v = metric_oracle(f, meta["relation"], *objs)
        if str(qa.answer["value"]) in qa.question and tid != "qnt-depth":
            return "question leaks the value"
        return None if abs(qa.answer["value"] - v) <= 0.005 + 1e-9 else "metric disagrees"
    if tid == "att-at-point":
        x, y = (float(t) for t in qa.question.split("(")[1].split(")")[0].split(","))
        col, row = answer_pixel((x, y), f)
        hit = object_at_pixel(sc, col, row)
        if hit != meta["answer_id"]:
            return "queried point is not on the answer object"
        return None if qa.answer == graph.expressions[hit].text else "object-at text"

    # point answers
    if meta["mask"]["kind"] == "region":
        return check_region_answer(qa, sc)
    col, row = answer_pixel(qa.answer, f)
    if object_at_pixel(sc, col, row) != meta["answer_id"]:
        return "answer pixel is not on the answer object"
    if tid == "rsn-identify":
        target = meta["answer_id"]
        cands = meta["candidate_ids"]
        if target not in cands:
            return "answer not among candidates"
        sat = [c for c in cands
               if all(c != anchor and relation_oracle(f, rel, f.object(c), f.object(anchor))
                      for rel, anchor in meta["relations"])]
        if sat != [target]:
            return f"constraints satisfied by {sat}"
    return None


def check_keysteps(qa, sc) -> str | None:
    """Position key steps of named objects land on those objects' visible pixels."""
    f = sc.frame
    for k in qa.reasoning:
        if k.perception_type == "Orientation":
            if abs(np.linalg.norm(k.value) - 1) > 1e-6:
                return "orientation not unit"
        elif k.perception_type == "Size" and not k.value[0] > 0:
            return "size not positive"
        elif k.perception_type == "Position":
            col, row = answer_pixel(k.value, f)
            if object_at_pixel(sc, col, row) is None:
                return "position step on background"
    return None


__all__ = ["check_qa", "verify_region", "check_keysteps", "expression_resolves", "metric_oracle",
           "answer_pixel", "object_at_pixel", "box_corners"]
