"""Scene graphs: box matching, ordinal ranking, referring expressions, graph assembly."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .defaults import DEFAULTS, Defaults
from .errors import UsageError
from .geometry import Box2D, box_iou_2d
from .relations import RelationEvaluator, SpatialRelationKind
from .scene import ObjectInstance, SceneFrame, ViewAxes

AXES = ("X", "Y", "Z")

# direction -> (axis, sign); X = viewer right, Y = up, Z = viewer forward (away)
DIRECTIONS = {
    "left_to_right": ("X", 1),
    "right_to_left": ("X", -1),
    "front_to_back": ("Z", 1),
    "back_to_front": ("Z", -1),
    "top_to_bottom": ("Y", -1),
    "bottom_to_top": ("Y", 1),
}
AXIS_DIRECTIONS = {
    "X": ("left_to_right", "right_to_left"),
    "Z": ("front_to_back", "back_to_front"),
    "Y": ("top_to_bottom", "bottom_to_top"),
}

ORDINAL_TEMPLATES = {
    "left_to_right": [
        "{dense_caption}, which is the {ordinal} {class_name} from left to right",
        "{dense_caption}, marked as the {ordinal} {class_name} in a left-to-right arrangement",
    ],
    "right_to_left": [
        "{dense_caption}, the {ordinal} {class_name} viewed from the right",
        "{dense_caption}, the {ordinal} {class_name} from the right",
    ],
    "front_to_back": [
        "{dense_caption}, which appears as the {ordinal} {class_name} when viewed from the front",
        "{dense_caption}, positioned as the {ordinal} {class_name} in front-to-back order",
    ],
    "back_to_front": [
        "{dense_caption}, which is counted as the {ordinal} {class_name}, starting from the back",
        "{dense_caption}, the {ordinal} {class_name} in the back-to-front sequence",
    ],
    "top_to_bottom": [
        "{dense_caption}, the {ordinal} {class_name} viewed from the top",
        "{dense_caption}, placed as the {ordinal} {class_name} when sorted from top to bottom",
    ],
    "bottom_to_top": [
        "{dense_caption}, which ranks as the {ordinal} {class_name} in bottom-to-top order",
        "{dense_caption}, arranged as the {ordinal} {class_name} when ordered from the bottom",
    ],
}

_ORDINAL_WORDS = ["first", "second", "third", "fourth", "fifth", "sixth", "seventh",
                  "eighth", "ninth", "tenth"]


def ordinal_word(n: int) -> str:
    if 1 <= n <= len(_ORDINAL_WORDS):
        return _ORDINAL_WORDS[n - 1]
    suffix = "th" if 10 <= n % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


# -- box matching --------------------------------------------------------------

@dataclass
class MatchResult:
    pairs: list[tuple[str, str, float]]  # (predicted_id, reference_id, iou)
    unmatched_predicted: list[str]
    unmatched_reference: list[str]


def match_boxes_bidirectional(reference: Sequence[Box2D], predicted: Sequence[Box2D],
                              iou_min: float = DEFAULTS.iou_threshold,
                              reference_ids: Sequence[str] | None = None,
                              predicted_ids: Sequence[str] | None = None) -> MatchResult:
    """One-to-one association of reference boxes with predicted boxes.

    Each reference box first picks its best predicted box (many-to-one allowed);
    each predicted box then keeps only the reference with the highest IoU among
    those that picked it. Ties go to the lower index.
    """
    if not 0 < iou_min <= 1:
        raise UsageError(f"iou_min must lie in (0, 1], got {iou_min}")
    ref_ids = [str(i) for i in (reference_ids if reference_ids is not None
                                else range(len(reference)))]
    pred_ids = [str(i) for i in (predicted_ids if predicted_ids is not None
                                 else range(len(predicted)))]
    if not reference or not predicted:
        return MatchResult([], list(pred_ids), list(ref_ids))
    iou = np.array([[box_iou_2d(r, p) for p in predicted] for r in reference])

    best_pred = iou.argmax(axis=1)
    claims: dict[int, list[int]] = defaultdict(list)
    for i, j in enumerate(best_pred):
        if iou[i, j] >= iou_min:
            claims[int(j)].append(i)

    pairs = []
    for j in sorted(claims):
        refs = claims[j]
        i = max(refs, key=lambda r: (iou[r, j], -r))
        pairs.append((pred_ids[j], ref_ids[i], float(iou[i, j])))
    matched_pred = {p for p, _, _ in pairs}
    matched_ref = {r for _, r, _ in pairs}
    return MatchResult(pairs,
                       [p for p in pred_ids if p not in matched_pred],
                       [r for r in ref_ids if r not in matched_ref])


# -- ordering --------------------------------------------------------------------

def _centers(instances: Sequence[ObjectInstance], view: ViewAxes | None) -> np.ndarray:
    c = np.array([o.obb.center for o in instances], dtype=float)
    return view.coords(c) if view is not None else c


def dominant_axis(instances: Sequence[ObjectInstance], view: ViewAxes | None = None,
                  threshold: float | None = None,
                  defaults: Defaults = DEFAULTS) -> str | None:
    """Axis of largest centre spread, or None when the group is not spread enough.

    ``threshold`` is a standard deviation in meters; by default it is
    ``diversity_sigma_factor`` times the group's mean footprint diagonal.
    """
    if len(instances) < 2:
        raise UsageError("dominant_axis needs at least two instances")
    sigma = _centers(instances, view).std(axis=0)
    if threshold is None:
        threshold = defaults.diversity_sigma_factor * float(
            np.mean([o.obb.footprint_diagonal() for o in instances]))
    k = int(np.argmax(sigma))  # first maximum: X > Y > Z on ties
    if sigma[k] < threshold:
        return None
    return AXES[k]


def rank_objects(instances: Sequence[ObjectInstance], axis: str, direction: str,
                 view: ViewAxes | None = None) -> dict[str, int]:
    if direction not in DIRECTIONS:
        raise UsageError(f"unknown direction {direction!r}")
    dir_axis, sign = DIRECTIONS[direction]
    if axis != dir_axis:
        raise UsageError(f"direction {direction} does not run along axis {axis}")
    c = _centers(instances, view)
    k = AXES.index(axis)
    rest = [j for j in range(3) if j != k]
    order = sorted(range(len(instances)),
                   key=lambda i: (sign * c[i, k], c[i, rest[0]], c[i, rest[1]], instances[i].id))
    return {instances[i].id: n + 1 for n, i in enumerate(order)}


# -- referring expressions ---------------------------------------------------------

@dataclass
class ReferringExpression:
    object_id: str
    text: str
    tier: str  # category | attribute | ordinal | anchored
    ambiguous: bool = False
    direction: str | None = None
    ordinal: int | None = None
    anchor_id: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _base_description(o: ObjectInstance) -> str:
    if o.caption:
        return o.caption
    if o.color:
        return f"the {o.color} {o.category}"
    return f"the {o.category}"


def generate_referring_expressions(frame: SceneFrame, defaults: Defaults = DEFAULTS,
                                   template_variant: int = 0) -> list[ReferringExpression]:
    view = frame.view_axes()
    groups: dict[str, list[ObjectInstance]] = defaultdict(list)
    for o in frame.objects:
        groups[o.category].append(o)
    singles = sorted((g[0] for g in groups.values() if len(g) == 1), key=lambda o: o.id)

    out: list[ReferringExpression] = []
    for category in sorted(groups):
        members = sorted(groups[category], key=lambda o: o.id)
        if len(members) == 1:
            o = members[0]
            if o.caption or o.color:
                out.append(ReferringExpression(o.id, _base_description(o), "attribute"))
            out.append(ReferringExpression(o.id, f"the {category}", "category"))
            continue

        axis = dominant_axis(members, view, defaults=defaults)
        colors = [m.color for m in members]
        for o in members:
            if o.color and colors.count(o.color) == 1:
                out.append(ReferringExpression(o.id, f"the {o.color} {category}", "attribute"))
        if axis is None:
            for o in members:
                out.append(ReferringExpression(o.id, _base_description(o), "category",
                                               ambiguous=True))
        else:
            for direction in AXIS_DIRECTIONS[axis]:
                ranks = rank_objects(members, axis, direction, view)
                templates = ORDINAL_TEMPLATES[direction]
                tpl = templates[template_variant % len(templates)]
                for o in members:
                    text = tpl.format(dense_caption=_base_description(o),
                                      ordinal=ordinal_word(ranks[o.id]), class_name=category)
                    out.append(ReferringExpression(o.id, text, "ordinal", direction=direction,
                                                   ordinal=ranks[o.id]))
        out.extend(_anchored(members, singles, defaults))
    return out


def _anchored(members: list[ObjectInstance], anchors: list[ObjectInstance],
              defaults: Defaults) -> list[ReferringExpression]:
    """"the <category> closest to <anchor>" for members that are strictly closest."""
    out = []
    done: set[str] = set()
    for anchor in anchors:
        if anchor.category == members[0].category:
            continue
        dist = np.array([np.linalg.norm(m.obb.center - anchor.obb.center) for m in members])
        order = np.argsort(dist, kind="stable")
        if dist[order[1]] - dist[order[0]] < defaults.position_margin_abs_m:
            continue
        winner = members[int(order[0])]
        if winner.id in done:
            continue
        done.add(winner.id)
        out.append(ReferringExpression(
            winner.id, f"the {winner.category} closest to {_base_description(anchor)}",
            "anchored", anchor_id=anchor.id))
    return out


_TIER_PRIORITY = {"ordinal": 0, "attribute": 1, "anchored": 2, "category": 3}


def preferred_expressions(expressions: Iterable[ReferringExpression],
                          frame: SceneFrame) -> dict[str, ReferringExpression | None]:
    """Best unambiguous expression per object (None if the object cannot be named)."""
    by_obj: dict[str, list[ReferringExpression]] = defaultdict(list)
    for e in expressions:
        by_obj[e.object_id].append(e)
    counts = defaultdict(int)
    for o in frame.objects:
        counts[o.category] += 1
    best: dict[str, ReferringExpression | None] = {}
    for o in frame.objects:
        cands = [e for e in by_obj.get(o.id, []) if not e.ambiguous]
        if counts[o.category] > 1:
            # attribute tier only counts when it is a colour-unique phrase
            cands = [e for e in cands if e.tier != "category"]
        else:
            # a captioned single instance keeps its caption
            cands.sort(key=lambda e: 0 if e.tier == "attribute" else 1)
            best[o.id] = cands[0] if cands else None
            continue
        cands.sort(key=lambda e: _TIER_PRIORITY[e.tier])
        best[o.id] = cands[0] if cands else None
    return best


# -- graph -------------------------------------------------------------------

@dataclass
class Edge:
    subject: str
    objects: tuple[str, ...]
    relation: SpatialRelationKind
    value: bool | float

    def key(self):
        return (self.subject, self.objects, self.relation.value)

    def to_dict(self) -> dict:
        return {"subject": self.subject, "objects": list(self.objects),
                "relation": self.relation.value, "value": self.value}


@dataclass
class SceneGraph:
    frame_id: str
    nodes: list[ObjectInstance]
    edges: list[Edge]
    relations: frozenset
    image_size: tuple[int, int]
    expressions: dict[str, ReferringExpression | None] = field(default_factory=dict)

    def __post_init__(self):
        self._index = {e.key(): e for e in self.edges}

    def node(self, oid: str) -> ObjectInstance:
        for n in self.nodes:
            if n.id == oid:
                return n
        raise KeyError(oid)

    def value(self, relation, subject: str, objects: Sequence[str] = ()):
        """Edge value; absent boolean edges of a requested relation read as False."""
        relation = SpatialRelationKind(relation)
        e = self._index.get((subject, tuple(objects), relation.value))
        if e is not None:
            return e.value
        if relation in self.relations and not relation.is_metric:
            return False
        raise KeyError(f"no {relation.value} edge for {subject} {tuple(objects)}")

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            e = self.expressions.get(n.id)
            nodes.append({"id": n.id, "category": n.category, "color": n.color,
                          "caption": n.caption,
                          "expression": e.text if e is not None else None,
                          "point": [float(n.point2d.x), float(n.point2d.y)]})
        return {"frame_id": self.frame_id,
                "image_size": list(self.image_size),
                "relations": sorted(r.value for r in self.relations),
                "nodes": nodes,
                "edges": [e.to_dict() for e in self.edges]}


def build_scene_graph(frame: SceneFrame, relations: Iterable = None,
                      defaults: Defaults = DEFAULTS) -> SceneGraph:
    """Evaluate every requested relation over every compatible object tuple.

    Boolean edges are stored only when true; metric edges always. Relations
    that need orientation skip objects without an orientation annotation.
    """
    if relations is None:
        relations = [r for r in SpatialRelationKind if r.info.graph_edge]
    rels = frozenset(SpatialRelationKind(r) for r in relations)
    ev = RelationEvaluator(frame, defaults)
    ids = sorted(o.id for o in frame.objects)
    has_orient = {o.id: o.orientation is not None for o in frame.objects}

    edges: list[Edge] = []
    for rel in sorted(rels, key=lambda r: r.value):
        info = rel.info
        if not info.graph_edge:
            continue
        if info.arity == 1:
            tuples = [(a, ()) for a in ids]
        elif info.arity == 2:
            tuples = [(a, (b,)) for a in ids for b in ids if a != b]
        else:
            tuples = [(a, (b, c)) for a in ids for b in ids for c in ids
                      if len({a, b, c}) == 3 and b < c]
        for subject, others in tuples:
            if info.needs_orientation:
                needed = [subject] + (list(others) if rel.value == "relative-angle" else [])
                if not all(has_orient[x] for x in needed):
                    continue
            value = ev.evaluate(rel, subject, others)
            if info.value_type == "bool" and not value:
                continue
            edges.append(Edge(subject, tuple(others), rel, value))
    edges.sort(key=Edge.key)
    exprs = preferred_expressions(generate_referring_expressions(frame, defaults), frame)
    return SceneGraph(frame.frame_id, list(frame.objects), edges, rels,
                      (frame.intrinsics.width, frame.intrinsics.height), exprs)
