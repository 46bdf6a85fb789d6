"""QA corpus generation from scene graphs, free-space regions and constraint programs."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .defaults import DEFAULTS, Defaults
from .errors import GenerationError, InvalidQueryError, UsageError, ValidationError
from .evaluation import Constraint, count_reasoning_steps
from .freespace import (
    FreeSpaceQuery,
    FreeSpaceRegion,
    candidate_platforms,
    find_supporting_platform,
    placement_mask,
    solve_query,
)
from .geometry import pixel_index
from .io import atomic_write_bytes, read_jsonl
from .keysteps import KeyStep, round_half_up
from .relations import SpatialRelationKind
from .scene import ObjectInstance, SceneFrame
from .scene_graph import (
    DIRECTIONS,
    ReferringExpression,
    SceneGraph,
    build_scene_graph,
    generate_referring_expressions,
    rank_objects,
)

KINDS = ("vqa", "choice", "fact", "point", "reasoning")
ANSWER_TYPES = ("text", "choice", "number+unit", "point2d")
SOURCES = ("2d-graph", "3d-graph", "freespace", "simulation")
FAMILIES = ("location", "position", "orientation", "attribute", "quantitative", "placement",
            "between", "reasoning")
REASONING_TASKS = ("locate-from-description", "identify-from-relations", "locate-empty-space")
PLACEMENT_RELATIONS = ("front", "behind", "left", "right", "facing", "above", "below")

_KIND_TYPES = {"vqa": {"text", "number+unit"}, "choice": {"choice"}, "fact": {"text"},
               "point": {"point2d"}, "reasoning": {"point2d"}}
_RULE_TYPES = {"bool": "text", "choice": "choice", "object-at": "text",
               "metric": "number+unit", "point": "point2d", "region": "point2d",
               "constraints": "point2d"}
_SLOT = re.compile(r"\[([A-Z])\]")
_UNITS = {"meters": "meters", "radians": "radians"}

RELATION_PHRASES = {
    "left": "to the left of {}", "right": "to the right of {}", "front": "in front of {}",
    "behind": "behind {}", "near": "near {}", "facing-toward": "facing toward {}",
    "facing": "in the direction {} is facing", "above": "on top of {}",
    "below": "underneath {}", "between": "between {} and {}",
}


# -- templates -------------------------------------------------------------------

@dataclass(frozen=True)
class QATemplate:
    template_id: str
    kind: str
    family: str
    pattern: str
    slots: Mapping[str, str]  # slot letter -> object | point | value | text
    answer_rule: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"template {self.template_id}: unknown kind {self.kind!r}")
        used = set(_SLOT.findall(self.pattern))
        undeclared = used - set(self.slots)
        if undeclared:
            raise ValidationError(
                f"template {self.template_id}: undeclared slot(s) {sorted(undeclared)}")
        head = self.answer_rule.split(":")[0]
        if head not in _RULE_TYPES:
            raise ValidationError(f"template {self.template_id}: unknown rule {head!r}")
        if self.kind != "fact" and _RULE_TYPES[head] not in _KIND_TYPES[self.kind]:
            raise ValidationError(
                f"template {self.template_id}: rule {head!r} does not fit kind {self.kind!r}")

    @property
    def answer_type(self) -> str:
        return _RULE_TYPES[self.answer_rule.split(":")[0]]

    def rule(self) -> tuple[str, str | None, list[str]]:
        parts = self.answer_rule.split(":")
        if len(parts) == 1:
            return parts[0], None, []
        if len(parts) == 2:
            return parts[0], None, parts[1].split(",")
        return parts[0], parts[1], parts[2].split(",")


def load_templates(path: str | Path | None = None) -> dict[str, QATemplate]:
    if path is None:
        text = resources.files("spatialref").joinpath("data/templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {d["template_id"]: QATemplate(**d) for d in json.loads(text)}


# -- QA pairs --------------------------------------------------------------------

@dataclass
class QAPair:
    qa_id: str
    question: str
    answer_type: str
    answer: object
    reasoning: list[KeyStep] = field(default_factory=list)
    source: str = "3d-graph"
    step_count: int = 1
    image_ref: str | None = None
    depth_ref: str | None = None
    seed: int | None = None
    family: str | None = None
    template_id: str | None = None
    constraints: list[Constraint] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.answer_type not in ANSWER_TYPES:
            raise ValidationError(f"{self.qa_id}: unknown answer_type {self.answer_type!r}")
        if self.source not in SOURCES:
            raise ValidationError(f"{self.qa_id}: unknown source {self.source!r}")
        if not 1 <= self.step_count <= DEFAULTS.max_steps:
            raise ValidationError(f"{self.qa_id}: step_count must be within 1..5")
        if len(self.reasoning) > DEFAULTS.max_steps:
            raise ValidationError(f"{self.qa_id}: more than 5 reasoning steps")
        a = self.answer
        if self.answer_type == "point2d":
            ok = (isinstance(a, (list, tuple)) and len(a) == 2
                  and all(isinstance(c, (int, float)) and 0 <= c <= 1 for c in a))
            if not ok:
                raise ValidationError(f"{self.qa_id}: point answers must be normalized [x, y]")
            self.answer = [float(a[0]), float(a[1])]
        elif self.answer_type == "number+unit":
            if not (isinstance(a, dict) and set(a) == {"value", "unit"}):
                raise ValidationError(f"{self.qa_id}: number+unit answers need value and unit")
        elif not isinstance(a, str):
            raise ValidationError(f"{self.qa_id}: {self.answer_type} answers must be text")
        self.constraints = [c if isinstance(c, Constraint) else Constraint.from_dict(c)
                            for c in self.constraints]

    def to_dict(self) -> dict:
        d = {"qa_id": self.qa_id, "image_ref": self.image_ref}
        if self.depth_ref is not None:
            d["depth_ref"] = self.depth_ref
        d.update({"question": self.question, "answer_type": self.answer_type,
                  "answer": self.answer,
                  "reasoning": [k.to_dict() for k in self.reasoning],
                  "source": self.source, "step_count": self.step_count, "seed": self.seed,
                  "family": self.family, "template_id": self.template_id,
                  "constraints": [c.to_dict() for c in self.constraints],
                  "meta": self.meta})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QAPair":
        try:
            return cls(qa_id=d["qa_id"], question=d["question"], answer_type=d["answer_type"],
                       answer=d["answer"],
                       reasoning=[KeyStep.from_dict(k) for k in d.get("reasoning", [])],
                       source=d["source"], step_count=d["step_count"],
                       image_ref=d.get("image_ref"), depth_ref=d.get("depth_ref"),
                       seed=d.get("seed"), family=d.get("family"),
                       template_id=d.get("template_id"),
                       constraints=d.get("constraints", []), meta=d.get("meta", {}))
        except KeyError as e:
            raise ValidationError(f"QA record missing field {e.args[0]!r}") from None


def serialize_qa(pairs: Iterable[QAPair], path) -> Path:
    lines = [json.dumps(p.to_dict(), ensure_ascii=False) + "\n" for p in pairs]
    path = Path(path)
    atomic_write_bytes(path, "".join(lines).encode("utf-8"))
    return path


def read_qa(path) -> list[QAPair]:
    return [QAPair.from_dict(d) for d in read_jsonl(path)]


# -- helpers -----------------------------------------------------------------------

def derive_seed(seed: int, *parts) -> int:
    """Stable 63-bit sub-seed for a (seed, parts...) key."""
    h = hashlib.blake2b(repr((int(seed),) + tuple(parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def normalized_answer(u: float, v: float, width: int, height: int,
                      mask: np.ndarray | None = None) -> tuple[list[float], tuple[int, int]]:
    """Round ``(u, v)`` to three-decimal normalized coordinates.

    With a mask, the result is guaranteed to map back (half-up) onto a set pixel;
    when the direct rounding misses, the nearest set pixel whose rounding lands
    inside the mask is used instead.
    """
    def rounded(uu, vv):
        x, y = round_half_up(uu / width), round_half_up(vv / height)
        return [x, y], pixel_index(x * width, y * height)

    xy, px = rounded(u, v)
    if mask is None:
        return xy, px
    h, w = mask.shape

    def inside(p):
        return 0 <= p[0] < w and 0 <= p[1] < h and mask[p[1], p[0]]

    if inside(px):
        return xy, px
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise GenerationError("answer mask is empty")
    order = np.argsort((cols - u) ** 2 + (rows - v) ** 2, kind="stable")
    for i in order:
        xy, px = rounded(float(cols[i]), float(rows[i]))
        if inside(px):
            return xy, px
    raise GenerationError("no mask pixel survives normalized rounding")


def _expression_text(graph: SceneGraph, oid: str) -> str | None:
    e = graph.expressions.get(oid)
    return e.text if e is not None else None


def _object_mask(obj: ObjectInstance, scene: SceneFrame | None) -> np.ndarray | None:
    if obj.mask is not None:
        return obj.mask
    if scene is not None:
        try:
            return scene.object_mask(obj.id)
        except ValidationError:
            return None
    return None


def _point_text(xy) -> str:
    return f"({xy[0]:.3f}, {xy[1]:.3f})"


def _expression_constraints(expr: ReferringExpression | None,
                            graph: SceneGraph | None = None) -> list[Constraint]:
    if expr is None or expr.tier in ("attribute", "category"):
        return [Constraint(None, None, intrinsic=True)]
    if expr.tier == "ordinal":
        return [Constraint("viewer", f"ordinal-{expr.direction}")]
    anchor = (_expression_text(graph, expr.anchor_id) if graph is not None else None) \
        or expr.anchor_id
    return [Constraint(None, None, intrinsic=True),
            Constraint(anchor, "closest", anchor_id=expr.anchor_id)]


def _find_region(regions: Sequence[FreeSpaceRegion], relation: str,
                 ids: Sequence[str]) -> FreeSpaceRegion | None:
    for r in regions:
        if r.accepted and r.query.relation == relation and r.query.target_ids == tuple(ids):
            return r
    return None


# -- template instantiation ------------------------------------------------------------

@dataclass
class _Bound:
    text: str
    object_id: str | None = None
    expression: ReferringExpression | None = None


def _bind(slot: str, kind: str, value, graph: SceneGraph, w: int, h: int) -> _Bound:
    if isinstance(value, ReferringExpression):
        b = _Bound(value.text, value.object_id, value)
    elif isinstance(value, ObjectInstance):
        text = _expression_text(graph, value.id)
        if text is None:
            raise GenerationError(f"object {value.id} has no unambiguous expression")
        b = _Bound(text, value.id, graph.expressions.get(value.id))
    else:
        if kind in ("object", "point"):
            raise UsageError(f"slot [{slot}] needs an object binding")
        return _Bound(str(value))
    if kind == "point":
        node = graph.node(b.object_id)
        xy, _ = normalized_answer(node.point2d.x, node.point2d.y, w, h, node.mask)
        b.text = _point_text(xy)
    return b


def instantiate_template(t: QATemplate, bindings: Mapping[str, object], graph: SceneGraph,
                         qa_id: str = "qa", regions: Sequence[FreeSpaceRegion] = (),
                         scene: SceneFrame | None = None, seed: int | None = None,
                         defaults: Defaults = DEFAULTS) -> QAPair:
    """Fill a template's slots verbatim and compute its answer from the graph."""
    if t.kind == "fact":
        raise UsageError("fact templates render statements; use render_fact")
    missing = [s for s in t.slots if s not in bindings]
    if missing:
        raise UsageError(f"template {t.template_id}: unbound slot(s) "
                         + ", ".join(f"[{s}]" for s in missing))
    w, h = graph.image_size
    bound = {s: _bind(s, t.slots[s], bindings[s], graph, w, h) for s in t.slots}
    question = _SLOT.sub(lambda m: bound[m.group(1)].text, t.pattern)
    head, relation, args = t.rule()
    ids = [bound[a].object_id for a in args]
    names = [bound[a].text for a in args]
    if head in ("bool", "choice", "metric") and any(i is None for i in ids):
        raise UsageError(f"template {t.template_id}: rule needs object bindings")
    meta: dict = {"object_ids": ids}
    constraints: list[Constraint] = []
    source = "freespace" if head == "region" else "3d-graph"

    def edge(rel, subj, objs):
        try:
            return graph.value(rel, subj, objs)
        except KeyError as e:
            raise GenerationError(f"template {t.template_id}: {e.args[0]}") from None

    if head == "bool":
        ans = "Yes" if edge(relation, ids[0], ids[1:]) else "No"
        constraints = [Constraint(None, None, intrinsic=True),
                       Constraint(names[1], relation, anchor_id=ids[1])]
    elif head == "choice":
        if edge(relation, ids[0], [ids[1]]):
            ans, winner = names[0], ids[0]
        elif edge(relation, ids[1], [ids[0]]):
            ans, winner = names[1], ids[1]
        else:
            raise GenerationError(f"template {t.template_id}: no clear {relation} answer")
        meta.update(options=names, answer_id=winner)
        constraints = [Constraint(None, None, intrinsic=True),
                       Constraint(names[1], relation, anchor_id=ids[1])]
    elif head == "metric":
        kind = SpatialRelationKind(relation)
        value = float(edge(kind, ids[0], ids[1:]))
        unit = _UNITS[kind.info.value_type]
        ans = {"value": round_half_up(value, 2), "unit": unit}
        if f"{ans['value']:g}" in question:
            raise GenerationError(f"template {t.template_id}: question leaks the answer")
        constraints = [Constraint(None, None, intrinsic=True)]
        constraints += [Constraint(n, relation, anchor_id=i) for n, i in zip(names[1:], ids[1:])]
    elif head == "object-at":
        ans = _expression_text(graph, ids[0])
        if ans is None:
            raise GenerationError(f"object {ids[0]} has no unambiguous expression")
        meta["answer_id"] = ids[0]
        constraints = [Constraint(None, None, intrinsic=True)]
    elif head == "point":
        node = graph.node(ids[0])
        mask = _object_mask(node, scene)
        ans, px = normalized_answer(node.point2d.x, node.point2d.y, w, h, mask)
        meta.update(answer_id=ids[0], pixel=list(px), mask={"kind": "object",
                                                            "object_id": ids[0]})
        constraints = _expression_constraints(bound[args[0]].expression, graph)
    elif head == "region":
        region = _find_region(regions, relation, ids)
        if region is None:
            raise GenerationError(f"template {t.template_id}: no accepted {relation} region "
                                  f"for {tuple(ids)}")
        mask = placement_mask(region, scene, defaults) if scene is not None else None
        p = region.selected_point
        ans, px = normalized_answer(p.x, p.y, w, h, mask)
        meta.update(pixel=list(px), selected_point=[p.x, p.y],
                    mask={"kind": "region", "relation": relation, "target_ids": ids,
                          "seed": region.seed})
        if relation == "between":
            constraints = [Constraint(names[0], "between", anchor_id=ids[0]),
                           Constraint(names[1], None, anchor_id=ids[1])]
        else:
            constraints = [Constraint(names[0], relation, anchor_id=ids[0])]
    else:
        raise UsageError(f"template {t.template_id}: rule {head!r} needs a constraint program")
    meta["relation"] = relation
    return QAPair(qa_id=qa_id, question=question, answer_type=t.answer_type, answer=ans,
                  source=source, step_count=count_reasoning_steps(constraints),
                  image_ref=scene.image_ref if scene is not None else None,
                  depth_ref=scene.depth_ref if scene is not None else None, seed=seed,
                  family=t.family, template_id=t.template_id, constraints=constraints,
                  meta=meta)


def render_fact(t: QATemplate, bindings: Mapping[str, object], graph: SceneGraph) -> str:
    if t.kind != "fact":
        raise UsageError(f"template {t.template_id} is not a fact template")
    missing = [s for s in t.slots if s not in bindings]
    if missing:
        raise UsageError(f"template {t.template_id}: unbound slot(s) "
                         + ", ".join(f"[{s}]" for s in missing))
    w, h = graph.image_size
    bound = {s: _bind(s, t.slots[s], bindings[s], graph, w, h) for s in t.slots}
    return _SLOT.sub(lambda m: bound[m.group(1)].text, t.pattern)


def _meters(v: float) -> str:
    return f"{round_half_up(v, 2):g} meters"


def generate_fact_statements(graph: SceneGraph,
                             templates: Mapping[str, QATemplate] | None = None) -> list[str]:
    """Depth, location and positional statements in node-id order."""
    templates = templates or load_templates()
    nodes = sorted(graph.nodes, key=lambda n: n.id)
    facts: list[str] = []
    for n in nodes:
        try:
            depth = graph.value(SpatialRelationKind.POINT_DEPTH, n.id)
        except KeyError:
            continue
        xy, _ = normalized_answer(n.point2d.x, n.point2d.y, *graph.image_size, n.mask)
        facts.append(templates["fact-depth"].pattern.replace("[X]", _point_text(xy))
                     .replace("[V]", _meters(depth)))
    for n in nodes:
        if graph.expressions.get(n.id) is not None:
            facts.append(render_fact(templates["fact-location"], {"A": n, "X": n}, graph))
    for tid, rel in (("fact-right", "right"), ("fact-front", "front"),
                     ("fact-above", "above-world")):
        for e in graph.edges:
            if e.relation.value != rel or e.value is not True:
                continue
            a, b = e.subject, e.objects[0]
            if graph.expressions.get(a) is None or graph.expressions.get(b) is None:
                continue
            facts.append(render_fact(templates[tid], {"A": graph.node(a), "B": graph.node(b)},
                                     graph))
    return facts


# -- spatial QA --------------------------------------------------------------------------

@dataclass
class QAConfig:
    families: tuple[str, ...] = FAMILIES
    per_family: int = 4
    template_variant: int = 0

    def __post_init__(self):
        self.families = tuple(self.families)
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ValidationError(f"unknown QA famil{'ies' if len(unknown) > 1 else 'y'}: "
                                  + ", ".join(unknown))
        if self.per_family < 1:
            raise ValidationError("per_family must be >= 1")


def _family_candidates(family: str, graph: SceneGraph, templates: Mapping[str, QATemplate],
                       regions: Sequence[FreeSpaceRegion]) -> list[tuple[QATemplate, dict]]:
    named = sorted(oid for oid, e in graph.expressions.items() if e is not None)
    fam = [t for t in templates.values() if t.family == family and t.kind != "fact"]
    out = []
    for t in sorted(fam, key=lambda t: t.template_id):
        head, relation, args = t.rule()
        if head == "region":
            for r in regions:
                if not r.accepted or r.query.relation != relation:
                    continue
                ids = r.query.target_ids
                if all(i in named for i in ids):
                    out.append((t, dict(zip(args, (graph.node(i) for i in ids)))))
            continue
        slots = list(t.slots)
        if len(slots) == 1:
            combos = [(a,) for a in named]
        else:
            combos = [(a, b) for a in named for b in named if a != b]
        for combo in combos:
            nodes = [graph.node(i) for i in combo]
            if family == "orientation" and nodes[0].orientation is None:
                continue
            out.append((t, dict(zip(slots, nodes))))
    return out


def generate_spatial_qa(graph: SceneGraph, regions: Sequence[FreeSpaceRegion] = (),
                        config: QAConfig | None = None, rng_seed: int = 0,
                        scene: SceneFrame | None = None,
                        templates: Mapping[str, QATemplate] | None = None,
                        report: dict | None = None,
                        defaults: Defaults = DEFAULTS) -> list[QAPair]:
    """Up to ``per_family`` QA pairs for each requested family.

    Families that yield nothing are skipped and listed in ``report``.
    """
    config = config or QAConfig()
    templates = templates or load_templates()
    report = {} if report is None else report
    rng = np.random.Generator(np.random.Philox(rng_seed % (1 << 64)))
    out: list[QAPair] = []
    for family in config.families:
        made: list[QAPair] = []
        if family == "reasoning":
            if scene is None:
                report[family] = "reasoning QA needs the scene frame"
                continue
            for j, task in enumerate(REASONING_TASKS * config.per_family):
                if len(made) >= config.per_family:
                    break
                try:
                    qa = generate_reasoning_qa(scene, task, derive_seed(rng_seed, family, j),
                                               graph=graph, regions=regions,
                                               defaults=defaults)
                except GenerationError:
                    continue
                if any(q.question == qa.question for q in made):
                    continue
                made.append(qa)
        else:
            cands = _family_candidates(family, graph, templates, regions)
            for i in rng.permutation(len(cands)):
                if len(made) >= config.per_family:
                    break
                t, binding = cands[int(i)]
                try:
                    made.append(instantiate_template(t, binding, graph, regions=regions,
                                                     scene=scene, seed=rng_seed,
                                                     defaults=defaults))
                except GenerationError:
                    continue
        if not made:
            report[family] = "no satisfiable instance in this scene"
        for k, qa in enumerate(made):
            qa.qa_id = f"{graph.frame_id}-{family}-{k:03d}"
            qa.seed = rng_seed
        out.extend(made)
    return out


# -- reasoning QA ---------------------------------------------------------------------------

def _platform_name(pid: str, graph: SceneGraph) -> str:
    return _expression_text(graph, pid) or f"the {graph.node(pid).category}"


def _position_step(obj: ObjectInstance, text: str, w: int, h: int,
                   scene: SceneFrame) -> KeyStep:
    xy, _ = normalized_answer(obj.point2d.x, obj.point2d.y, w, h, _object_mask(obj, scene))
    return KeyStep.position(text, *xy)


def _trim(steps: list[KeyStep], cap: int) -> list[KeyStep]:
    """Keep at most ``cap`` steps, always retaining the last one."""
    return steps if len(steps) <= cap else steps[:cap - 1] + steps[-1:]


def _locate_from_description(scene, graph, exprs, rng, d) -> tuple:
    w, h = graph.image_size
    named = [graph.expressions[o] for o in sorted(graph.expressions)
             if graph.expressions[o] is not None]
    if not named:
        raise GenerationError("locate-from-description: no object has a unique expression")
    e = named[int(rng.integers(len(named)))]
    target = scene.object(e.object_id)
    steps: list[KeyStep] = []
    if e.tier == "anchored":
        anchor = scene.object(e.anchor_id)
        steps.append(_position_step(anchor, _expression_text(graph, anchor.id)
                                    or f"the {anchor.category}", w, h, scene))
    elif e.tier == "ordinal":
        members = [o for o in scene.objects if o.category == target.category]
        axis = DIRECTIONS[e.direction][0]
        ranks = rank_objects(members, axis, e.direction, scene.view_axes())
        texts = {x.object_id: x.text for x in exprs
                 if x.tier == "ordinal" and x.direction == e.direction}
        for o in sorted(members, key=lambda o: ranks[o.id]):
            if ranks[o.id] >= e.ordinal:
                break
            steps.append(_position_step(o, texts[o.id], w, h, scene))
    steps.append(_position_step(target, e.text, w, h, scene))
    question = f"Give me the position of {e.text}."
    return question, target, _expression_constraints(e, graph), _trim(steps, d.max_steps), {
        "answer_id": target.id, "expression_tier": e.tier}


_IDENTIFY_RELATIONS = ("left", "right", "front", "behind", "near", "facing-toward")


def _identify_from_relations(scene, graph, exprs, rng, d) -> tuple:
    w, h = graph.image_size
    platforms = candidate_platforms(scene)
    support = {o.id: find_supporting_platform(o, scene, platforms, d) for o in scene.objects}
    order = rng.permutation(len(scene.objects))
    for idx in order:
        target = scene.objects[int(idx)]
        plat = support[target.id]
        if plat is None:
            continue
        cands = sorted(o.id for o in scene.objects
                       if support[o.id] is not None and support[o.id].object_id == plat.object_id)
        options = []
        for rel in _IDENTIFY_RELATIONS:
            for anchor in sorted(graph.expressions):
                if anchor == target.id or graph.expressions[anchor] is None:
                    continue
                try:
                    if graph.value(rel, target.id, [anchor]) is not True:
                        continue
                except KeyError:
                    continue
                options.append((rel, anchor))
        remaining = set(cands) - {target.id}
        chosen: list[tuple[str, str]] = []

        def holds(oid, rel, anchor):
            if oid == anchor:
                return False
            try:
                return graph.value(rel, oid, [anchor]) is True
            except KeyError:
                return False

        while options:
            scored = []
            for rel, anchor in options:
                trial = [Constraint(a, r, anchor_id=a) for r, a in chosen + [(rel, anchor)]]
                if count_reasoning_steps(trial, cap=99) > d.max_steps:
                    continue
                kept = {o for o in remaining if holds(o, rel, anchor)}
                scored.append((len(kept), rel, anchor, kept))
            if not scored:
                break
            scored.sort(key=lambda s: (s[0], s[1], s[2]))
            n, rel, anchor, kept = scored[0]
            if chosen and n == len(remaining):
                break  # no progress
            chosen.append((rel, anchor))
            options.remove((rel, anchor))
            remaining = kept
            if not remaining:
                break
        if not chosen or remaining:
            continue

        constraints = [Constraint(_expression_text(graph, a), r, anchor_id=a) for r, a in chosen]
        steps: list[KeyStep] = []
        seen = set()
        for r, a in chosen:
            if a not in seen:
                seen.add(a)
                steps.append(_position_step(scene.object(a), _expression_text(graph, a),
                                            w, h, scene))
        if any(r == "facing-toward" for r, _ in chosen):
            steps.append(KeyStep.orientation(f"the {target.category}", target.orientation))
        steps.append(_position_step(target, f"the target {target.category}", w, h, scene))
        phrases = "; ".join("it is " + RELATION_PHRASES[r].format(_expression_text(graph, a))
                            for r, a in chosen)
        question = (f"Please specify an object on {_platform_name(plat.object_id, graph)} that "
                    f"satisfies the following spatial constraints: {phrases}. "
                    "Provide its 2D coordinates.")
        meta = {"answer_id": target.id, "candidate_ids": cands, "platform_id": plat.object_id,
                "relations": [[r, a] for r, a in chosen]}
        return question, target, constraints, _trim(steps, d.max_steps), meta
    raise GenerationError("identify-from-relations: no object is pinned down by its relations")


def _locate_empty_space(scene, graph, regions, seed, rng, d) -> tuple:
    w, h = graph.image_size
    named = sorted(o for o, e in graph.expressions.items() if e is not None)
    accepted = [r for r in regions if r.accepted
                and all(t in named for t in r.query.target_ids)]
    if not accepted:
        cands = [(rel, (o,)) for o in named for rel in PLACEMENT_RELATIONS]
        cands += [("between", (a, b)) for a in named for b in named if a < b]
        for i in rng.permutation(len(cands))[:24]:
            rel, ids = cands[int(i)]
            if rel == "facing" and scene.object(ids[0]).orientation is None:
                continue
            try:
                r = solve_query(scene, FreeSpaceQuery(rel, ids), derive_seed(seed, rel, *ids),
                                defaults=d)
            except InvalidQueryError:
                continue
            if r.accepted:
                accepted = [r]
                break
    if not accepted:
        raise GenerationError("locate-empty-space: no free-space region was accepted")
    region = accepted[int(rng.integers(len(accepted)))]
    rel, ids = region.query.relation, region.query.target_ids
    objs = [scene.object(i) for i in ids]
    names = [_expression_text(graph, i) for i in ids]
    steps = [_position_step(o, n, w, h, scene) for o, n in zip(objs, names)]
    if rel == "facing":
        steps.append(KeyStep.orientation(names[0], objs[0].orientation))
    if rel != "between":
        steps.append(KeyStep.size(names[0], objs[0].obb.footprint_diagonal()))
    mask = placement_mask(region, scene, d)
    p = region.selected_point
    phrase = RELATION_PHRASES[rel].format(*names)
    question = (f"Please provide a point in the vacant area on "
                f"{_platform_name(region.platform.object_id, graph)} that simultaneously "
                f"satisfies the following spatial conditions: {phrase}.")
    if rel == "between":
        constraints = [Constraint(names[0], "between", anchor_id=ids[0]),
                       Constraint(names[1], None, anchor_id=ids[1])]
    else:
        constraints = [Constraint(names[0], rel, anchor_id=ids[0])]
    ans, px = normalized_answer(p.x, p.y, w, h, mask)
    meta = {"relation": rel, "object_ids": list(ids), "pixel": list(px),
            "selected_point": [p.x, p.y],
            "mask": {"kind": "region", "relation": rel, "target_ids": list(ids),
                     "seed": region.seed}}
    return question, ans, constraints, _trim(steps, d.max_steps), meta


def generate_reasoning_qa(scene: SceneFrame, task_kind: str, rng_seed: int,
                          graph: SceneGraph | None = None,
                          regions: Sequence[FreeSpaceRegion] = (),
                          defaults: Defaults = DEFAULTS) -> QAPair:
    """One multi-step QA whose key steps record the quantities behind its answer."""
    if task_kind not in REASONING_TASKS:
        raise UsageError(f"unknown reasoning task {task_kind!r}")
    graph = graph or build_scene_graph(scene, defaults=defaults)
    rng = np.random.Generator(np.random.Philox(rng_seed % (1 << 64)))
    w, h = graph.image_size
    if task_kind == "locate-empty-space":
        question, ans, constraints, steps, meta = _locate_empty_space(
            scene, graph, regions, rng_seed, rng, defaults)
        source = "freespace"
    else:
        exprs = generate_referring_expressions(scene, defaults)
        fn = _locate_from_description if task_kind == "locate-from-description" \
            else _identify_from_relations
        question, target, constraints, steps, meta = fn(scene, graph, exprs, rng, defaults)
        ans, px = normalized_answer(target.point2d.x, target.point2d.y, w, h,
                                    _object_mask(target, scene))
        meta.update(pixel=list(px), mask={"kind": "object", "object_id": target.id})
        source = "simulation"
    meta["task"] = task_kind
    return QAPair(qa_id=f"{scene.frame_id}-{task_kind}", question=question,
                  answer_type="point2d", answer=ans, reasoning=steps, source=source,
                  step_count=count_reasoning_steps(constraints), image_ref=scene.image_ref,
                  depth_ref=scene.depth_ref, seed=rng_seed, family="reasoning",
                  template_id={"locate-from-description": "rsn-locate",
                               "identify-from-relations": "rsn-identify",
                               "locate-empty-space": "rsn-empty"}[task_kind],
                  constraints=constraints, meta=meta)


# -- whole-scene driver ----------------------------------------------------------------------

def solve_scene_regions(scene: SceneFrame, graph: SceneGraph, families: Sequence[str],
                        per_family: int, seed: int,
                        defaults: Defaults = DEFAULTS) -> list[FreeSpaceRegion]:
    """Solve shuffled placement/between queries until each family has enough accepted regions."""
    named = sorted(o for o, e in graph.expressions.items() if e is not None)
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, "regions")))
    platforms = candidate_platforms(scene)
    out: list[FreeSpaceRegion] = []
    plans = []
    if "placement" in families:
        plans.append([(rel, (o,)) for o in named for rel in PLACEMENT_RELATIONS
                      if rel != "facing" or scene.object(o).orientation is not None])
    if "between" in families:
        plans.append([("between", (a, b)) for a in named for b in named if a < b])
    for cands in plans:
        accepted = 0
        for i in rng.permutation(len(cands)):
            if accepted >= per_family:
                break
            rel, ids = cands[int(i)]
            try:
                r = solve_query(scene, FreeSpaceQuery(rel, ids), derive_seed(seed, rel, *ids),
                                platforms, defaults)
            except InvalidQueryError:
                continue
            out.append(r)
            accepted += r.accepted
    return out


@dataclass
class SceneQA:
    pairs: list[QAPair]
    masks: dict[str, np.ndarray]
    report: dict[str, str]
    graph: SceneGraph
    regions: list[FreeSpaceRegion]


def answer_mask(qa: QAPair, scene: SceneFrame, regions: Sequence[FreeSpaceRegion],
                defaults: Defaults = DEFAULTS) -> np.ndarray | None:
    """Ground-truth mask behind a point answer (object mask or placement region mask)."""
    mask_spec = qa.meta.get("mask")
    if mask_spec is None:
        return None
    if mask_spec["kind"] == "object":
        return scene.object_mask(mask_spec["object_id"])
    region = _find_region(regions, mask_spec["relation"], mask_spec["target_ids"])
    if region is None:  # solved on the fly: re-solve deterministically from its seed
        query = FreeSpaceQuery(mask_spec["relation"], mask_spec["target_ids"])
        region = solve_query(scene, query, mask_spec["seed"], defaults=defaults)
    return placement_mask(region, scene, defaults)


def generate_scene_qa(scene: SceneFrame, config: QAConfig | None = None, seed: int = 0,
                      defaults: Defaults = DEFAULTS) -> SceneQA:
    config = config or QAConfig()
    graph = build_scene_graph(scene, defaults=defaults)
    regions = solve_scene_regions(scene, graph, config.families, config.per_family, seed,
                                  defaults)
    report: dict[str, str] = {}
    pairs = generate_spatial_qa(graph, regions, config, seed, scene=scene, report=report,
                                defaults=defaults)
    masks = {}
    for qa in pairs:
        m = answer_mask(qa, scene, regions, defaults)
        if m is not None:
            masks[qa.qa_id] = m
    return SceneQA(pairs, masks, report, graph, regions)
