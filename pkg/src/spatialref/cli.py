"""Command-line pipeline: graphs, free space, QA corpora, reward scoring, evaluation.

Exit codes: 0 success, 1 internal error, 2 input/validation error, 3 unsatisfiable request.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .defaults import DEFAULTS, Defaults
from .errors import (
    ConfigurationError,
    GenerationError,
    InvalidQueryError,
    MissingAnnotationError,
    ScoringError,
    UsageError,
    ValidationError,
)
from .evaluation import BenchmarkSample, Prediction, benchmark_success_rate
from .freespace import FreeSpaceQuery, RELATIONS, placement_mask, solve_query
from .geometry import Box2D
from .io import dumps_json, read_json, read_jsonl, write_json, write_jsonl, write_mask
from .qa import FAMILIES, QAConfig, generate_scene_qa, serialize_qa
from .relations import SpatialRelationKind
from .rewards import GroundTruthAnnotation, group_advantages, parse_response, total_reward
from .scene import load_scene
from .scene_graph import build_scene_graph, match_boxes_bidirectional
from .synthetic import generate_tabletop_scene

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_UNSAT = 0, 1, 2, 3


class Unsatisfiable(Exception):
    pass


def _defaults(args) -> Defaults:
    changes = {"cell_size_m": args.cell_size, "iou_threshold": args.iou_threshold}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        field_type = type(getattr(DEFAULTS, key, 0.0))
        try:
            changes[key] = field_type(value)
        except ValueError:
            raise ConfigurationError(f"--set {key}: {value!r} is not a {field_type.__name__}")
    return DEFAULTS.override(**changes)


def _scene_paths(args) -> list[Path]:
    paths = [Path(p) for p in args.scene or []]
    if getattr(args, "scenes_dir", None):
        paths += sorted(Path(args.scenes_dir).glob("*/scene.json"))
    if not paths:
        raise UsageError("no scenes given (use --scene or --scenes-dir)")
    return paths


# -- commands ---------------------------------------------------------------------

def cmd_build_graph(args, d: Defaults) -> int:
    scene = load_scene(args.scene)
    relations = None
    if args.relations:
        relations = [SpatialRelationKind(r) for r in args.relations.split(",")]
    graph = build_scene_graph(scene, relations, d)
    write_json(args.out, graph.to_dict())
    print(f"{scene.frame_id}: {len(graph.nodes)} nodes, {len(graph.edges)} edges -> {args.out}")
    return EXIT_OK


def cmd_free_space(args, d: Defaults) -> int:
    scene = load_scene(args.scene)
    query = FreeSpaceQuery(args.relation, tuple(args.targets))
    region = solve_query(scene, query, args.seed, defaults=d)
    k = scene.intrinsics
    write_json(args.out, region.to_dict(k.width, k.height))
    if args.mask_out:
        write_mask(args.mask_out, placement_mask(region, scene, d))
    if not region.accepted:
        raise Unsatisfiable(f"{args.relation} {list(args.targets)}: {region.rejection}")
    p = region.selected_point
    print(f"{args.relation} {list(args.targets)}: point ({p.x:.2f}, {p.y:.2f}) px, "
          f"{len(region.visible_points2d)} visible samples")
    return EXIT_OK


def cmd_gen_qa(args, d: Defaults) -> int:
    families = tuple(args.families.split(",")) if args.families else FAMILIES
    config = QAConfig(families=families, per_family=args.per_family)
    pairs, bench, gts = [], [], []
    masks: dict[str, object] = {}
    counts: Counter = Counter()
    for path in _scene_paths(args):
        scene = load_scene(path)
        for o in scene.objects:
            if o.mask is None and o.mask_ref is not None:
                scene.object_mask(o.id)
        result = generate_scene_qa(scene, config, args.seed, d)
        for fam, reason in result.report.items():
            print(f"{scene.frame_id}: skipped {fam}: {reason}", file=sys.stderr)
        k = scene.intrinsics
        for qa in result.pairs:
            counts[qa.family] += 1
            pairs.append(qa)
            if qa.qa_id not in result.masks:
                continue
            masks[qa.qa_id] = result.masks[qa.qa_id]
            subset = "location" if qa.meta["mask"]["kind"] == "object" else "placement"
            bench.append({"sample_id": qa.qa_id, "image_ref": qa.image_ref,
                          "mask_ref": f"masks/{qa.qa_id}.png", "instruction": qa.question,
                          "constraints": [c.to_dict() for c in qa.constraints],
                          "step": qa.step_count, "subset": subset})
            gts.append({"sample_id": qa.qa_id,
                        "point": [qa.answer[0] * k.width, qa.answer[1] * k.height],
                        "width": k.width, "height": k.height,
                        "key_steps": [s.to_dict() for s in qa.reasoning]})
    if args.families:
        empty = [f for f in families if counts[f] == 0]
        if empty:
            raise Unsatisfiable(f"no QA could be generated for famil"
                                f"{'ies' if len(empty) > 1 else 'y'}: {', '.join(empty)}")
    serialize_qa(pairs, args.out)
    if args.benchmark_out:
        bdir = Path(args.benchmark_out).parent
        for qid, m in masks.items():
            write_mask(bdir / "masks" / f"{qid}.png", m)
        write_jsonl(args.benchmark_out, bench)
    if args.gt_out:
        write_jsonl(args.gt_out, gts)
    summary = ", ".join(f"{f}={counts[f]}" for f in families)
    print(f"{len(pairs)} QA pairs ({summary}) -> {args.out}")
    return EXIT_OK


def cmd_score(args, d: Defaults) -> int:
    responses = read_jsonl(args.responses)
    gts = {str(r["sample_id"]): r for r in read_jsonl(args.gt)}
    ids = [str(r.get("sample_id")) for r in responses]
    orphans = [i for i in ids if i not in gts] + sorted(set(gts) - set(ids))
    if orphans:
        raise ValidationError(f"sample ids without a partner: {', '.join(orphans)}")
    rows = []
    for r, sid in zip(responses, ids):
        gt = GroundTruthAnnotation.from_dict(gts[sid])
        b = total_reward(parse_response(r.get("text", "")), gt, args.alpha, d)
        row = {"sample_id": sid}
        if "group_id" in r:
            row["group_id"] = r["group_id"]
        row.update(b.to_dict())
        rows.append(row)

    groups: list[list[int]] = []
    if args.group_size:
        n = args.group_size
        if n < 2 or len(rows) % n:
            raise ValidationError(f"{len(rows)} rows cannot be split into groups of {n}")
        groups = [list(range(i, i + n)) for i in range(0, len(rows), n)]
    elif rows and all("group_id" in r for r in responses):
        by_group: dict = {}
        for i, r in enumerate(responses):
            by_group.setdefault(r["group_id"], []).append(i)
        groups = list(by_group.values())
    for g in groups:
        adv = group_advantages([rows[i]["total"] for i in g]).advantages
        for i, a in zip(g, adv):
            rows[i]["advantage"] = a
    write_jsonl(args.out, rows)
    mean = sum(r["total"] for r in rows) / len(rows) if rows else 0.0
    print(f"scored {len(rows)} responses, mean total {mean:.4f} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args, d: Defaults) -> int:
    base = Path(args.benchmark).parent
    samples = [BenchmarkSample.from_dict(r, base) for r in read_jsonl(args.benchmark)]
    preds = [Prediction.from_dict(r) for r in read_jsonl(args.predictions)]
    report = benchmark_success_rate(preds, samples)
    if args.out:
        write_json(args.out, report.to_dict())
    print(report.format_table())
    for sid, label, counted in report.step_discrepancies:
        print(f"step label {label} differs from counted {counted}: {sid}", file=sys.stderr)
    return EXIT_OK


def cmd_synth_scenes(args, d: Defaults) -> int:
    out = Path(args.out_dir)
    for i in range(args.count):
        seed = args.seed + i
        scene = generate_tabletop_scene(seed, (args.min_objects, args.max_objects),
                                        args.width, args.height, tilt_world=args.tilt,
                                        frame_id=f"scene_{i:04d}")
        scene.save(out / f"scene_{i:04d}")
    print(f"wrote {args.count} scenes -> {out}")
    return EXIT_OK


def cmd_match_boxes(args, d: Defaults) -> int:
    def boxes(path):
        data = read_json(path)
        if isinstance(data, dict):
            return [Box2D.from_list(v) for v in data.values()], [str(k) for k in data]
        return [Box2D.from_list(v) for v in data], None

    ref, ref_ids = boxes(args.reference)
    pred, pred_ids = boxes(args.predicted)
    res = match_boxes_bidirectional(ref, pred, d.iou_threshold, ref_ids, pred_ids)
    doc = {"pairs": [{"predicted": p, "reference": r, "iou": iou} for p, r, iou in res.pairs],
           "unmatched_predicted": res.unmatched_predicted,
           "unmatched_reference": res.unmatched_reference}
    if args.out:
        write_json(args.out, doc)
    else:
        sys.stdout.write(dumps_json(doc))
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatialref", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--show-defaults", action="store_true",
                   help="print the constants table (after overrides) and exit")
    p.add_argument("--cell-size", type=float, help="occupancy cell size in meters")
    p.add_argument("--iou-threshold", type=float, help="box matching IoU threshold")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any entry of the defaults table (repeatable)")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("build-graph", help="scene graph JSON for one scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--relations", help="comma-separated relation names (default: all)")
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("free-space", help="solve one free-space placement query")
    s.add_argument("--scene", required=True)
    s.add_argument("--relation", required=True, choices=RELATIONS)
    s.add_argument("--targets", required=True, nargs="+")
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--mask-out", help="also write the placement mask PNG")
    s.set_defaults(func=cmd_free_space)

    s = sub.add_parser("gen-qa", help="generate a QA corpus (and benchmark files)")
    s.add_argument("--scene", action="append", help="scene JSON (repeatable)")
    s.add_argument("--scenes-dir", help="directory of <name>/scene.json scenes")
    s.add_argument("--families", help="comma-separated subset of: " + ",".join(FAMILIES))
    s.add_argument("--per-family", type=int, default=4)
    s.add_argument("--seed", required=True, type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--benchmark-out", help="benchmark JSONL; masks go next to it")
    s.add_argument("--gt-out", help="reward ground-truth JSONL for point answers")
    s.set_defaults(func=cmd_gen_qa)

    s = sub.add_parser("score", help="reward breakdowns for model responses")
    s.add_argument("--responses", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=DEFAULTS.alpha)
    s.add_argument("--group-size", type=int)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("evaluate", help="point-in-mask success rates")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth-scenes", help="procedural tabletop scenes")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--min-objects", type=int, default=3)
    s.add_argument("--max-objects", type=int, default=10)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=240)
    s.add_argument("--tilt", action="store_true", help="random world frame (non-trivial gravity)")
    s.set_defaults(func=cmd_synth_scenes)

    s = sub.add_parser("match-boxes", help="bidirectional IoU box matching")
    s.add_argument("--reference", required=True)
    s.add_argument("--predicted", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_match_boxes)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        d = _defaults(args)
        if args.show_defaults:
            sys.stdout.write(dumps_json(d.as_dict()))
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_INPUT
        return args.func(args, d)
    except (Unsatisfiable, InvalidQueryError, GenerationError) as e:
        print(f"unsatisfiable: {e}", file=sys.stderr)
        return EXIT_UNSAT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValidationError, ConfigurationError, UsageError, ScoringError,
            MissingAnnotationError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001 - stable exit code for pipeline callers
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
