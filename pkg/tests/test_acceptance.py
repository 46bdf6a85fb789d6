"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

import test_freespace as fs
import test_rewards as rw
from conftest import cached_scene
from oracles import brute_force_match, grav_to_cam, relation_oracle
from qa_oracle import check_keysteps, check_qa, verify_region
from reward_cases import GT, cases
from spatialref.cli import main
from spatialref.errors import InvalidQueryError
from spatialref.evaluation import BenchmarkSample, Prediction, benchmark_success_rate
from spatialref.freespace import FreeSpaceQuery, solve_query
from spatialref.geometry import (
    Box2D,
    CameraIntrinsics,
    Point2,
    backproject,
    gravity_align,
    gravity_rotation_from_vector,
    project,
)
from spatialref.qa import QAConfig, generate_scene_qa
from spatialref.relations import evaluate_relation
from spatialref.rewards import group_advantages, parse_response, total_reward
from spatialref.scene_graph import match_boxes_bidirectional

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return emit


def test_reward_identity(report):
    t0 = time.perf_counter()
    table = cases()
    worst = 0.0
    wrong = []
    for cid, text, expected in table:
        b = total_reward(parse_response(text), GT)
        got = (b.r_of, b.r_p, b.r_pf, b.r_acc)
        if got != expected:
            wrong.append(cid)
        worst = max(worst, abs(b.total - (b.r_of + b.r_p + 0.25 * (b.r_pf + b.r_acc))))
    perfect = total_reward(parse_response(
        "<think>[Position] [the blue cup]: [(0.500, 0.500)]\n"
        "[Orientation] [the handle of the blue cup]: (1.000, 0.000, 0.000)</think>"
        "<answer>(0.5, 0.5)</answer>"), GT).total
    empty = total_reward(parse_response(""), GT).total
    dt = time.perf_counter() - t0
    ok = len(table) == 200 and not wrong and worst <= 1e-12 and perfect == 2.5 \
        and empty == 0.0 and dt < 1.0
    report("reward identity", ok, f"{len(table)} cases, {len(wrong)} mismatched, "
           f"max identity error {worst:.1e}, perfect {perfect}, empty {empty}, {dt:.3f} s")


def test_group_advantages(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    zeros_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 65))
        r = rng.uniform(0, 2.5, n)
        adv = np.array(group_advantages(r).advantages)
        worst = max(worst, abs(adv.mean()), abs(adv.std() - 1))
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        worst = max(worst, np.abs(np.array(group_advantages(a * r + b).advantages) - adv).max())
        flat = group_advantages(np.full(n, r[0])).advantages
        zeros_ok &= all(x == 0 for x in flat)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and zeros_ok and dt < 1.0
    report("group advantages", ok, f"1000 groups, max deviation {worst:.1e}, "
           f"degenerate groups zero: {zeros_ok}, {dt:.3f} s")


def _eq(a, b):
    assert a == b, (a, b)


def _threshold_checks():
    """(constant, callable) pairs; each straddles one boundary from both sides."""
    return [
        ("L1 50 px inclusive", lambda: (rw.test_point_l1_boundary_inclusive(50.0, 1),
                                        rw.test_point_l1_boundary_inclusive(50.5, 0))),
        ("cosine 0.8 strict", lambda: (rw.test_accuracy_orientation_strict_cosine(0.81, 1.0),
                                       rw.test_accuracy_orientation_strict_cosine(0.80, 0.0))),
        ("size 15% inclusive", lambda: (rw.test_accuracy_size_tolerance(0.1021, 1.0),
                                        rw.test_accuracy_size_tolerance(0.1019, 0.0),
                                        rw.test_accuracy_size_tolerance(0.138, 1.0),
                                        rw.test_accuracy_size_tolerance(0.139, 0.0))),
        ("platform gap 0.05 m", lambda: (fs.test_gap_boundary(0.0499, True),
                                         fs.test_gap_boundary(0.0501, False))),
        ("platform overlap 70%", lambda: (fs.test_overlap_boundary(0.71, True),
                                          fs.test_overlap_boundary(0.69, False))),
        ("volume ratio 4.236", fs.test_neighbour_volume_rule),
        ("sector radius floor 0.20 m",
         lambda: (fs.test_sector_radius_floor_boundary(0.199, 0.20),
                  fs.test_sector_radius_floor_boundary(0.201, 0.201))),
        ("shrink 80%", fs.test_shrink_linear_80_percent),
        ("area floor 0.036 m2", lambda: (fs.test_vertical_area_floor(0.235, 0.235, 0.0361, True),
                                         fs.test_vertical_area_floor(0.225, 0.24, 0.036, False))),
        ("directional quota 2000", lambda: (fs.test_directional_quota(1999, False),
                                            fs.test_directional_quota(2000, True))),
        ("vertical quota 6000", lambda: (fs.test_vertical_quota(5999, False),
                                         fs.test_vertical_quota(6000, True))),
        ("sample counts 9000/10000", lambda: (
            _eq(FreeSpaceQuery("left", ("a",)).quotas(), (9000, 2000)),
            _eq(FreeSpaceQuery("above", ("a",)).quotas(), (10000, 6000)))),
        ("visibility 2.5 cm", lambda: (fs.test_visibility_boundary(0.0249, True),
                                       fs.test_visibility_boundary(0.0251, False))),
    ]


def test_threshold_fidelity(report):
    failed = []
    checks = _threshold_checks()
    for name, fn in checks:
        try:
            fn()
        except AssertionError:
            failed.append(name)
    report("threshold fidelity", not failed,
           f"{len(checks) - len(failed)}/{len(checks)} constants pinned"
           + (f", failing: {', '.join(failed)}" if failed else ""))


def test_free_space_oracle(report):
    t0 = time.perf_counter()
    good_scenes = 0
    failures = []
    points = 0
    for seed in range(100):
        f = cached_scene(seed).frame
        ids = [o.id for o in f.objects if o.id != "table"]
        regions = [solve_query(f, FreeSpaceQuery(rel, (o,)), seed)
                   for o in ids[:3] for rel in ("front", "behind", "left", "right", "above")]
        try:
            regions.append(solve_query(f, FreeSpaceQuery("between", tuple(ids[:2])), seed))
        except InvalidQueryError:
            pass
        accepted = [r for r in regions if r.accepted]
        errs = [verify_region(f, r, r.selected_point.x, r.selected_point.y) for r in accepted]
        errs = [e for e in errs if e]
        points += len(accepted)
        if accepted and not errs:
            good_scenes += 1
        failures += [(seed, e) for e in errs]
    dt = time.perf_counter() - t0
    ok = good_scenes == 100 and dt < 60
    report("free-space oracle", ok, f"{good_scenes}/100 scenes, {points} selected points, "
           f"{len(failures)} oracle failures, {dt:.1f} s")


BINARY = ["left", "right", "front", "behind", "above-world", "below-world", "above-camera",
          "below-camera", "near", "far", "bigger", "smaller", "taller", "shorter", "wider",
          "thinner", "facing-toward", "facing-away", "touching", "separated"]
ANTISYMMETRIC = ["left", "right", "front", "behind", "above-world", "below-world",
                 "above-camera", "below-camera", "bigger", "smaller", "taller", "shorter",
                 "wider", "thinner"]
EXCLUSIVE = [("left", "right"), ("front", "behind"), ("above-world", "below-world"),
             ("above-camera", "below-camera"), ("bigger", "smaller"), ("taller", "shorter"),
             ("wider", "thinner"), ("facing-toward", "facing-away")]
COMPLEMENTARY = [("near", "far"), ("touching", "separated")]


def test_relation_brute_force(report):
    rng = np.random.default_rng(7)
    pool, seed = [], 0
    while len(pool) < 1500:
        f = cached_scene(seed, tilt=True).frame
        pool += [(f, a, b) for a, b in itertools.permutations(f.objects, 2)]
        seed += 1
    picks = rng.choice(len(pool), 1000, replace=False)
    disagree, asym, excl = 0, 0, 0
    for k in picks:
        f, a, b = pool[int(k)]
        got = {}
        for rel in BINARY:
            if rel.startswith("facing") and a.orientation is None:
                continue
            got[rel] = evaluate_relation(f, rel, a.id, [b.id])
            disagree += got[rel] != relation_oracle(f, rel, a, b)
        for rel in ANTISYMMETRIC:
            asym += got[rel] and evaluate_relation(f, rel, b.id, [a.id])
        for x, y in EXCLUSIVE:
            if x in got:
                excl += got[x] and got[y]
        for x, y in COMPLEMENTARY:
            excl += got[x] == got[y]
    ok = disagree == 0 and asym == 0 and excl == 0
    report("relation brute force", ok, f"1000 pairs, {disagree} oracle disagreements, "
           f"{asym} antisymmetry and {excl} exclusivity violations")


def test_qa_soundness(report):
    items, bad = 0, []
    samples, preds = [], []
    seed = 0
    while items < 500:
        sc = cached_scene(seed)
        res = generate_scene_qa(sc.frame, QAConfig(), seed=seed)
        for qa in res.pairs:
            items += 1
            err = check_qa(qa, sc, res.graph) or check_keysteps(qa, sc)
            if err:
                bad.append((qa.qa_id, err))
            if qa.answer_type == "point2d":
                samples.append(BenchmarkSample(qa.qa_id, None, None, qa.question,
                                               qa.constraints, qa.step_count, "location",
                                               mask=res.masks[qa.qa_id]))
                preds.append(Prediction(qa.qa_id, [Point2(*qa.answer, "normalized")]))
        seed += 1
    overall = benchmark_success_rate(preds, samples).overall
    ok = not bad and overall == 1.0
    report("QA soundness", ok, f"{items - len(bad)}/{items} items re-solve to their answer, "
           f"self-consistency {overall:.4f} over {len(samples)} point answers")


def test_geometry_round_trip_and_gravity(report):
    rng = np.random.default_rng(11)
    k = CameraIntrinsics(500.0, 480.0, 320.0, 240.0, 640, 480)
    worst = 0.0
    n = 0
    while n < 1000:
        p = rng.uniform([-2, -2, 0.2], [2, 2, 10])
        u, v = project(p, k)
        if not (0 <= u <= k.width - 1 and 0 <= v <= k.height - 1):
            continue
        worst = max(worst, np.linalg.norm(backproject(u, v, p[2], k) - p))
        n += 1
    g_err, d_err = 0.0, 0.0
    for _ in range(100):
        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        rot = gravity_rotation_from_vector(g)
        g_err = max(g_err, np.linalg.norm(rot.apply_direction(g) - [0, -1, 0]))
        pts = rng.normal(size=(20, 3))
        q = gravity_align(pts, rot)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d1 = np.linalg.norm(q[:, None] - q[None], axis=-1)
        d_err = max(d_err, np.abs(d0 - d1).max())
    ok = worst < 1e-6 and g_err < 1e-6 and d_err < 1e-9
    report("geometry", ok, f"round trip {worst:.1e} m over 1000 points, gravity {g_err:.1e}, "
           f"distances {d_err:.1e}")


def test_matching_brute_force(report):
    rng = np.random.default_rng(3)
    mismatches, suites = 0, 500
    for _ in range(suites):
        def boxes(n):
            xy = rng.integers(0, 40, (n, 2))
            wh = rng.integers(1, 20, (n, 2))
            return [[int(a), int(b), int(a + c), int(b + d)] for (a, b), (c, d) in zip(xy, wh)]
        ref, pred = boxes(int(rng.integers(0, 9))), boxes(int(rng.integers(0, 9)))
        t = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        r = match_boxes_bidirectional([Box2D(*b) for b in ref], [Box2D(*b) for b in pred], t)
        got = [(int(p), int(q)) for p, q, _ in r.pairs]
        ps, qs = [p for p, _ in got], [q for _, q in got]
        injective = len(set(ps)) == len(ps) and len(set(qs)) == len(qs)
        want = [(j, i) for j, i, _ in brute_force_match(ref, pred, t)]
        mismatches += (got != want) or not injective
    report("matching", mismatches == 0, f"{suites - mismatches}/{suites} random suites "
           "identical to the brute-force oracle")


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def _pipeline(root: Path) -> dict:
    scenes = root / "scenes"
    main(["synth-scenes", "--count", "2", "--seed", "3", "--out-dir", str(scenes), "--tilt"])
    scene = scenes / "scene_0000" / "scene.json"
    main(["build-graph", "--scene", str(scene), "--out", str(root / "graph.json")])
    target = json.loads(scene.read_text())["objects"][1]["id"]
    main(["free-space", "--scene", str(scene), "--relation", "front", "--targets", target,
          "--seed", "4", "--out", str(root / "fs.json"), "--mask-out", str(root / "fs.png")])
    main(["gen-qa", "--scenes-dir", str(scenes), "--seed", "4", "--out", str(root / "qa.jsonl"),
          "--benchmark-out", str(root / "bench" / "bench.jsonl"),
          "--gt-out", str(root / "gt.jsonl")])
    gts = [json.loads(line) for line in (root / "gt.jsonl").read_text().splitlines()]
    (root / "resp.jsonl").write_text("".join(
        json.dumps({"sample_id": g["sample_id"], "text": f"<answer>({i}, {i})</answer>"}) + "\n"
        for i, g in enumerate(gts)))
    main(["score", "--responses", str(root / "resp.jsonl"), "--gt", str(root / "gt.jsonl"),
          "--out", str(root / "scores.jsonl")])
    return _tree_bytes(root)


def test_determinism(report, tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    report("determinism", same and len(a) > 10,
           f"{len(a)} output files from synth-scenes, build-graph, free-space, gen-qa and "
           f"score byte-identical across two runs: {same}")
