import json

import numpy as np
import pytest

from spatialref.cli import main
from spatialref.io import read_mask

@pytest.fixture(scope="module")
def scenes_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["synth-scenes", "--count", "3", "--seed", "0", "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def corpus(scenes_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["gen-qa", "--scenes-dir", str(scenes_dir), "--seed", "5",
               "--out", str(out / "qa.jsonl"), "--benchmark-out", str(out / "bench.jsonl"),
               "--gt-out", str(out / "gt.jsonl")])
    assert rc == 0
    return out


def jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def edited_scene(scenes_dir, tmp_path, edit):
    src = scenes_dir / "scene_0000"
    dst = tmp_path / "scene"
    import shutil
    shutil.copytree(src, dst)
    d = json.loads((dst / "scene.json").read_text())
    edit(d, dst)
    (dst / "scene.json").write_text(json.dumps(d))
    return dst / "scene.json"


def test_synth_scenes_layout(scenes_dir):
    names = sorted(p.name for p in scenes_dir.iterdir())
    assert names == ["scene_0000", "scene_0001", "scene_0002"]
    assert (scenes_dir / "scene_0000" / "depth.bin").exists()


def test_build_graph(scenes_dir, tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["build-graph", "--scene", str(scenes_dir / "scene_0000" / "scene.json"),
                 "--out", str(out), "--relations", "left,right"]) == 0
    g = json.loads(out.read_text())
    assert g["relations"] == ["left", "right"]
    assert {e["relation"] for e in g["edges"]} <= {"left", "right"}
    assert "nodes" in capsys.readouterr().out


def test_zero_focal_length_is_input_error(scenes_dir, tmp_path, capsys):
    def edit(d, _):
        d["intrinsics"]["fx"] = 0
    path = edited_scene(scenes_dir, tmp_path, edit)
    assert main(["build-graph", "--scene", str(path), "--out", str(tmp_path / "g.json")]) == 2
    assert "intrinsics.fx" in capsys.readouterr().err


def test_missing_depth_file_is_input_error(scenes_dir, tmp_path):
    path = edited_scene(scenes_dir, tmp_path, lambda d, dst: (dst / "depth.bin").unlink())
    assert main(["build-graph", "--scene", str(path), "--out", str(tmp_path / "g.json")]) == 2


def test_free_space(scenes_dir, tmp_path):
    scene = scenes_dir / "scene_0000" / "scene.json"
    ids = [o["id"] for o in json.loads(scene.read_text())["objects"] if o["id"] != "table"]
    codes = []
    for rel in ("front", "behind", "left", "right"):
        out = tmp_path / f"{rel}.json"
        rc = main(["free-space", "--scene", str(scene), "--relation", rel, "--targets", ids[0],
                   "--seed", "1", "--out", str(out), "--mask-out", str(tmp_path / f"{rel}.png")])
        codes.append(rc)
        assert rc in (0, 3)
        assert out.exists()
        if rc == 0:
            assert read_mask(tmp_path / f"{rel}.png").any()
    assert 0 in codes


def test_between_on_single_object_scene_is_unsatisfiable(scenes_dir, tmp_path):
    def edit(d, _):
        d["objects"] = [o for o in d["objects"] if o["id"] == "table"] + \
            [o for o in d["objects"] if o["id"] != "table"][:1]
    path = edited_scene(scenes_dir, tmp_path, edit)
    d = json.loads(path.read_text())
    only = d["objects"][1]["id"]
    assert main(["free-space", "--scene", str(path), "--relation", "between",
                 "--targets", only, "table", "--seed", "0",
                 "--out", str(tmp_path / "r.json")]) == 3


def test_gen_qa_outputs(corpus):
    qa = jsonl(corpus / "qa.jsonl")
    bench = jsonl(corpus / "bench.jsonl")
    gt = jsonl(corpus / "gt.jsonl")
    assert qa and len(bench) == len(gt)
    for b in bench:
        assert read_mask(corpus / b["mask_ref"]).any()


def test_gen_qa_is_byte_identical(scenes_dir, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"qa{k}.jsonl"
        assert main(["gen-qa", "--scenes-dir", str(scenes_dir), "--seed", "9",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_unknown_family_is_input_error(scenes_dir, tmp_path):
    assert main(["gen-qa", "--scenes-dir", str(scenes_dir), "--seed", "0",
                 "--families", "gossip", "--out", str(tmp_path / "q.jsonl")]) == 2


def test_reasoning_items_score_full_marks(corpus, tmp_path):
    gts = [g for g in jsonl(corpus / "gt.jsonl") if g["key_steps"]]
    assert gts
    gt_path = write_jsonl(tmp_path / "gt.jsonl", gts)
    resp = write_jsonl(tmp_path / "r.jsonl",
                       [{"sample_id": g["sample_id"], "text": perfect_response(g)} for g in gts])
    out = tmp_path / "s.jsonl"
    assert main(["score", "--responses", str(resp), "--gt", str(gt_path),
                 "--out", str(out)]) == 0
    assert all(r["total"] == pytest.approx(2.5) for r in jsonl(out))


def perfect_response(g):
    steps = "\n".join(
        f"[{k['perception_type']}] [{k['target_text']}]: "
        + (f"[({k['value'][0]:.3f}, {k['value'][1]:.3f})]" if k["perception_type"] == "Position"
           else f"({k['value'][0]:.3f}, {k['value'][1]:.3f}, {k['value'][2]:.3f})"
           if k["perception_type"] == "Orientation" else f"{k['value']:.3f}")
        for k in g["key_steps"])
    x, y = g["point"]
    return f"<think>{steps}</think><answer>({x / g['width']:.3f}, {y / g['height']:.3f})</answer>"


def test_score_perfect_and_groups(corpus, tmp_path):
    gts = jsonl(corpus / "gt.jsonl")[:16]
    gt_path = write_jsonl(tmp_path / "gt.jsonl", gts)
    resp = write_jsonl(tmp_path / "r.jsonl",
                       [{"sample_id": g["sample_id"], "text": perfect_response(g)} for g in gts])
    out = tmp_path / "s.jsonl"
    assert main(["score", "--responses", str(resp), "--gt", str(gt_path), "--out", str(out),
                 "--group-size", "8"]) == 0
    rows = jsonl(out)
    assert len(rows) == 16
    for r, g in zip(rows, gts):
        # items without key steps have an empty think span: no process reward
        assert r["total"] == pytest.approx(2.5 if g["key_steps"] else 2.0)
    for i in (0, 8):
        assert np.mean([r["advantage"] for r in rows[i:i + 8]]) == pytest.approx(0, abs=1e-12)


def test_score_mixed_group_advantages_sum_to_zero(corpus, tmp_path):
    gts = jsonl(corpus / "gt.jsonl")[:8]
    gt_path = write_jsonl(tmp_path / "gt.jsonl", gts)
    texts = [perfect_response(g) if i % 2 else "no tags" for i, g in enumerate(gts)]
    resp = write_jsonl(tmp_path / "r.jsonl",
                       [{"sample_id": g["sample_id"], "text": t, "group_id": "a"}
                        for g, t in zip(gts, texts)])
    out = tmp_path / "s.jsonl"
    assert main(["score", "--responses", str(resp), "--gt", str(gt_path),
                 "--out", str(out)]) == 0
    adv = [r["advantage"] for r in jsonl(out)]
    assert sum(adv) == pytest.approx(0, abs=1e-12)
    assert adv[1] > 0 > adv[0]


def test_score_orphan_ids(corpus, tmp_path, capsys):
    gt_path = write_jsonl(tmp_path / "gt.jsonl", jsonl(corpus / "gt.jsonl")[:1])
    resp = write_jsonl(tmp_path / "r.jsonl", [{"sample_id": "nope", "text": ""}])
    assert main(["score", "--responses", str(resp), "--gt", str(gt_path),
                 "--out", str(tmp_path / "s.jsonl")]) == 2
    assert "nope" in capsys.readouterr().err


def test_score_bad_group_size(corpus, tmp_path):
    gts = jsonl(corpus / "gt.jsonl")[:3]
    gt_path = write_jsonl(tmp_path / "gt.jsonl", gts)
    resp = write_jsonl(tmp_path / "r.jsonl", [{"sample_id": g["sample_id"], "text": ""}
                                              for g in gts])
    assert main(["score", "--responses", str(resp), "--gt", str(gt_path),
                 "--out", str(tmp_path / "s.jsonl"), "--group-size", "2"]) == 2


def centroid_predictions(corpus):
    preds, expected = [], []
    for b in jsonl(corpus / "bench.jsonl"):
        m = read_mask(corpus / b["mask_ref"])
        rows, cols = np.nonzero(m)
        u, v = cols.mean(), rows.mean()
        h, w = m.shape
        preds.append({"sample_id": b["sample_id"], "points": [[u / w, v / h]]})
        r, c = int(np.floor(v + 0.5)), int(np.floor(u + 0.5))
        expected.append(float(m[r, c]))
    return preds, float(np.mean(expected))


def test_evaluate_centroid_baseline(corpus, tmp_path, capsys):
    preds, want = centroid_predictions(corpus)
    pred_path = write_jsonl(tmp_path / "p.jsonl", preds)
    out = tmp_path / "report.json"
    assert main(["evaluate", "--benchmark", str(corpus / "bench.jsonl"),
                 "--predictions", str(pred_path), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["overall"] == pytest.approx(want)
    assert "overall" in capsys.readouterr().out


def test_evaluate_answers_score_one(corpus, tmp_path):
    qa = {q["qa_id"]: q for q in jsonl(corpus / "qa.jsonl")}
    preds = [{"sample_id": b["sample_id"], "points": [qa[b["sample_id"]]["answer"]]}
             for b in jsonl(corpus / "bench.jsonl")]
    out = tmp_path / "report.json"
    assert main(["evaluate", "--benchmark", str(corpus / "bench.jsonl"),
                 "--predictions", str(write_jsonl(tmp_path / "p.jsonl", preds)),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["overall"] == 1.0


def test_evaluate_empty_predictions(corpus, tmp_path):
    empty = tmp_path / "p.jsonl"
    empty.write_text("")
    assert main(["evaluate", "--benchmark", str(corpus / "bench.jsonl"),
                 "--predictions", str(empty)]) == 2


def test_match_boxes(tmp_path, capsys):
    ref = tmp_path / "ref.json"
    pred = tmp_path / "pred.json"
    ref.write_text(json.dumps({"r0": [0, 0, 10, 10], "r1": [50, 50, 60, 60]}))
    pred.write_text(json.dumps({"p0": [1, 1, 10, 10], "p1": [100, 100, 110, 110]}))
    assert main(["match-boxes", "--reference", str(ref), "--predicted", str(pred)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [(p["predicted"], p["reference"]) for p in doc["pairs"]] == [("p0", "r0")]
    assert doc["unmatched_predicted"] == ["p1"]
    assert doc["unmatched_reference"] == ["r1"]


def test_show_defaults_with_overrides(capsys):
    assert main(["--cell-size", "0.02", "--set", "alpha=0.5", "--show-defaults"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["cell_size_m"] == 0.02
    assert d["alpha"] == 0.5
    assert d["iou_threshold"] == 0.5


def test_bad_override_is_input_error():
    assert main(["--set", "alpha", "--show-defaults"]) == 2


def test_no_command_is_input_error():
    assert main([]) == 2
