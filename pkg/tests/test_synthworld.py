import json

import numpy as np
import pytest

from objvlp import synthworld as sw
from objvlp.geom3d import iou


@pytest.fixture(scope="module")
def small():
    return sw.generate(seed=3, n_scenes=12)


@pytest.fixture(scope="module")
def default_ds():
    return sw.generate()


def test_zero_noise_jitters_are_exact():
    ds = sw.generate(seed=1, n_scenes=3, clutter_per_scene=0, noise_scale=0.0)
    for s in ds:
        ious = [max(iou(p, o.box) for o in s.objects) for p in s.proposals]
        np.testing.assert_array_equal(ious, 1.0)


def test_deterministic(tmp_path):
    a = sw.generate(seed=5, n_scenes=8)
    b = sw.generate(seed=5, n_scenes=8)
    sw.write_dataset(a, tmp_path / "a.jsonl")
    sw.write_dataset(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert sw.generate(seed=6, n_scenes=8).samples != a.samples


def test_invariants(small):
    n_feat = sw.feature_dim()
    for s in small:
        objs = s.objects
        for o in objs:
            assert np.all(o.box.min_corner >= 0.0) and np.all(o.box.max_corner <= 1.0)
            assert 0 <= o.class_id < sw.N_CLASSES and 0 <= o.color_id < sw.N_COLORS
        for i, a in enumerate(objs):
            for b in objs[i + 1:]:
                assert iou(a.box, b.box) <= sw.MAX_OVERLAP_IOU
        assert len({o.object_id for o in objs}) == len(objs)
        assert s.proposal_features.shape == (len(s.proposals), n_feat)
        np.testing.assert_array_equal(s.proposal_features[:, :6], s.proposal_params)
        same_class = sum(o.class_id == s.target.class_id for o in objs)
        assert s.split_tag == ("unique" if same_class == 1 else "multiple")
        assert s.qa_answer_id == s.target.color_id


def test_descriptions_identify_target(small):
    for s in small:
        c, a, rel, anchor = sw.decode_description(s.description_code)
        hit = sw.resolve_description(s.objects, c, a, rel, anchor)
        assert [o.object_id for o in hit] == [s.target_object_id]
        np.testing.assert_array_equal(sw.encode_description(c, a, rel, anchor), s.description_code)


def test_one_sample_per_target(small):
    keys = [(s.scene_id, s.target_object_id) for s in small]
    assert len(keys) == len(set(keys))


def test_audit_matches_recomputation(default_ds):
    audit = default_ds.header["audit"]
    best = sw.best_ious(default_ds.samples)
    assert audit["coverage@0.5"] == float(np.mean(best >= 0.5))
    assert audit["coverage@0.25"] == float(np.mean(best >= 0.25))
    assert audit["coverage@0.25"] >= 0.99
    assert audit["n_samples"] == len(default_ds)


def test_header_fields(default_ds):
    h = default_ds.header
    assert h["version"] == sw.FORMAT_VERSION and h["seed"] == 7
    assert (h["C"], h["A"]) == (sw.N_CLASSES, sw.N_COLORS)
    assert h["params"]["n_scenes"] == 200


def test_placement_failure_names_seed():
    with pytest.raises(sw.GenerationError, match="seed 11"):
        sw.generate(seed=11, n_scenes=1, objects_per_scene=200)


@pytest.mark.parametrize("kw", [{"n_scenes": 0}, {"jitter_per_object": 0}, {"noise_scale": -1.0}])
def test_bad_arguments(kw):
    with pytest.raises(ValueError):
        sw.generate(**kw)


# --- I/O ------------------------------------------------------------------------------

def test_empty_roundtrip(tmp_path):
    p = tmp_path / "e.jsonl"
    sw.write_dataset([], p)
    assert p.read_text() == ""
    assert len(sw.read_dataset(p)) == 0


def test_roundtrip(tmp_path, small):
    p = tmp_path / "d.jsonl"
    sw.write_dataset(small, p)
    back = sw.read_dataset(p)
    assert back.header == small.header
    assert back.samples == small.samples
    lines = p.read_text().splitlines()
    assert json.loads(lines[0])["version"] == sw.FORMAT_VERSION
    assert set(json.loads(lines[1])) == {"scene_id", "objects", "proposals", "proposal_features",
                                         "target_object_id", "description_code", "qa_answer_id", "split_tag"}


MINIMAL = {
    "scene_id": "s0",
    "objects": [{"object_id": 0, "class_id": 2, "color_id": 1,
                 "box": {"center": [0.5, 0.5, 0.1], "size": [0.2, 0.2, 0.2]}}],
    "proposals": [{"center": [0.5, 0.5, 0.1], "size": [0.2, 0.2, 0.2]}],
    "proposal_features": [[0.5, 0.5, 0.1, 0.2, 0.2, 0.2, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0]],
    "target_object_id": 0,
    "description_code": sw.encode_description(2, 1).tolist(),
    "qa_answer_id": 1,
    "split_tag": "unique",
}


def test_minimal_handwritten_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(MINIMAL) + "\n")
    (s,) = sw.read_dataset(p).samples
    assert s.scene_id == "s0" and s.target.class_id == 2 and s.target.color_id == 1
    assert s.proposals[0].size == (0.2, 0.2, 0.2)
    assert s.proposal_features.shape == (1, 20)
    assert sw.decode_description(s.description_code) == (2, 1, "none", None)


@pytest.mark.parametrize("mutate,field", [
    (lambda r: r.pop("split_tag"), "split_tag"),
    (lambda r: r.__setitem__("proposals", [{"center": [0, 0, 0], "size": [0, 1, 1]}]), "proposals"),
    (lambda r: r.__setitem__("target_object_id", 9), "target_object_id"),
    (lambda r: r.__setitem__("split_tag", "weird"), "split_tag"),
])
def test_malformed_line_names_line_and_field(tmp_path, mutate, field):
    rec = json.loads(json.dumps(MINIMAL))
    mutate(rec)
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"version": 1, "seed": 0}) + "\n" + json.dumps(MINIMAL) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(sw.DatasetFormatError, match=rf"line 3.*{field}"):
        sw.read_dataset(p)


def test_invalid_json_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text("{not json\n")
    with pytest.raises(sw.DatasetFormatError, match="line 1"):
        sw.read_dataset(p)


def test_caption_surrogate_range(small):
    s = small[0]
    vals = [sw.caption_surrogate(s, i) for i in range(len(s.proposals))]
    assert set(vals) <= {0.0, 0.5, 1.0}
