"""Procedural referring-expression scenes in a unit room.

Each scene holds a handful of floor-standing objects with a class and a
color. Proposals are Gaussian jitters of every object plus uniform clutter
boxes; each proposal carries a raw feature vector (box parameters followed
by noisy class and color one-hots, with the noise partly shared among the
jitters of one object). Every identifiable object becomes one
sample whose description code names its class, color and, when needed, a
disambiguating relation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geom3d import Aabb3, iou, iou_many, stack_params

FORMAT_VERSION = 1
N_CLASSES = 8
N_COLORS = 6
RELATIONS = ("none", "leftmost", "rightmost", "nearest")

# canonical (sx, sy, sz) per class; instances vary by +-10% per axis
CLASS_SIZES = np.array([
    [0.10, 0.10, 0.16],
    [0.22, 0.14, 0.12],
    [0.28, 0.20, 0.10],
    [0.12, 0.08, 0.22],
    [0.26, 0.12, 0.12],
    [0.06, 0.06, 0.20],
    [0.18, 0.10, 0.12],
    [0.16, 0.06, 0.24],
])

MAX_OVERLAP_IOU = 0.05
PLACEMENT_RETRIES = 1000
ATTRIBUTE_NOISE = 0.25
# jitters of one object share an appearance offset (same underlying points) plus
# their own noise; 0.2**2 + 0.15**2 == 0.25**2 keeps the marginal noise of clutter
SHARED_NOISE = 0.2
PROPOSAL_NOISE = 0.15


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SceneObject:
    box: Aabb3
    class_id: int
    color_id: int
    object_id: int


@dataclass(eq=False)
class SceneSample:
    scene_id: str
    objects: list
    proposals: list
    proposal_features: np.ndarray
    target_object_id: int
    description_code: np.ndarray
    qa_answer_id: int
    split_tag: str

    def __eq__(self, other):
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.objects == other.objects
            and self.proposals == other.proposals
            and np.array_equal(self.proposal_features, other.proposal_features)
            and self.target_object_id == other.target_object_id
            and np.array_equal(self.description_code, other.description_code)
            and self.qa_answer_id == other.qa_answer_id
            and self.split_tag == other.split_tag
        )

    @property
    def target(self) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == self.target_object_id:
                return obj
        raise KeyError(self.target_object_id)

    @property
    def proposal_params(self) -> np.ndarray:
        return stack_params(self.proposals)


@dataclass
class Dataset:
    samples: list
    header: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def n_classes(self) -> int:
        return int(self.header.get("C", N_CLASSES))

    @property
    def n_colors(self) -> int:
        return int(self.header.get("A", N_COLORS))


def description_dim(n_classes=N_CLASSES, n_colors=N_COLORS) -> int:
    return n_classes + n_colors + len(RELATIONS) + n_classes


def feature_dim(n_classes=N_CLASSES, n_colors=N_COLORS) -> int:
    return 6 + n_classes + n_colors


def encode_description(class_id, color_id, relation="none", anchor_class=None,
                       n_classes=N_CLASSES, n_colors=N_COLORS) -> np.ndarray:
    code = np.zeros(description_dim(n_classes, n_colors))
    code[class_id] = 1.0
    code[n_classes + color_id] = 1.0
    code[n_classes + n_colors + RELATIONS.index(relation)] = 1.0
    if relation == "nearest":
        code[n_classes + n_colors + len(RELATIONS) + anchor_class] = 1.0
    return code


def decode_description(code, n_classes=N_CLASSES, n_colors=N_COLORS):
    """Inverse of :func:`encode_description`: ``(class, color, relation, anchor_class)``."""
    code = np.asarray(code)
    c = int(np.argmax(code[:n_classes]))
    a = int(np.argmax(code[n_classes:n_classes + n_colors]))
    r0 = n_classes + n_colors
    rel = RELATIONS[int(np.argmax(code[r0:r0 + len(RELATIONS)]))]
    anchor = int(np.argmax(code[r0 + len(RELATIONS):])) if rel == "nearest" else None
    return c, a, rel, anchor


def resolve_description(objects, class_id, color_id, relation, anchor_class=None):
    """Objects satisfying the description (identifiable iff exactly one)."""
    cands = [o for o in objects if o.class_id == class_id and o.color_id == color_id]
    if relation == "none" or not cands:
        return cands
    xs = np.array([o.box.center[0] for o in cands])
    if relation == "leftmost":
        return [o for o, x in zip(cands, xs) if x == xs.min()]
    if relation == "rightmost":
        return [o for o, x in zip(cands, xs) if x == xs.max()]
    anchors = [o for o in objects if o.class_id == anchor_class]
    dists = []
    for o in cands:
        ds = [np.linalg.norm(np.subtract(o.box.center, a.box.center)) for a in anchors if a.object_id != o.object_id]
        dists.append(min(ds) if ds else np.inf)
    dists = np.array(dists)
    if not np.isfinite(dists.min()):
        return []
    return [o for o, d in zip(cands, dists) if d == dists.min()]


def _describe(objects, target):
    """Pick the first relation that singles out ``target``; ``None`` if none does."""
    if len(resolve_description(objects, target.class_id, target.color_id, "none")) == 1:
        return "none", None
    for rel in ("leftmost", "rightmost"):
        hit = resolve_description(objects, target.class_id, target.color_id, rel)
        if len(hit) == 1 and hit[0].object_id == target.object_id:
            return rel, None
    for anchor in sorted({o.class_id for o in objects if o.class_id != target.class_id}):
        hit = resolve_description(objects, target.class_id, target.color_id, "nearest", anchor)
        if len(hit) == 1 and hit[0].object_id == target.object_id:
            return "nearest", anchor
    return None


def _place_objects(rng, n_objects, n_classes, n_colors, seed):
    objects = []
    for oid in range(n_objects):
        cls = int(rng.integers(n_classes))
        col = int(rng.integers(n_colors))
        base = CLASS_SIZES[cls % len(CLASS_SIZES)]
        for _ in range(PLACEMENT_RETRIES):
            size = base * rng.uniform(0.9, 1.1, size=3)
            xy = rng.uniform(size[:2] / 2, 1.0 - size[:2] / 2)
            box = Aabb3((xy[0], xy[1], size[2] / 2), tuple(size))
            if all(iou(box, o.box) <= MAX_OVERLAP_IOU for o in objects):
                objects.append(SceneObject(box, cls, col, oid))
                break
        else:
            raise GenerationError(f"seed {seed}: could not place object {oid} within {PLACEMENT_RETRIES} tries")
    return objects


def _jitter(rng, box: Aabb3, noise_scale):
    c = np.asarray(box.center)
    s = np.asarray(box.size)
    c2 = c + rng.normal(0.0, noise_scale, size=3) * 3.0 * s
    s2 = s + rng.normal(0.0, noise_scale, size=3) * 3.0 * s
    s2 = np.maximum(s2, 0.25 * s)
    return Aabb3(tuple(c2), tuple(s2))


def _attribute_features(rng, cls, col, n_classes, n_colors, shared=None):
    """Noisy class and color one-hots; ``shared`` is the per-object appearance offset."""
    f = np.zeros(n_classes + n_colors)
    f[cls] = 1.0
    f[n_classes + col] = 1.0
    if shared is None:
        return f + rng.normal(0.0, ATTRIBUTE_NOISE, size=f.shape)
    return f + shared + rng.normal(0.0, PROPOSAL_NOISE, size=f.shape)


def generate(seed=7, n_scenes=200, objects_per_scene=6, jitter_per_object=4, clutter_per_scene=8,
             noise_scale=0.05, n_classes=N_CLASSES, n_colors=N_COLORS) -> Dataset:
    """Deterministic synthetic dataset; the header carries parameters and the coverage audit."""
    if min(n_scenes, objects_per_scene, jitter_per_object) < 1 or clutter_per_scene < 0:
        raise ValueError("scene, object and jitter counts must be >= 1")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    rng = np.random.default_rng(seed)
    samples = []
    for sc in range(n_scenes):
        objects = _place_objects(rng, objects_per_scene, n_classes, n_colors, seed)
        boxes, feats = [], []
        for obj in objects:
            shared = rng.normal(0.0, SHARED_NOISE, size=n_classes + n_colors)
            for _ in range(jitter_per_object):
                boxes.append(_jitter(rng, obj.box, noise_scale))
                feats.append(_attribute_features(rng, obj.class_id, obj.color_id, n_classes, n_colors, shared))
        for _ in range(clutter_per_scene):
            size = rng.uniform(0.04, 0.3, size=3)
            center = rng.uniform(size / 2, 1.0 - size / 2)
            boxes.append(Aabb3(tuple(center), tuple(size)))
            feats.append(_attribute_features(rng, int(rng.integers(n_classes)), int(rng.integers(n_colors)),
                                             n_classes, n_colors))
        order = rng.permutation(len(boxes))
        proposals = [boxes[i] for i in order]
        features = np.array([np.concatenate([boxes[i].params, feats[i]]) for i in order])

        class_counts = np.bincount([o.class_id for o in objects], minlength=n_classes)
        for target in objects:
            desc = _describe(objects, target)
            if desc is None:
                continue
            relation, anchor = desc
            samples.append(SceneSample(
                scene_id=f"scene{sc:04d}",
                objects=list(objects),
                proposals=proposals,
                proposal_features=features,
                target_object_id=target.object_id,
                description_code=encode_description(target.class_id, target.color_id, relation, anchor,
                                                    n_classes, n_colors),
                qa_answer_id=target.color_id,
                split_tag="unique" if class_counts[target.class_id] == 1 else "multiple",
            ))

    audit = coverage_audit(samples)
    header = {
        "version": FORMAT_VERSION,
        "seed": seed,
        "C": n_classes,
        "A": n_colors,
        "params": {
            "n_scenes": n_scenes,
            "objects_per_scene": objects_per_scene,
            "jitter_per_object": jitter_per_object,
            "clutter_per_scene": clutter_per_scene,
            "noise_scale": noise_scale,
        },
        "audit": audit,
    }
    if noise_scale <= 0.05 and jitter_per_object >= 4 and audit["coverage@0.25"] < 0.99:
        raise GenerationError(f"seed {seed}: coverage@0.25 = {audit['coverage@0.25']:.4f} < 0.99")
    return Dataset(samples, header)


def best_ious(samples) -> np.ndarray:
    """Highest proposal IoU with the target, per sample."""
    return np.array([iou_many(s.proposal_params, s.target.box).max() for s in samples])


def coverage_audit(samples) -> dict:
    best = best_ious(samples) if samples else np.zeros(0)
    n = len(samples)
    return {
        "n_samples": n,
        "unique_fraction": (sum(s.split_tag == "unique" for s in samples) / n) if n else 0.0,
        "coverage@0.25": float(np.mean(best >= 0.25)) if n else 0.0,
        "coverage@0.5": float(np.mean(best >= 0.5)) if n else 0.0,
    }


def caption_surrogate(sample: SceneSample, proposal_index: int, n_classes=N_CLASSES, n_colors=N_COLORS) -> float:
    """Attribute-match score in [0, 1]: how well the chosen proposal's noisy attributes name the target."""
    f = sample.proposal_features[proposal_index, 6:]
    t = sample.target
    hits = int(np.argmax(f[:n_classes]) == t.class_id) + int(np.argmax(f[n_classes:n_classes + n_colors]) == t.color_id)
    return hits / 2.0


# --- JSON-lines I/O -------------------------------------------------------

def _box_to_json(b: Aabb3):
    return {"center": list(b.center), "size": list(b.size)}


def _box_from_json(d):
    return Aabb3(tuple(d["center"]), tuple(d["size"]))


def sample_to_record(s: SceneSample) -> dict:
    return {
        "scene_id": s.scene_id,
        "objects": [
            {"object_id": o.object_id, "class_id": o.class_id, "color_id": o.color_id, "box": _box_to_json(o.box)}
            for o in s.objects
        ],
        "proposals": [_box_to_json(b) for b in s.proposals],
        "proposal_features": s.proposal_features.tolist(),
        "target_object_id": s.target_object_id,
        "description_code": s.description_code.tolist(),
        "qa_answer_id": s.qa_answer_id,
        "split_tag": s.split_tag,
    }


_REQUIRED = ("scene_id", "objects", "proposals", "proposal_features", "target_object_id",
             "description_code", "qa_answer_id", "split_tag")


def record_to_sample(rec: dict, lineno: int = 0) -> SceneSample:
    for key in _REQUIRED:
        if key not in rec:
            raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
    current = None
    try:
        current = "objects"
        objects = [
            SceneObject(_box_from_json(o["box"]), int(o["class_id"]), int(o["color_id"]), int(o["object_id"]))
            for o in rec["objects"]
        ]
        current = "proposals"
        proposals = [_box_from_json(b) for b in rec["proposals"]]
        current = "proposal_features"
        feats = np.array(rec["proposal_features"], dtype=np.float64).reshape(len(proposals), -1)
        current = "description_code"
        code = np.array(rec["description_code"], dtype=np.float64).reshape(-1)
        current = "split_tag"
        if rec["split_tag"] not in ("unique", "multiple"):
            raise ValueError(rec["split_tag"])
        current = "target_object_id"
        sample = SceneSample(str(rec["scene_id"]), objects, proposals, feats, int(rec["target_object_id"]),
                             code, int(rec["qa_answer_id"]), rec["split_tag"])
        sample.target  # noqa: B018 - validates the target reference
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"line {lineno}: bad field {current!r}: {exc}") from exc
    return sample


def write_dataset(samples, path, header: dict | None = None):
    """One JSON record per line; the header (if any) goes first."""
    if header is None and isinstance(samples, Dataset):
        header = samples.header or None
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for s in samples:
            fh.write(json.dumps(sample_to_record(s)) + "\n")


def read_dataset(path) -> Dataset:
    header = {}
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise DatasetFormatError(f"line {lineno}: expected an object")
            if lineno == 1 and "version" in rec and "scene_id" not in rec:
                header = rec
                continue
            samples.append(record_to_sample(rec, lineno))
    return Dataset(samples, header)
