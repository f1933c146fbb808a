"""Toy pre-training pipeline: grounding + IoU-guided detection + object contrastive terms.

Model
-----
* proposal encoder: MLP over raw proposal features, unit-normalised output ``H_p``
* text encoder: MLP over the description code, unit-normalised output ``T``
* matching head: ``score_p = H_p . a + (H_p * T) . b``
* box head: affine map ``H_p -> 6`` deltas refining the proposal box
  (``c = c0 + s0 * 0.1 dc``, ``s = s0 * exp(0.2 ds)``), zero-initialised so an
  untrained head leaves proposals unchanged
* QA head: affine map ``[H_top, T] -> answer logits``, trained after pre-training

The matching head has no bias and no ``T``-only term: both are constant across
proposals and cancel in the softmax.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffkit, synthworld
from .contrastive import (DegenerateBatchError, EmbeddingSet, SimilarityConfig, occ_loss, occ_loss_batched,
                          osc_loss, osc_loss_batched)
from .diffkit import MlpSpec, ParamStore, init_mlp, mlp_backward, mlp_forward, sgd_step
from .geom3d import Aabb3, diou_many, iou_many
from .iou_filter import FilterConfig, filter_ious
from .metrics import GatedScore, acc_at_k_ious, em_at_k, m_at_k_iou
from .objectives import LossWeights, cross_entropy, cross_entropy_rows, oid_loss, total_loss

log = logging.getLogger(__name__)

PRETRAIN_TERMS = ("vg", "oid", "occ", "osc")


class TrainingDivergedError(RuntimeError):
    pass


class ConfigMismatchError(ValueError):
    pass


@dataclass
class Toggles:
    oid: bool = True
    occ: bool = True
    osc: bool = True


@dataclass
class RunConfig:
    data: str | None = None
    dataset: dict = field(default_factory=lambda: {
        "seed": 7, "n_scenes": 200, "objects_per_scene": 6, "jitter_per_object": 4,
        "clutter_per_scene": 8, "noise_scale": 0.05,
    })
    val_fraction: float = 0.25
    hidden: list = field(default_factory=lambda: [64])
    embed_dim: int = 16
    nonlinearity: str = "tanh"
    filter: FilterConfig = field(default_factory=FilterConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    toggles: Toggles = field(default_factory=Toggles)
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    qa_epochs: int = 10
    freeze_encoders: bool = True
    seed: int = 0
    thresholds: list = field(default_factory=lambda: [0.25, 0.5])

    def __post_init__(self):
        if isinstance(self.filter, dict):
            self.filter = FilterConfig(**self.filter)
        if isinstance(self.similarity, dict):
            self.similarity = SimilarityConfig(**self.similarity)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.toggles, dict):
            self.toggles = Toggles(**self.toggles)
        self.hidden = [int(h) for h in self.hidden]
        self.thresholds = [float(k) for k in self.thresholds]
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.qa_epochs < 0:
            raise ValueError("qa_epochs must be >= 0")
        if any(not 0.0 < k <= 1.0 for k in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return cls(**d)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def enabled_terms(self) -> set:
        on = {"vg"}
        on.update(t for t in ("oid", "occ", "osc") if getattr(self.toggles, t))
        return {t for t in on if self.weights.of(t) > 0}

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("data", None)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- data -----------------------------------------------------------------

def load_data(cfg: RunConfig, path=None) -> synthworld.Dataset:
    path = path or cfg.data
    if path:
        return synthworld.read_dataset(path)
    return synthworld.generate(**cfg.dataset)


def split_by_scene(ds: synthworld.Dataset, val_fraction: float):
    """Deterministic train/val split: the last ``val_fraction`` of scene ids go to val."""
    scenes = sorted({s.scene_id for s in ds})
    n_val = int(round(len(scenes) * val_fraction))
    val_ids = set(scenes[len(scenes) - n_val:]) if n_val else set()
    train = [s for s in ds if s.scene_id not in val_ids]
    val = [s for s in ds if s.scene_id in val_ids]
    return train, val


# --- model ----------------------------------------------------------------

@dataclass
class Model:
    store: ParamStore
    prop_spec: MlpSpec
    text_spec: MlpSpec
    n_answers: int

    @property
    def dims(self) -> dict:
        return {
            "feature_dim": self.prop_spec.layer_dims[0],
            "code_dim": self.text_spec.layer_dims[0],
            "embed_dim": self.prop_spec.layer_dims[-1],
            "n_answers": self.n_answers,
        }


def build_model(cfg: RunConfig, feature_dim: int, code_dim: int, n_answers: int, seed: int | None = None) -> Model:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    d = cfg.embed_dim
    prop_spec = MlpSpec((feature_dim, *cfg.hidden, d), cfg.nonlinearity, True)
    text_spec = MlpSpec((code_dim, *cfg.hidden, d), cfg.nonlinearity, True)
    store = ParamStore()
    init_mlp(store, "prop", prop_spec, rng)
    init_mlp(store, "text", text_spec, rng)
    bound = np.sqrt(6.0 / (2 * d + 1))
    store.add("match.w", rng.uniform(-bound, bound, size=2 * d))
    store.add("box.W", np.zeros((6, d)))
    store.add("box.b", np.zeros(6))
    bound = np.sqrt(6.0 / (2 * d + n_answers))
    store.add("qa.W", rng.uniform(-bound, bound, size=(n_answers, 2 * d)))
    store.add("qa.b", np.zeros(n_answers))
    return Model(store, prop_spec, text_spec, n_answers)


def model_for_data(cfg: RunConfig, ds: synthworld.Dataset, seed=None) -> Model:
    sample = ds[0]
    return build_model(cfg, sample.proposal_features.shape[1], sample.description_code.shape[0],
                       ds.n_colors, seed)


def match_scores(store: ParamStore, h, t):
    d = h.shape[1]
    w = store["match.w"]
    return h @ w[:d] + (h * t) @ w[d:]


def match_scores_backward(store: ParamStore, h, t, dscores):
    d = h.shape[1]
    w = store["match.w"]
    store.grads["match.w"][:d] += h.T @ dscores
    store.grads["match.w"][d:] += (h * t).T @ dscores
    dh = np.outer(dscores, w[:d]) + np.outer(dscores, w[d:] * t)
    dt = (dscores[:, None] * h).sum(axis=0) * w[d:]
    return dh, dt


# fixed normalisation of the box-head output (center, size), as in detector delta coding
BOX_DELTA_SCALE = np.array([0.1, 0.1, 0.1, 0.2, 0.2, 0.2])


def refine_boxes(store: ParamStore, h, base):
    deltas = (h @ store["box.W"].T + store["box.b"]) * BOX_DELTA_SCALE
    size0 = base[:, 3:]
    size = size0 * np.exp(deltas[:, 3:])
    center = base[:, :3] + size0 * deltas[:, :3]
    return np.concatenate([center, size], axis=1)


def refine_boxes_backward(store: ParamStore, h, base, refined, dboxes):
    dd = np.concatenate([dboxes[:, :3] * base[:, 3:], dboxes[:, 3:] * refined[:, 3:]], axis=1) * BOX_DELTA_SCALE
    store.grads["box.W"] += dd.T @ h
    store.grads["box.b"] += dd.sum(axis=0)
    return dd @ store["box.W"]


def qa_logits(store: ParamStore, h_top, t):
    return store["qa.W"] @ np.concatenate([h_top, t]) + store["qa.b"]


@dataclass
class PreparedSample:
    sample: synthworld.SceneSample
    base: np.ndarray
    gt: Aabb3
    fr: object
    vg_target: np.ndarray


def prepare(samples, cfg: RunConfig):
    """Fixed per-sample quantities: proposal params, IoU partition, matching target."""
    out = []
    for s in samples:
        base = s.proposal_params
        gt = s.target.box
        fr = filter_ious(iou_many(base, gt), cfg.filter)
        if cfg.toggles.oid:
            target = fr.weights
        else:
            target = np.zeros(len(base))
            target[fr.argmax_index] = 1.0
        out.append(PreparedSample(s, base, gt, fr, target))
    return out


def encode_batch(model: Model, batch):
    x = np.concatenate([p.sample.proposal_features for p in batch], axis=0)
    codes = np.stack([p.sample.description_code for p in batch])
    h_all, prop_cache = mlp_forward(model.prop_spec, model.store, x, "prop")
    t_all, text_cache = mlp_forward(model.text_spec, model.store, codes, "text")
    offsets = np.cumsum([0] + [len(p.base) for p in batch])
    return h_all, t_all, offsets, prop_cache, text_cache


def composite_loss(model: Model, batch, cfg: RunConfig, backward: bool = True, enabled=None,
                   vectorized: bool | None = None):
    """Pre-training loss over a batch. Accumulates gradients when ``backward``.

    Returns the :class:`LossReport`; terms without any usable sample
    (e.g. no sample with two positives for OSC) are absent. Batches whose
    samples share a proposal count take the vectorised path unless
    ``vectorized=False``.
    """
    enabled = cfg.enabled_terms() if enabled is None else enabled
    if vectorized is None:
        vectorized = len({len(p.base) for p in batch}) == 1
    h_all, t_all, offsets, prop_cache, text_cache = encode_batch(model, batch)
    if vectorized:
        terms, dh_all, dt_all = _terms_vectorized(model, batch, cfg, enabled, h_all, t_all, backward)
    else:
        terms, dh_all, dt_all = _terms_per_sample(model, batch, cfg, enabled, h_all, t_all, offsets, backward)
    if backward:
        mlp_backward(prop_cache, dh_all)
        mlp_backward(text_cache, dt_all)
    return total_loss(terms, cfg.weights, enabled)


def _terms_per_sample(model, batch, cfg, enabled, h_all, t_all, offsets, backward):
    store = model.store
    dh_all = np.zeros_like(h_all)
    dt_all = np.zeros_like(t_all)
    w = cfg.weights
    b = len(batch)
    terms = {}
    vg_total = 0.0
    oid_total = 0.0
    for i, p in enumerate(batch):
        rows = slice(offsets[i], offsets[i + 1])
        h = h_all[rows]
        t = t_all[i]
        scores = match_scores(store, h, t)
        loss, dscores = cross_entropy(scores, p.vg_target)
        vg_total += loss
        if backward and "vg" in enabled:
            dh, dt = match_scores_backward(store, h, t, dscores * (w.w_vg / b))
            dh_all[rows] += dh
            dt_all[i] += dt
        if "oid" in enabled:
            refined = refine_boxes(store, h, p.base)
            loss, dboxes = oid_loss(refined, p.gt, p.fr)
            oid_total += loss
            if backward:
                dh_all[rows] += refine_boxes_backward(store, h, p.base, refined, dboxes * (w.w_oid / b))
    terms["vg"] = vg_total / b
    if "oid" in enabled:
        terms["oid"] = oid_total / b

    if "occ" in enabled or "osc" in enabled:
        sets = [EmbeddingSet(h_all[offsets[i]:offsets[i + 1]], t_all[i], p.fr) for i, p in enumerate(batch)]
        if "occ" in enabled:
            try:
                res = occ_loss(sets, cfg.similarity)
                terms["occ"] = res.loss
                if backward:
                    for i in res.used:
                        dh_all[offsets[i]:offsets[i + 1]] += w.w_occ * res.proposal_grads[i]
                        dt_all[i] += w.w_occ * res.text_grads[i]
            except DegenerateBatchError:
                pass
        if "osc" in enabled:
            try:
                res = osc_loss(sets, cfg.similarity)
                terms["osc"] = res.loss
                if backward:
                    for i in res.used:
                        dh_all[offsets[i]:offsets[i + 1]] += w.w_osc * res.proposal_grads[i]
            except DegenerateBatchError:
                pass
    return terms, dh_all, dt_all


def _terms_vectorized(model, batch, cfg, enabled, h_all, t_all, backward):
    store = model.store
    w = cfg.weights
    b = len(batch)
    n = len(batch[0].base)
    d = h_all.shape[1]
    h = h_all.reshape(b, n, d)
    t = t_all
    ht = h * t[:, None, :]
    mw = store["match.w"]
    dh = np.zeros_like(h)
    dt = np.zeros_like(t)
    terms = {}

    scores = h @ mw[:d] + ht @ mw[d:]
    targets = np.stack([p.vg_target for p in batch])
    losses, dscores = cross_entropy_rows(scores, targets)
    terms["vg"] = float(losses.sum() / b)
    if backward and "vg" in enabled:
        g = dscores * (w.w_vg / b)
        store.grads["match.w"][:d] += np.einsum("bn,bnd->d", g, h)
        store.grads["match.w"][d:] += np.einsum("bn,bnd->d", g, ht)
        dh += g[:, :, None] * mw[:d] + g[:, :, None] * (mw[d:] * t)[:, None, :]
        dt += np.einsum("bn,bnd->bd", g, h) * mw[d:]

    if "oid" in enabled:
        base = np.concatenate([p.base for p in batch])
        gts = np.repeat(np.stack([p.gt.params for p in batch]), n, axis=0)
        weights = np.concatenate([p.fr.weights for p in batch])
        refined = refine_boxes(store, h_all, base)
        loss, _, _, _, grad = diou_many(refined, gts)
        terms["oid"] = float(np.where(weights > 0, weights * loss, 0.0).reshape(b, n).sum(axis=1).sum() / b)
        if backward:
            dboxes = grad * (weights * (w.w_oid / b))[:, None]
            dh += refine_boxes_backward(store, h_all, base, refined, dboxes).reshape(b, n, d)

    if "occ" in enabled or "osc" in enabled:
        pos = np.stack([p.fr.pos_mask for p in batch])
        if "occ" in enabled:
            try:
                loss, gh, gt_, _ = occ_loss_batched(h, t, pos, cfg.similarity)
                terms["occ"] = loss
                if backward:
                    dh += w.w_occ * gh
                    dt += w.w_occ * gt_
            except DegenerateBatchError:
                pass
        if "osc" in enabled:
            try:
                loss, gh, _ = osc_loss_batched(h, pos, cfg.similarity)
                terms["osc"] = loss
                if backward:
                    dh += w.w_osc * gh
            except DegenerateBatchError:
                pass
    return terms, dh.reshape(b * n, d), dt


def qa_loss(model: Model, batch, backward=True, train_encoders=False):
    """Answer-classification loss on the top-scored proposal; returns the batch mean."""
    store = model.store
    h_all, t_all, offsets, prop_cache, text_cache = encode_batch(model, batch)
    dh_all = np.zeros_like(h_all)
    dt_all = np.zeros_like(t_all)
    b = len(batch)
    total = 0.0
    d = h_all.shape[1]
    for i, p in enumerate(batch):
        h = h_all[offsets[i]:offsets[i + 1]]
        t = t_all[i]
        top = int(np.argmax(match_scores(store, h, t)))
        z = np.concatenate([h[top], t])
        logits = store["qa.W"] @ z + store["qa.b"]
        target = np.zeros(model.n_answers)
        target[p.sample.qa_answer_id] = 1.0
        loss, dlogits = cross_entropy(logits, target)
        total += loss
        if backward:
            g = dlogits / b
            store.grads["qa.W"] += np.outer(g, z)
            store.grads["qa.b"] += g
            dz = store["qa.W"].T @ g
            dh_all[offsets[i] + top] += dz[:d]
            dt_all[i] += dz[d:]
    if backward and train_encoders:
        mlp_backward(prop_cache, dh_all)
        mlp_backward(text_cache, dt_all)
    return total / b


# --- training ---------------------------------------------------------------

@dataclass
class TrainLog:
    seed: int
    config_hash: str
    epochs: list = field(default_factory=list)
    qa_epochs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        """Everything except wall-clock time."""
        d = self.to_dict()
        d.pop("wall_clock_s")
        return d


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _zero_frozen(store: ParamStore, trainable_prefixes):
    for name, g in store.grads.items():
        if not name.startswith(trainable_prefixes):
            g.fill(0.0)


def pretrain(model: Model, prepared, cfg: RunConfig, rng, epochs: int, log_rows: list):
    enabled = cfg.enabled_terms()
    step = 0
    for epoch in range(epochs):
        sums = {}
        counts = {}
        for idx in _batches(len(prepared), cfg.batch_size, rng):
            batch = [prepared[i] for i in idx]
            model.store.zero_grad()
            report = composite_loss(model, batch, cfg, enabled=enabled)
            if not np.isfinite(report.total) or not all(np.isfinite(v) for v in report.per_term.values()):
                raise TrainingDivergedError(f"non-finite loss at step {step} (epoch {epoch}): {report.per_term}")
            for k, v in report.per_term.items():
                sums[k] = sums.get(k, 0.0) + v
                counts[k] = counts.get(k, 0) + 1
            sums["total"] = sums.get("total", 0.0) + report.total
            counts["total"] = counts.get("total", 0) + 1
            sgd_step(model.store, cfg.lr, cfg.momentum)
            step += 1
        row = {"epoch": epoch}
        row.update({k: sums[k] / counts[k] for k in sorted(sums)})
        log_rows.append(row)
        log.debug("pretrain epoch %d %s", epoch, row)


def finetune_qa(model: Model, prepared, cfg: RunConfig, rng, epochs: int, log_rows: list, train_encoders: bool):
    prefixes = ("qa.", "prop.", "text.", "match.") if train_encoders else ("qa.",)
    for epoch in range(epochs):
        total = 0.0
        n = 0
        for idx in _batches(len(prepared), cfg.batch_size, rng):
            batch = [prepared[i] for i in idx]
            model.store.zero_grad()
            loss = qa_loss(model, batch, train_encoders=train_encoders)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite QA loss in epoch {epoch}")
            _zero_frozen(model.store, prefixes)
            _sgd_subset(model.store, cfg.lr, cfg.momentum, prefixes)
            total += loss
            n += 1
        log_rows.append({"epoch": epoch, "qa": total / n})


def _sgd_subset(store: ParamStore, lr, momentum, prefixes):
    """Momentum SGD restricted to parameters whose names start with ``prefixes``."""
    for name, p in store.params.items():
        if not name.startswith(prefixes):
            continue
        v = store.velocity[name]
        v *= momentum
        v += store.grads[name]
        p -= lr * v
    store.zero_grad()
    store.version += 1


@dataclass
class RunResult:
    model: Model
    log: TrainLog
    meta: dict


def train(cfg: RunConfig, data=None, pretrain_stage: bool = True) -> RunResult:
    """Pre-train on the proxy terms, then fine-tune the QA head.

    ``data`` is a dataset or a list of samples (defaults to the config's
    training split). Deterministic for a fixed config and seed.
    """
    start = time.perf_counter()
    if data is None:
        data, _ = split_by_scene(load_data(cfg), cfg.val_fraction)
    samples = list(data)
    if not samples:
        raise ValueError("training data is empty")
    ds = data if isinstance(data, synthworld.Dataset) else synthworld.Dataset(samples)
    model = model_for_data(cfg, ds)
    rng = np.random.default_rng([cfg.seed, 1])
    prepared = prepare(samples, cfg)
    tlog = TrainLog(cfg.seed, cfg.config_hash())
    if pretrain_stage:
        pretrain(model, prepared, cfg, rng, cfg.epochs, tlog.epochs)
    finetune_qa(model, prepared, cfg, rng, cfg.qa_epochs, tlog.qa_epochs,
                train_encoders=not cfg.freeze_encoders or not pretrain_stage)
    tlog.wall_clock_s = time.perf_counter() - start
    meta = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "dims": model.dims}
    return RunResult(model, tlog, meta)


def save_run(result: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diffkit.save_checkpoint(out / "checkpoint.json", result.model.store, result.meta)
    (out / "train_log.json").write_text(json.dumps(result.log.to_dict(), indent=2) + "\n")


def model_from_checkpoint(path, cfg: RunConfig | None = None) -> tuple[Model, RunConfig]:
    store, meta = diffkit.load_checkpoint(path)
    ck_cfg = RunConfig.from_dict(meta["config"])
    if cfg is not None and cfg.config_hash() != meta.get("config_hash"):
        raise ConfigMismatchError(
            f"checkpoint config hash {meta.get('config_hash')} != supplied config {cfg.config_hash()}")
    dims = meta["dims"]
    d = dims["embed_dim"]
    prop_spec = MlpSpec((dims["feature_dim"], *ck_cfg.hidden, d), ck_cfg.nonlinearity, True)
    text_spec = MlpSpec((dims["code_dim"], *ck_cfg.hidden, d), ck_cfg.nonlinearity, True)
    return Model(store, prop_spec, text_spec, dims["n_answers"]), ck_cfg


# --- evaluation -------------------------------------------------------------

def predict(model: Model, samples, chunk: int = 64):
    """Per-sample ``(chosen proposal, refined box params, ranked answers)``."""
    out = []
    store = model.store
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        batch = [PreparedSample(s, s.proposal_params, None, None, None) for s in part]
        h_all, t_all, offsets, _, _ = encode_batch(model, batch)
        for i, p in enumerate(batch):
            h = h_all[offsets[i]:offsets[i + 1]]
            t = t_all[i]
            top = int(np.argmax(match_scores(store, h, t)))
            box = refine_boxes(store, h[top:top + 1], p.base[top:top + 1])[0]
            ranked = np.argsort(-qa_logits(store, h[top], t), kind="stable")
            out.append((top, box, ranked.tolist()))
    return out


def report_from_predictions(samples, chosen, boxes, ranked, thresholds, em_ks=(1, 10)) -> dict:
    gts = [s.target.box for s in samples]
    ious = np.array([iou_many(np.asarray(b)[None, :], g)[0] for b, g in zip(boxes, gts)])
    tags = [s.split_tag for s in samples]
    caps = np.array([synthworld.caption_surrogate(s, c) for s, c in zip(samples, chosen)])
    report = {}
    for k in thresholds:
        report[f"acc@{k:g}"] = acc_at_k_ious(ious, k, tags)
        cap = {"overall": m_at_k_iou([GatedScore(m, i) for m, i in zip(caps, ious)], k)}
        for split in ("unique", "multiple"):
            sel = [j for j, t in enumerate(tags) if t == split]
            cap[split] = m_at_k_iou([GatedScore(caps[j], ious[j]) for j in sel], k) if sel else None
        report[f"cap@{k:g}"] = cap
    gt_answers = [{s.qa_answer_id} for s in samples]
    for kk in em_ks:
        em = {"overall": em_at_k(ranked, gt_answers, kk)}
        for split in ("unique", "multiple"):
            sel = [j for j, t in enumerate(tags) if t == split]
            em[split] = em_at_k([ranked[j] for j in sel], [gt_answers[j] for j in sel], kk) if sel else None
        report[f"em@{kk}"] = em
    return report


def evaluate(model: Model, samples, thresholds=(0.25, 0.5)) -> dict:
    samples = list(samples)
    if not samples:
        raise ValueError("evaluation data is empty")
    dims = model.dims
    s0 = samples[0]
    if s0.proposal_features.shape[1] != dims["feature_dim"] or s0.description_code.shape[0] != dims["code_dim"]:
        raise ConfigMismatchError("checkpoint dimensions do not match the evaluation data")
    preds = predict(model, samples)
    chosen = [p[0] for p in preds]
    boxes = [p[1] for p in preds]
    ranked = [p[2] for p in preds]
    return report_from_predictions(samples, chosen, boxes, ranked, thresholds)


def oracle_report(samples, thresholds=(0.25, 0.5)) -> dict:
    """Metrics of a scorer that always picks the highest-IoU proposal, unrefined."""
    chosen, boxes = [], []
    for s in samples:
        base = s.proposal_params
        j = int(np.argmax(iou_many(base, s.target.box)))
        chosen.append(j)
        boxes.append(base[j])
    ranked = [[s.qa_answer_id] for s in samples]
    return report_from_predictions(samples, chosen, boxes, ranked, thresholds)


def run_once(cfg: RunConfig, ds=None) -> dict:
    """Train on the train split and evaluate on the val split (or train split if no val)."""
    ds = load_data(cfg) if ds is None else ds
    train_s, val_s = split_by_scene(ds, cfg.val_fraction)
    tds = synthworld.Dataset(train_s, ds.header)
    result = train(cfg, tds)
    report = evaluate(result.model, val_s or train_s, cfg.thresholds)
    result.log.metrics = report
    return {"report": report, "log": result.log, "result": result}


# --- ablation / sweep ---------------------------------------------------------

ABLATION_GRID = (
    ("none", {"oid": False, "occ": False, "osc": False}),
    ("oid", {"oid": True, "occ": False, "osc": False}),
    ("occ", {"oid": False, "occ": True, "osc": False}),
    ("osc", {"oid": False, "occ": False, "osc": True}),
    ("all", {"oid": True, "occ": True, "osc": True}),
)

TABLE_METRICS = ("acc@0.25", "acc@0.5", "em@1", "em@10")


def _summarize(reports, metrics=TABLE_METRICS):
    out = {}
    for m in metrics:
        vals = [r[m]["overall"] for r in reports if m in r]
        if vals:
            out[m] = {"median": float(np.median(vals)), "min": float(min(vals)), "max": float(max(vals))}
    return out


def _cached_report(cfg: RunConfig, ds, cache):
    """``run_once(cfg, ds)["report"]``, memoised in ``cache`` by config hash when given."""
    if cache is None:
        return run_once(cfg, ds)["report"]
    key = cfg.config_hash()
    if key not in cache:
        cache[key] = run_once(cfg, ds)["report"]
    return cache[key]


def ablate(base: RunConfig, seeds, grid=ABLATION_GRID, ds=None, progress=None, cache=None) -> dict:
    """Train and evaluate every toggle combination for every seed.

    A failing run marks its cell with ``error`` and the rest of the table is
    still produced. Pass the same ``cache`` dict to :func:`delta_sweep` (on
    the same dataset) to reuse identical runs.
    """
    if len(seeds) < 1:
        raise ValueError("ablate needs at least one seed")
    ds = load_data(base) if ds is None else ds
    table = {}
    for name, toggles in grid:
        cell = {"toggles": dict(toggles), "runs": {}}
        for seed in seeds:
            cfg = replace(copy.deepcopy(base), toggles=Toggles(**toggles), seed=int(seed))
            try:
                cell["runs"][str(seed)] = _cached_report(cfg, ds, cache)
            except Exception as exc:  # noqa: BLE001 - recorded in the table
                log.warning("ablation cell %s seed %s failed: %s", name, seed, exc)
                cell["error"] = f"seed {seed}: {exc}"
            if progress:
                progress(name, seed)
        cell["summary"] = _summarize(list(cell["runs"].values()))
        table[name] = cell
    return table


def format_ablation(table: dict) -> str:
    head = f"{'row':<6}{'OID':>5}{'OCC':>5}{'OSC':>5}" + "".join(f"{m:>18}" for m in TABLE_METRICS)
    lines = [head]
    for name, cell in table.items():
        t = cell["toggles"]
        row = f"{name:<6}" + "".join(f"{'x' if t.get(k) else '':>5}" for k in ("oid", "occ", "osc"))
        for m in TABLE_METRICS:
            s = cell["summary"].get(m)
            if s is None:
                row += f"{'FAILED' if 'error' in cell else '-':>18}"
            else:
                row += f"{100 * s['median']:>8.2f} [{100 * s['min']:.1f},{100 * s['max']:.1f}]".rjust(18)
        lines.append(row)
    return "\n".join(lines)


SWEEP_VARIANTS = (
    ("full", {"oid": True, "occ": True, "osc": True}),
    ("oid_only", {"oid": True, "occ": False, "osc": False}),
)


def delta_sweep(base: RunConfig, deltas, seeds, ds=None, progress=None, cache=None) -> dict:
    """Median Acc@0.25/0.5 versus the IoU-filter threshold for the full and OID-only models."""
    if any(not 0.0 < d <= 1.0 for d in deltas):
        raise ValueError("deltas must lie in (0, 1]")
    ds = load_data(base) if ds is None else ds
    curves = {}
    for variant, toggles in SWEEP_VARIANTS:
        points = []
        for delta in deltas:
            reports = []
            for seed in seeds:
                cfg = replace(copy.deepcopy(base), toggles=Toggles(**toggles), seed=int(seed),
                              filter=FilterConfig(float(delta), base.filter.epsilon))
                reports.append(_cached_report(cfg, ds, cache))
                if progress:
                    progress(variant, delta, seed)
            summary = _summarize(reports, ("acc@0.25", "acc@0.5"))
            points.append({"delta": float(delta), **{m: v["median"] for m, v in summary.items()}})
        curves[variant] = points
    return {"curves": curves, "check": large_threshold_check(curves["full"])}


def large_threshold_check(points, metric="acc@0.5") -> dict:
    """Does the largest threshold fail to beat the best smaller one?"""
    pts = sorted(points, key=lambda p: p["delta"])
    if len(pts) < 2:
        return {"applicable": False}
    last = pts[-1][metric]
    best_other = max(p[metric] for p in pts[:-1])
    return {
        "applicable": True,
        "metric": metric,
        "largest_delta": pts[-1]["delta"],
        "value_at_largest": last,
        "best_smaller": best_other,
        "holds": bool(last <= best_other),
        "monotone_nondecreasing": bool(all(a[metric] <= b[metric] for a, b in zip(pts, pts[1:]))),
    }


def write_sweep(result: dict, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(result, indent=2) + "\n")
    for variant, points in result["curves"].items():
        for metric in ("acc@0.25", "acc@0.5"):
            with open(out / f"{variant}_{metric.replace('@', '_at_')}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["delta", metric])
                for p in points:
                    w.writerow([repr(p["delta"]), repr(p[metric])])


# --- scratch vs pre-trained ----------------------------------------------------

def compare_scratch(base: RunConfig, seeds, ds=None) -> dict:
    """QA after pre-training vs QA trained from random init for the same / longer budget."""
    ds = load_data(base) if ds is None else ds
    train_s, val_s = split_by_scene(ds, base.val_fraction)
    tds = synthworld.Dataset(train_s, ds.header)
    eval_s = val_s or train_s
    rows = {"pretrained": [], "scratch-same": [], "scratch-full": []}
    for seed in seeds:
        cfg = replace(copy.deepcopy(base), seed=int(seed), freeze_encoders=False)
        rows["pretrained"].append(evaluate(train(cfg, tds).model, eval_s, cfg.thresholds))
        rows["scratch-same"].append(evaluate(train(cfg, tds, pretrain_stage=False).model, eval_s, cfg.thresholds))
        full = replace(cfg, qa_epochs=cfg.qa_epochs + cfg.epochs)
        rows["scratch-full"].append(evaluate(train(full, tds, pretrain_stage=False).model, eval_s, cfg.thresholds))
    return {k: _summarize(v, ("em@1", "em@10")) for k, v in rows.items()}


# --- gradient check of the whole pipeline ------------------------------------------

GRADCHECK_DATA = {"n_scenes": 2, "objects_per_scene": 3, "jitter_per_object": 2, "clutter_per_scene": 2,
                  "noise_scale": 0.1}


def gradcheck_cmd(cfg: RunConfig, seeds=(0, 1, 2), corrupt: bool = False, tol: float = 1e-4,
                  h: float = 1e-5, hidden=(6,), embed_dim: int = 4, batch: int = 2,
                  max_coords: int | None = None):
    """Finite-difference check of the composite pre-training gradient at random init.

    Uses a small model and a tiny generated scene set so every coordinate is
    checked, unless ``max_coords`` subsamples each parameter. ``corrupt``
    perturbs one analytic gradient (negative control).
    """
    reports = []
    for seed in seeds:
        small = replace(copy.deepcopy(cfg), hidden=list(hidden), embed_dim=embed_dim, seed=int(seed))
        ds = synthworld.generate(seed=1000 + int(seed), **GRADCHECK_DATA)
        model = model_for_data(small, ds)
        rng = np.random.default_rng(seed)
        for name in ("box.W", "box.b"):
            model.store[name][...] = rng.normal(0.0, 0.1, size=model.store[name].shape)
        picked = [ds[i] for i in rng.choice(len(ds), size=min(batch, len(ds)), replace=False)]
        prepared = prepare(picked, small)

        def closure(store, model=model, prepared=prepared, small=small):
            loss = composite_loss(model, prepared, small).total
            if corrupt:
                store.grads["match.w"][0] += 1e-2
            return loss

        reports.append(diffkit.gradcheck(closure, model.store, h=h, tol=tol, max_coords=max_coords, seed=int(seed)))
    return reports
