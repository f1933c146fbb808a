"""Object-level contrastive losses with multiple positives.

``occ_loss`` aligns every positive proposal embedding with the description
embedding and pushes negatives away, in both directions (proposal->text and
text->proposal). ``osc_loss`` applies the same multi-positive objective to
ordered pairs of proposal embeddings, self-pairs excluded. Positives and
negatives come from the IoU filter of the same sample; there are no
cross-sample negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateBatchError(ValueError):
    """Every sample in the batch was skipped, so the loss is undefined."""


@dataclass(frozen=True)
class SimilarityConfig:
    kind: str = "dot"
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dot", "cosine"):
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be > 0")


@dataclass
class EmbeddingSet:
    proposal_embeddings: np.ndarray
    text_embedding: np.ndarray
    partition: object  # anything exposing pos_indices / neg_indices, e.g. FilterResult

    def __post_init__(self):
        self.proposal_embeddings = np.atleast_2d(np.asarray(self.proposal_embeddings, dtype=np.float64))
        self.text_embedding = np.asarray(self.text_embedding, dtype=np.float64).reshape(-1)
        n, d = self.proposal_embeddings.shape
        if d < 1 or self.text_embedding.shape[0] != d:
            raise ValueError("proposal and text embeddings must share dimension d >= 1")
        idx = np.concatenate([self.partition.pos_indices, self.partition.neg_indices])
        if len(idx) != n or set(idx.tolist()) != set(range(n)):
            raise ValueError("partition must index exactly the proposal embeddings")

    @property
    def pos_mask(self) -> np.ndarray:
        m = np.zeros(len(self.proposal_embeddings), dtype=bool)
        m[np.asarray(self.partition.pos_indices, dtype=int)] = True
        return m


@dataclass
class ContrastiveResult:
    loss: float
    proposal_grads: list = field(default_factory=list)
    text_grads: list = field(default_factory=list)
    used: list = field(default_factory=list)


def similarity(u, v, cfg: SimilarityConfig = SimilarityConfig()) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("similarity needs vectors of equal dimension")
    if cfg.kind == "dot":
        return float(u @ v) / cfg.temperature
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v) / (nu * nv * cfg.temperature)


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return x / norms, norms


def _normalize_backward(xhat, norms, g):
    # d(x/|x|) applied to upstream g
    return (g - xhat * np.sum(xhat * g, axis=1, keepdims=True)) / norms


def sim_matrix(a, b, cfg: SimilarityConfig):
    """``S[i, j] = s(a_i, b_j)`` and a function mapping dL/dS to (dL/da, dL/db)."""
    tau = cfg.temperature
    if cfg.kind == "dot":
        s = a @ b.T / tau

        def backward(g):
            return g @ b / tau, g.T @ a / tau

        return s, backward

    ah, an = _normalize_rows(a)
    bh, bn = _normalize_rows(b)
    s = ah @ bh.T / tau

    def backward(g):
        dah = g @ bh / tau
        dbh = g.T @ ah / tau
        return _normalize_backward(ah, an, dah), _normalize_backward(bh, bn, dbh)

    return s, backward


def _lse(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def _softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def _multi_positive_nll(scores, pos):
    """``-log(sum_pos exp / sum_all exp)`` over a flat score vector and its gradient."""
    loss = _lse(scores) - _lse(scores[pos])
    grad = _softmax(scores)
    grad[pos] -= _softmax(scores[pos])
    return loss, grad


def occ_sample(h, t, pos, cfg: SimilarityConfig):
    """Per-sample cross-contrastive loss and gradients ``(loss, dH, dT)``."""
    t2 = t[None, :]
    s_pt, back_pt = sim_matrix(h, t2, cfg)  # (n, 1): s(H_p, T)
    s_tp, back_tp = sim_matrix(t2, h, cfg)  # (1, n): s(T, H_p)
    l1, g1 = _multi_positive_nll(s_pt[:, 0], pos)
    l2, g2 = _multi_positive_nll(s_tp[0, :], pos)
    dh1, dt1 = back_pt(0.5 * g1[:, None])
    dt2, dh2 = back_tp(0.5 * g2[None, :])
    return 0.5 * (l1 + l2), dh1 + dh2, (dt1 + dt2)[0]


def osc_sample(h, pos, cfg: SimilarityConfig):
    """Per-sample self-contrastive loss over ordered pairs ``p != q``; returns ``(loss, dH)``."""
    n = h.shape[0]
    s, back = sim_matrix(h, h, cfg)
    off = ~np.eye(n, dtype=bool)
    num = off & np.outer(pos, pos)
    flat = s[off]
    loss, g_flat = _multi_positive_nll(flat, num[off])
    g = np.zeros_like(s)
    g[off] = g_flat
    da, db = back(g)
    return loss, da + db


def occ_loss(batch, cfg: SimilarityConfig = SimilarityConfig()) -> ContrastiveResult:
    """Mean cross-contrastive loss over samples whose positive set is nonempty.

    Raises :class:`DegenerateBatchError` when every sample lacks positives.
    """
    used = [i for i, es in enumerate(batch) if es.pos_mask.any()]
    if not used:
        raise DegenerateBatchError("no sample in the batch has a positive proposal")
    scale = 1.0 / len(used)
    res = ContrastiveResult(0.0, used=used)
    total = 0.0
    for i, es in enumerate(batch):
        if i not in used:
            res.proposal_grads.append(np.zeros_like(es.proposal_embeddings))
            res.text_grads.append(np.zeros_like(es.text_embedding))
            continue
        loss, dh, dt = occ_sample(es.proposal_embeddings, es.text_embedding, es.pos_mask, cfg)
        total += loss
        res.proposal_grads.append(scale * dh)
        res.text_grads.append(scale * dt)
    res.loss = total * scale
    return res


def osc_loss(batch, cfg: SimilarityConfig = SimilarityConfig()) -> ContrastiveResult:
    """Mean self-contrastive loss over samples with at least two positives."""
    used = [i for i, es in enumerate(batch) if es.pos_mask.sum() >= 2]
    if not used:
        raise DegenerateBatchError("no sample in the batch has two or more positive proposals")
    scale = 1.0 / len(used)
    res = ContrastiveResult(0.0, used=used)
    total = 0.0
    for i, es in enumerate(batch):
        res.text_grads.append(np.zeros_like(es.text_embedding))
        if i not in used:
            res.proposal_grads.append(np.zeros_like(es.proposal_embeddings))
            continue
        loss, dh = osc_sample(es.proposal_embeddings, es.pos_mask, cfg)
        total += loss
        res.proposal_grads.append(scale * dh)
    res.loss = total * scale
    return res


# --- batched forms for equal proposal counts ---------------------------------
#
# Same losses as occ_loss / osc_loss, vectorised over a (B, N, d) block. Both
# supported similarity kinds are symmetric, so the two OCC directions share
# one score matrix.


def _masked_exp(x, mask, axis):
    xm = np.where(mask, x, -np.inf)
    m = np.max(xm, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.exp(xm - m), m


def _masked_lse(x, mask, axis=-1):
    """Log-sum-exp over masked entries; ``-inf`` for an empty mask."""
    e, m = _masked_exp(x, mask, axis)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis) + np.log(e.sum(axis=axis))


def _masked_softmax(x, mask, axis=-1):
    e, _ = _masked_exp(x, mask, axis)
    z = e.sum(axis=axis, keepdims=True)
    return e / np.where(z > 0, z, 1.0)


def _batched_norm(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return x / n, n


def occ_loss_batched(h, t, pos, cfg: SimilarityConfig = SimilarityConfig()):
    """Batched cross-contrastive loss.

    ``h`` is ``(B, N, d)``, ``t`` is ``(B, d)``, ``pos`` is a boolean
    ``(B, N)`` mask. Returns ``(loss, dH, dT, used)`` where ``used`` marks
    samples with at least one positive.
    """
    used = pos.any(axis=1)
    if not used.any():
        raise DegenerateBatchError("no sample in the batch has a positive proposal")
    tau = cfg.temperature
    if cfg.kind == "cosine":
        hh, hn = _batched_norm(h)
        th, tn = _batched_norm(t)
    else:
        hh, th = h, t
    s = np.einsum("bnd,bd->bn", hh, th) / tau
    full = np.ones_like(pos)
    per = _masked_lse(s, full) - _masked_lse(s, pos)
    n_used = used.sum()
    loss = float(per[used].sum() / n_used)
    # both directions share s; 0.5 * (g + g) == g
    g = (_masked_softmax(s, full) - _masked_softmax(s, pos)) * (used / n_used)[:, None] / tau
    dhh = g[:, :, None] * th[:, None, :]
    dth = np.einsum("bn,bnd->bd", g, hh)
    if cfg.kind == "cosine":
        dh = (dhh - hh * np.sum(hh * dhh, axis=-1, keepdims=True)) / hn
        dt = (dth - th * np.sum(th * dth, axis=-1, keepdims=True)) / tn
        return loss, dh, dt, used
    return loss, dhh, dth, used


def osc_loss_batched(h, pos, cfg: SimilarityConfig = SimilarityConfig()):
    """Batched self-contrastive loss over ordered pairs ``p != q``; returns ``(loss, dH, used)``."""
    used = pos.sum(axis=1) >= 2
    if not used.any():
        raise DegenerateBatchError("no sample in the batch has two or more positive proposals")
    b, n, _ = h.shape
    tau = cfg.temperature
    if cfg.kind == "cosine":
        hh, hn = _batched_norm(h)
    else:
        hh = h
    s = np.einsum("bnd,bmd->bnm", hh, hh) / tau
    off = ~np.eye(n, dtype=bool)
    den = np.broadcast_to(off, (b, n, n)).reshape(b, n * n)
    num = (pos[:, :, None] & pos[:, None, :] & off).reshape(b, n * n)
    flat = s.reshape(b, n * n)
    per = _masked_lse(flat, den) - _masked_lse(flat, num)
    n_used = used.sum()
    loss = float(per[used].sum() / n_used)
    g = (_masked_softmax(flat, den) - _masked_softmax(flat, num)) * (used / n_used)[:, None] / tau
    g = g.reshape(b, n, n)
    dhh = np.einsum("bnm,bmd->bnd", g + g.transpose(0, 2, 1), hh)
    if cfg.kind == "cosine":
        return loss, (dhh - hh * np.sum(hh * dhh, axis=-1, keepdims=True)) / hn, used
    return loss, dhh, used
