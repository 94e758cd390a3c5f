"""Training procedures for the chart model.

train_unilocpro optimizes the multi-component loss (pairwise + triplet,
LoS anchoring, map-alignment OT via Sinkhorn inside the loop);
train_uniloc fits self-generated labels produced by a single barycentric
OT projection before training; train_fingerprint is the supervised
reference on ground-truth labels.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DegenerateGeometry
from ..ot import SinkhornConfig, auto_label_eps, barycentric_labels, ot_loss
from ..setmetrics import DissimilarityMatrix, TripletSet
from .losses import LossWeights, loss_los, loss_pairwise, loss_triplet
from .model import Adam, ChartModel, ChartModelConfig


@dataclass
class TrainConfig:
    mode: str = "unilocpro"   # unilocpro | uniloc | fingerprint | affinecc
    lr: float = 1e-3
    lr_decay: float = 0.97
    batch_size: int = 128     # 0 -> full batch
    epochs: int = 60
    seed: int = 0
    ot_target_factor: int = 2     # per-batch OT targets per identified-NLoS member
    label_target_factor: int = 4  # label-projection targets per NLoS sample

    def __post_init__(self):
        if self.mode not in ("unilocpro", "uniloc", "fingerprint", "affinecc"):
            raise ConfigError(f"unknown train mode {self.mode!r}")
        if self.batch_size == 1:
            raise ConfigError("batch_size must be 0 (full) or >= 2 for batchnorm")
        if self.epochs < 1 or self.lr <= 0 or not (0 < self.lr_decay <= 1):
            raise ConfigError("bad optimizer settings")


@dataclass
class TrainHistory:
    step_losses: list[dict] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    validation_mse: list[float] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size <= 0 or batch_size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def _triplet_arrays(triplets: TripletSet):
    r = np.array([t.ref for t in triplets.triplets], dtype=int)
    p = np.array([t.pos for t in triplets.triplets], dtype=int)
    n = np.array([t.neg for t in triplets.triplets], dtype=int)
    return r, p, n


def _batch_triplets(tri_rpn, pos_of):
    """Triplets whose members are all inside the batch, as batch positions."""
    r, p, n = tri_rpn
    rr, pp, nn = pos_of[r], pos_of[p], pos_of[n]
    keep = (rr >= 0) & (pp >= 0) & (nn >= 0)
    return rr[keep], pp[keep], nn[keep]


def _record_validation(model, history, validation):
    if validation is None:
        return
    feats, truth = validation
    pred = model.predict(feats)
    history.validation_mse.append(float(np.mean(np.sum((pred - truth) ** 2, axis=1))))


def train_unilocpro(
    features: np.ndarray,
    iprime: np.ndarray,
    anchors: np.ndarray,
    dissim: DissimilarityMatrix | np.ndarray,
    nlos_targets: np.ndarray,
    weights: LossWeights,
    sink_cfg: SinkhornConfig,
    tcfg: TrainConfig,
    triplets: TripletSet | None = None,
    model_cfg: ChartModelConfig | None = None,
    validation=None,
):
    """Joint training with pairwise, triplet, LoS-anchor, and OT losses.

    Per step: sample batch -> forward -> combine loss gradients w.r.t. the
    embedded batch -> backprop -> Adam update (learning rate decayed per
    epoch). The OT term couples the batch's identified-NLoS embeddings to a
    fresh uniform subsample of the NLoS target grid.
    """
    feats = np.asarray(features, dtype=float)
    iprime = np.asarray(iprime, dtype=int)
    anchors = np.asarray(anchors, dtype=float)[:, :2]
    D = dissim.values if isinstance(dissim, DissimilarityMatrix) else np.asarray(dissim)
    targets = np.asarray(nlos_targets, dtype=float)[:, :2]
    n = len(feats)
    if D.shape != (n, n):
        raise ConfigError("dissimilarity matrix size does not match the dataset")
    if weights.w_tri > 0 and triplets is None:
        raise ConfigError("triplet weight is positive but no triplets were supplied")
    tri_rpn = _triplet_arrays(triplets) if triplets is not None and weights.w_tri > 0 else None

    model_cfg = model_cfg or ChartModelConfig(seed=tcfg.seed)
    model = ChartModel(feats.shape[1], model_cfg)
    opt = Adam(model.params, lr=tcfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(tcfg.seed), 0x7E0]))
    history = TrainHistory()

    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        lr = tcfg.lr * tcfg.lr_decay ** epoch
        epoch_losses = []
        for idx in _batches(n, tcfg.batch_size, rng):
            emb, cache = model.forward(feats[idx], training=True)
            d_emb = np.zeros_like(emb)
            terms = {}

            v_pwd, g_pwd = loss_pairwise(emb, D[np.ix_(idx, idx)])
            terms["pwd"] = v_pwd
            d_emb += weights.w_ccc * weights.w_pwd * g_pwd

            v_tri = 0.0
            if tri_rpn is not None:
                pos_of = np.full(n, -1, dtype=int)
                pos_of[idx] = np.arange(len(idx))
                rr, pp, nn = _batch_triplets(tri_rpn, pos_of)
                if len(rr):
                    v_tri, g_r, g_p, g_n = loss_triplet(
                        emb[rr], emb[pp], emb[nn], weights.margin
                    )
                    w = weights.w_ccc * weights.w_tri
                    np.add.at(d_emb, rr, w * g_r)
                    np.add.at(d_emb, pp, w * g_p)
                    np.add.at(d_emb, nn, w * g_n)
            terms["tri"] = v_tri

            mask = iprime[idx] == 1
            v_los, g_los = loss_los(emb, anchors[idx], mask)
            terms["los"] = v_los
            d_emb += weights.w_los * g_los

            v_ot = 0.0
            nlos_rows = np.flatnonzero(iprime[idx] == 0)
            if weights.w_ot > 0 and len(nlos_rows) and len(targets):
                n_t = min(len(targets), max(1, tcfg.ot_target_factor * len(nlos_rows)))
                pick = rng.choice(len(targets), size=n_t, replace=False)
                v_ot, g_ot, _ = ot_loss(emb[nlos_rows], targets[pick], sink_cfg)
                d_emb[nlos_rows] += weights.w_ot * g_ot
            terms["ot"] = v_ot

            total = (
                weights.w_ccc * (weights.w_pwd * v_pwd + weights.w_tri * v_tri)
                + weights.w_los * v_los
                + weights.w_ot * v_ot
            )
            terms["total"] = total
            grads, _ = model.backward(cache, d_emb)
            opt.step(model.params, grads, lr=lr)
            history.step_losses.append(terms)
            epoch_losses.append(total)
        history.epoch_loss.append(float(np.mean(epoch_losses)))
        history.epoch_seconds.append(time.perf_counter() - t0)
        _record_validation(model, history, validation)
    return model, history


def self_generated_labels(
    anchors: np.ndarray,
    iprime: np.ndarray,
    nlos_targets: np.ndarray,
    sink_cfg: SinkhornConfig,
    target_factor: int = 4,
    seed: int = 0,
    label_eps: float | None = None,
):
    """Training labels: model-based anchors for identified-LoS samples and a
    single barycentric OT projection onto the NLoS grid for the rest.

    The label projection uses squared-Euclidean costs, so its
    inverse-temperature is auto-scaled to the cost magnitude unless
    label_eps is given.
    """
    anchors = np.asarray(anchors, dtype=float)[:, :2]
    iprime = np.asarray(iprime, dtype=int)
    targets = np.asarray(nlos_targets, dtype=float)[:, :2]
    labels = anchors.copy()
    nlos_idx = np.flatnonzero(iprime == 0)
    if len(nlos_idx) == 0 or len(targets) == 0:
        return labels
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1AB]))
    n_t = min(len(targets), max(1, target_factor * len(nlos_idx)))
    pick = rng.choice(len(targets), size=n_t, replace=False)
    sub = targets[pick]
    sources = anchors[nlos_idx]
    eps = label_eps if label_eps is not None else auto_label_eps(sources, sub)
    cfg = SinkhornConfig(eps=eps, max_iters=max(sink_cfg.max_iters, 2000), tol=sink_cfg.tol)
    projected, _ = barycentric_labels(sources, sub, cfg)
    labels[nlos_idx] = projected
    return labels


def _train_supervised(
    features: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    tcfg: TrainConfig,
    triplets: TripletSet | None,
    model_cfg: ChartModelConfig | None,
    validation,
):
    feats = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)[:, :2]
    n = len(feats)
    if weights.w_tri > 0 and triplets is None:
        raise ConfigError("triplet weight is positive but no triplets were supplied")
    tri_rpn = _triplet_arrays(triplets) if triplets is not None and weights.w_tri > 0 else None

    model_cfg = model_cfg or ChartModelConfig(seed=tcfg.seed)
    model = ChartModel(feats.shape[1], model_cfg)
    opt = Adam(model.params, lr=tcfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(tcfg.seed), 0x7E1]))
    history = TrainHistory()

    for epoch in range(tcfg.epochs):
        t0 = time.perf_counter()
        lr = tcfg.lr * tcfg.lr_decay ** epoch
        epoch_losses = []
        for idx in _batches(n, tcfg.batch_size, rng):
            emb, cache = model.forward(feats[idx], training=True)
            diff = emb - labels[idx]
            v_fit = float(np.mean(np.sum(diff ** 2, axis=1)))
            d_emb = 2.0 * diff / len(idx)
            v_tri = 0.0
            if tri_rpn is not None:
                pos_of = np.full(n, -1, dtype=int)
                pos_of[idx] = np.arange(len(idx))
                rr, pp, nn = _batch_triplets(tri_rpn, pos_of)
                if len(rr):
                    v_tri, g_r, g_p, g_n = loss_triplet(
                        emb[rr], emb[pp], emb[nn], weights.margin
                    )
                    np.add.at(d_emb, rr, weights.w_tri * g_r)
                    np.add.at(d_emb, pp, weights.w_tri * g_p)
                    np.add.at(d_emb, nn, weights.w_tri * g_n)
            total = v_fit + weights.w_tri * v_tri
            grads, _ = model.backward(cache, d_emb)
            opt.step(model.params, grads, lr=lr)
            history.step_losses.append({"total": total, "fit": v_fit, "tri": v_tri})
            epoch_losses.append(total)
        history.epoch_loss.append(float(np.mean(epoch_losses)))
        history.epoch_seconds.append(time.perf_counter() - t0)
        _record_validation(model, history, validation)
    return model, history


def train_uniloc(
    features: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
    tcfg: TrainConfig,
    triplets: TripletSet | None = None,
    model_cfg: ChartModelConfig | None = None,
    validation=None,
):
    """Low-complexity training on self-generated labels (no OT in the loop)."""
    return _train_supervised(features, labels, weights, tcfg, triplets, model_cfg, validation)


def train_fingerprint(
    features: np.ndarray,
    labels: np.ndarray,
    tcfg: TrainConfig,
    model_cfg: ChartModelConfig | None = None,
    validation=None,
):
    """Supervised reference: fit ground-truth labels, no triplets."""
    weights = LossWeights(w_tri=0.0)
    return _train_supervised(features, labels, weights, tcfg, None, model_cfg, validation)


def fit_affine(embeddings: np.ndarray, references: np.ndarray):
    """Least-squares affine map A e + b ~ p from chart space to positions."""
    e = np.asarray(embeddings, dtype=float)
    p = np.asarray(references, dtype=float)[:, :2]
    if len(e) < 3:
        raise DegenerateGeometry("need at least 3 reference points")
    X = np.column_stack([e, np.ones(len(e))])
    sol, _, rank, _ = np.linalg.lstsq(X, p, rcond=None)
    if rank < 3:
        raise DegenerateGeometry("reference embeddings are collinear")
    return sol[:2].T, sol[2]
