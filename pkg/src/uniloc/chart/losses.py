"""Chart training losses over embedded batches.

Each loss returns (value, gradient-with-respect-to-embeddings); gradients
are analytic and validated against central finite differences in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

PAIR_FLOOR = 1e-3  # pairs with smaller target dissimilarity are excluded


@dataclass
class LossWeights:
    w_ccc: float = 1.0
    w_pwd: float = 1.0
    w_tri: float = 1.0
    w_los: float = 1.0
    w_ot: float = 1.0
    margin: float = 0.1

    def __post_init__(self):
        for name in ("w_ccc", "w_pwd", "w_tri", "w_los", "w_ot"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.w_tri > 0 and self.margin <= 0:
            raise ConfigError("margin must be positive when the triplet loss is active")


def loss_pairwise(embeddings: np.ndarray, dsub: np.ndarray, floor: float = PAIR_FLOOR):
    """Distance-preservation loss: mean of (|e_i - e_j| - d_ij)^2 / d_ij
    over ordered pairs with d_ij above the floor."""
    e = np.asarray(embeddings, dtype=float)
    d = np.asarray(dsub, dtype=float)
    B = len(e)
    if d.shape != (B, B):
        raise ConfigError("dissimilarity submatrix shape mismatch")
    diff = e[:, None, :] - e[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    mask = (d > floor) & ~np.eye(B, dtype=bool)
    n_pairs = int(mask.sum())
    if n_pairs == 0:
        return 0.0, np.zeros_like(e)
    resid = np.where(mask, dist - d, 0.0)
    value = float(np.sum(np.where(mask, resid ** 2 / np.where(mask, d, 1.0), 0.0)) / n_pairs)
    # each unordered pair appears twice in the ordered sum; u_ij = -u_ji
    safe_dist = np.maximum(dist, 1e-12)
    coef = np.where(mask, 2.0 * resid / np.where(mask, d, 1.0) / safe_dist, 0.0)
    grad = 2.0 * np.sum(coef[:, :, None] * diff, axis=1) / n_pairs
    return value, grad


def loss_triplet(emb_ref: np.ndarray, emb_pos: np.ndarray, emb_neg: np.ndarray, margin: float):
    """Hinge triplet loss mean(max(0, |e_p - e_r| - |e_n - e_r| + margin)).

    Returns (value, g_ref, g_pos, g_neg); the subgradient at the hinge kink
    is taken from the inactive side (zero).
    """
    er = np.asarray(emb_ref, dtype=float)
    ep = np.asarray(emb_pos, dtype=float)
    en = np.asarray(emb_neg, dtype=float)
    T = len(er)
    if T == 0:
        return 0.0, np.zeros_like(er), np.zeros_like(ep), np.zeros_like(en)
    dp_vec = ep - er
    dn_vec = en - er
    dp = np.linalg.norm(dp_vec, axis=1)
    dn = np.linalg.norm(dn_vec, axis=1)
    h = dp - dn + margin
    active = h > 0.0
    value = float(np.sum(np.where(active, h, 0.0)) / T)
    up = dp_vec / np.maximum(dp, 1e-12)[:, None]
    un = dn_vec / np.maximum(dn, 1e-12)[:, None]
    w = active[:, None] / T
    g_pos = w * up
    g_neg = -w * un
    g_ref = w * (un - up)
    return value, g_ref, g_pos, g_neg


def loss_los(embeddings: np.ndarray, anchors: np.ndarray, mask: np.ndarray):
    """Mean squared error to the model-based anchors over identified-LoS samples."""
    e = np.asarray(embeddings, dtype=float)
    a = np.asarray(anchors, dtype=float)
    m = np.asarray(mask, dtype=bool)
    n = int(m.sum())
    if n == 0:
        return 0.0, np.zeros_like(e)
    diff = np.where(m[:, None], e - a, 0.0)
    value = float(np.sum(diff ** 2) / n)
    grad = 2.0 * diff / n
    return value, grad
