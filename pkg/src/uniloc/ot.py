"""Entropic optimal transport: Sinkhorn scalings, the map-alignment training
loss, and barycentric label projection.

Convention note: the entropy-regularized objective is <Gamma, C> - (1/eps) E(Gamma)
with kernel K = exp(-eps * C), i.e. eps acts as an inverse temperature and
larger eps means weaker entropic smoothing. Log-domain updates are the
default since the kernel underflows already for costs of a few tens of
meters at the default eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.spatial.distance import cdist

from .errors import ConfigError, InfeasibleMarginals, NumericalUnderflow


@dataclass
class SinkhornConfig:
    eps: float = 2.0 / 3.0
    max_iters: int = 500
    tol: float = 1e-6
    log_domain: bool = True

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


@dataclass
class TransportPlan:
    plan: np.ndarray
    converged: bool
    marginal_residual: float
    n_iters: int
    residual_history: list[float] = field(default_factory=list)


def _validate(C, us, ut):
    C = np.asarray(C, dtype=float)
    us = np.asarray(us, dtype=float)
    ut = np.asarray(ut, dtype=float)
    if C.shape != (len(us), len(ut)):
        raise ConfigError(f"cost shape {C.shape} does not match marginals")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ConfigError("cost matrix must be finite and nonnegative")
    if np.any(us <= 0) or np.any(ut <= 0):
        raise InfeasibleMarginals("marginals must be strictly positive")
    if abs(us.sum() - ut.sum()) > 1e-8:
        raise InfeasibleMarginals("marginal sums differ")
    return C, us, ut


def sinkhorn(C, us, ut, cfg: SinkhornConfig) -> TransportPlan:
    """Alternating diagonal scalings for the entropy-regularized OT problem.

    Stops when the L1 marginal violation of the current plan drops to
    cfg.tol or after cfg.max_iters iterations. In linear-domain mode a
    vanished kernel raises NumericalUnderflow; the log-domain default
    cannot underflow.
    """
    C, us, ut = _validate(C, us, ut)
    history: list[float] = []
    if cfg.log_domain:
        log_k = -cfg.eps * C
        log_us, log_ut = np.log(us), np.log(ut)
        log_a = np.zeros(len(us))
        log_b = np.zeros(len(ut))
        for it in range(1, cfg.max_iters + 1):
            log_a = log_us - logsumexp(log_k + log_b[None, :], axis=1)
            log_b = log_ut - logsumexp(log_k + log_a[:, None], axis=0)
            plan = np.exp(log_a[:, None] + log_k + log_b[None, :])
            residual = float(
                np.abs(plan.sum(axis=1) - us).sum() + np.abs(plan.sum(axis=0) - ut).sum()
            )
            history.append(residual)
            if residual <= cfg.tol:
                return TransportPlan(plan, True, residual, it, history)
        return TransportPlan(plan, False, residual, cfg.max_iters, history)

    K = np.exp(-cfg.eps * C)
    a = np.ones(len(us))
    b = np.ones(len(ut))
    for it in range(1, cfg.max_iters + 1):
        kb = K @ b
        if np.any(kb <= 0.0):
            raise NumericalUnderflow("kernel row vanished; use log_domain=True")
        a = us / kb
        ka = K.T @ a
        if np.any(ka <= 0.0):
            raise NumericalUnderflow("kernel column vanished; use log_domain=True")
        b = ut / ka
        plan = a[:, None] * K * b[None, :]
        residual = float(
            np.abs(plan.sum(axis=1) - us).sum() + np.abs(plan.sum(axis=0) - ut).sum()
        )
        history.append(residual)
        if residual <= cfg.tol:
            return TransportPlan(plan, True, residual, it, history)
    return TransportPlan(plan, False, residual, cfg.max_iters, history)


def entropic_objective(plan: np.ndarray, C: np.ndarray, eps: float) -> float:
    """Value of <Gamma, C> - (1/eps) E(Gamma) with E the plan entropy."""
    p = np.asarray(plan)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return float(np.sum(p * C) + plogp.sum() / eps)


def ot_loss(embeddings: np.ndarray, targets: np.ndarray, cfg: SinkhornConfig):
    """Map-alignment loss: first-order Wasserstein between embedded points
    and target positions under uniform marginals, via Sinkhorn.

    Returns (loss, grad, plan) where loss = <Gamma*, C> and grad is the
    envelope gradient w.r.t. the embeddings (the converged plan is treated
    as constant, which is exact for the regularized optimum).
    """
    e = np.asarray(embeddings, dtype=float)
    t = np.asarray(targets, dtype=float)
    if e.ndim != 2 or t.ndim != 2 or e.shape[1] != t.shape[1]:
        raise ConfigError("embeddings and targets must be 2-D point arrays")
    if len(e) == 0 or len(t) == 0:
        raise ConfigError("need at least one embedding and one target")
    us = np.full(len(e), 1.0 / len(e))
    ut = np.full(len(t), 1.0 / len(t))
    C = cdist(e, t)
    tp = sinkhorn(C, us, ut, cfg)
    loss = float(np.sum(tp.plan * C))
    diff = e[:, None, :] - t[None, :, :]
    dist = np.maximum(C, 1e-12)
    grad = np.sum(tp.plan[:, :, None] * diff / dist[:, :, None], axis=1)
    return loss, grad, tp


def barycentric_labels(sources: np.ndarray, targets: np.ndarray, cfg: SinkhornConfig):
    """Project each source point to the plan-weighted average of targets.

    Cost is squared Euclidean, marginals uniform. Every output is a convex
    combination of target points.
    """
    s = np.asarray(sources, dtype=float)
    t = np.asarray(targets, dtype=float)
    if len(s) == 0 or len(t) == 0:
        raise ConfigError("need at least one source and one target")
    us = np.full(len(s), 1.0 / len(s))
    ut = np.full(len(t), 1.0 / len(t))
    C = cdist(s, t) ** 2
    tp = sinkhorn(C, us, ut, cfg)
    row = tp.plan.sum(axis=1)
    if np.any(row <= 0):
        raise NumericalUnderflow("transport plan has an empty row")
    return (tp.plan @ t) / row[:, None], tp


def auto_label_eps(sources: np.ndarray, targets: np.ndarray, sharpness: float = 10.0) -> float:
    """Inverse-temperature for label projection, scaled to the cost range.

    The squared-Euclidean label cost lives on a different scale than the
    meter-valued training cost, so eps is chosen as sharpness / median(C).
    """
    C = cdist(np.asarray(sources, float), np.asarray(targets, float)) ** 2
    med = float(np.median(C))
    return sharpness / max(med, 1e-9)
