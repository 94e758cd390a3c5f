"""Positioning metrics (MAE / RMSE / 95th percentile, with LoS/NLoS/all
breakdowns) and chart-quality metrics (continuity, trustworthiness,
Kruskal stress)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, LengthMismatch

SUBSETS = ("los", "nlos", "all")


@dataclass
class SubsetMetrics:
    count: int
    mae: float
    rmse: float
    e95: float


@dataclass
class EvalReport:
    subsets: dict[str, SubsetMetrics]
    errors: np.ndarray                       # sorted, the empirical CDF support
    ct: float | None = None
    tw: float | None = None
    ks: float | None = None
    branch_confusion: dict = field(default_factory=dict)

    def flat(self) -> dict:
        row = {}
        for name, m in self.subsets.items():
            row[f"{name}_count"] = m.count
            row[f"{name}_mae"] = m.mae
            row[f"{name}_rmse"] = m.rmse
            row[f"{name}_e95"] = m.e95
        for key in ("ct", "tw", "ks"):
            val = getattr(self, key)
            if val is not None:
                row[key] = val
        for key, val in self.branch_confusion.items():
            row[f"branch_{key}"] = val
        return row


def _subset(errors: np.ndarray) -> SubsetMetrics:
    if len(errors) == 0:
        return SubsetMetrics(0, float("nan"), float("nan"), float("nan"))
    return SubsetMetrics(
        count=int(len(errors)),
        mae=float(np.mean(errors)),
        rmse=float(np.sqrt(np.mean(errors ** 2))),
        e95=float(np.percentile(errors, 95)),  # linear interpolation
    )


def positioning_metrics(
    estimates: np.ndarray,
    truths: np.ndarray,
    los_mask: np.ndarray,
    branches=None,
) -> EvalReport:
    """Positioning error report over the LoS / NLoS / all subsets."""
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    mask = np.asarray(los_mask, dtype=bool)
    if len(est) != len(tru) or len(est) != len(mask) or len(est) == 0:
        raise LengthMismatch("estimates, truths, and los_mask must have equal length >= 1")
    errors = np.linalg.norm(est[:, :2] - tru[:, :2], axis=1)
    report = EvalReport(
        subsets={
            "los": _subset(errors[mask]),
            "nlos": _subset(errors[~mask]),
            "all": _subset(errors),
        },
        errors=np.sort(errors),
    )
    if branches is not None:
        b = np.asarray(branches)
        for truth_name, m in (("los", mask), ("nlos", ~mask)):
            for branch in ("model", "chart"):
                report.branch_confusion[f"{truth_name}_{branch}"] = int(
                    np.sum(b[m] == branch)
                )
    return report


def default_neighborhood(n: int) -> int:
    return max(10, int(round(n / 36)))


def _rank_matrix(dist: np.ndarray) -> np.ndarray:
    """rank[i, j] = position (1-based) of j among i's neighbors by distance."""
    n = dist.shape[0]
    d = dist + np.diag(np.full(n, np.inf))
    order = np.argsort(d, axis=1, kind="stable")
    rank = np.empty((n, n), dtype=int)
    rows = np.arange(n)[:, None]
    rank[rows, order] = np.arange(1, n + 1)[None, :]
    return rank


def chart_metrics(
    embedding: np.ndarray,
    true_positions: np.ndarray,
    k: int | None = None,
):
    """Continuity, trustworthiness, and scale-fitted Kruskal stress.

    CT penalizes true neighbors missing from the embedding neighborhood
    (weighted by their embedding rank); TW penalizes embedding neighbors
    that are not true neighbors (weighted by their true rank). KS compares
    pairwise distances after the optimal uniform scaling of the embedding.
    """
    e = np.asarray(embedding, dtype=float)
    p = np.asarray(true_positions, dtype=float)[:, :2]
    n = len(e)
    if k is None:
        k = default_neighborhood(n)
    if n < k + 2:
        raise ConfigError("need at least k + 2 points")
    if 2 * n - 3 * k - 1 <= 0:
        raise ConfigError("neighborhood size too large for this dataset")

    d_true = cdist(p, p)
    d_emb = cdist(e, e)
    r_true = _rank_matrix(d_true)
    r_emb = _rank_matrix(d_emb)
    nn_true = r_true <= k
    nn_emb = r_emb <= k

    norm = 2.0 / (n * k * (2 * n - 3 * k - 1))
    tw = 1.0 - norm * float(np.sum((r_true[nn_emb & ~nn_true] - k)))
    ct = 1.0 - norm * float(np.sum((r_emb[nn_true & ~nn_emb] - k)))

    iu = np.triu_indices(n, 1)
    dt, de = d_true[iu], d_emb[iu]
    denom = float(np.sum(de * de))
    scale = float(np.sum(de * dt)) / denom if denom > 0 else 0.0
    ks = float(np.sqrt(np.sum((scale * de - dt) ** 2) / np.sum(dt * dt)))
    return ct, tw, ks


def sweep_runner(run_point, grid, seeds, axis_name: str = "value"):
    """Run an evaluation callable over a parameter grid and seeds.

    run_point(value, seed) must return an EvalReport or a flat dict; the
    result is one flat row per (value, seed) combination.
    """
    rows = []
    for value in grid:
        for seed in seeds:
            report = run_point(value, seed)
            flat = report.flat() if isinstance(report, EvalReport) else dict(report)
            rows.append({axis_name: value, "seed": seed, **flat})
    return rows
