"""Set-to-set dissimilarity machinery.

Covers the GOSPA metric and its normalized dissimilarity, exact discrete
optimal transport on small supports (transportation simplex), the
Wasserstein dissimilarity over path-probability masses, geodesic completion
over a neighbor graph, GOSPA/Wasserstein fusion, time dissimilarity, and
triplet mining.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial.distance import cdist

from .errors import ConfigError, EmptyEstimates, InfeasibleMarginals
from .estimation import PathEstimate


@dataclass
class GospaParams:
    p: float = 1.0
    cutoff: float = 20.0          # trust-region distance (meters)
    card_factor: float = 2.0      # cardinality penalty factor in (0, 2]

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("order p must be >= 1")
        if self.cutoff <= 0:
            raise ConfigError("cutoff must be positive")
        if not (0 < self.card_factor <= 2):
            raise ConfigError("card_factor must be in (0, 2]")


def gospa(xs: np.ndarray, xt: np.ndarray, params: GospaParams) -> float:
    """GOSPA distance between two finite point sets (rows are points).

    The assignment part is solved exactly with the Hungarian algorithm on
    cut-off costs min(d, cutoff)^p; the unassigned surplus of the larger
    set pays cutoff^p / card_factor each. Arguments are swapped when
    |xs| > |xt| so the value is symmetric by construction.
    """
    xs = np.asarray(xs, dtype=float).reshape(len(xs), -1) if len(xs) else np.empty((0, 1))
    xt = np.asarray(xt, dtype=float).reshape(len(xt), -1) if len(xt) else np.empty((0, 1))
    if len(xs) > len(xt):
        xs, xt = xt, xs
    miss = params.cutoff ** params.p / params.card_factor
    if len(xs) == 0:
        return float((miss * len(xt)) ** (1.0 / params.p))
    cost = np.minimum(cdist(xs, xt), params.cutoff) ** params.p
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + miss * (len(xt) - len(xs))
    return float(total ** (1.0 / params.p))


def _positions(estimates: list[PathEstimate]) -> np.ndarray:
    if not estimates:
        raise EmptyEstimates("path-estimate list is empty")
    return np.asarray([e.position[:2] for e in estimates], dtype=float)


def gospa_dissimilarity(
    est_i: list[PathEstimate], est_j: list[PathEstimate], params: GospaParams
) -> float:
    """GOSPA between surrogate-position sets, normalized by the mean cardinality."""
    xi, xj = _positions(est_i), _positions(est_j)
    return gospa(xi, xj, params) / ((len(xi) + len(xj)) / 2.0)


@dataclass
class PathDistribution:
    support: np.ndarray     # (L, 2) surrogate positions
    weights: np.ndarray     # (L,) probability masses
    kappa: float


def path_distribution(estimates: list[PathEstimate], kappa: float) -> PathDistribution:
    """Probability masses over a sample's recovered paths: softmax(-kappa * toa)."""
    if not estimates:
        raise EmptyEstimates("path-estimate list is empty")
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    toas = np.array([e.toa for e in estimates])
    logits = -kappa * (toas - toas.min())
    w = np.exp(logits)
    return PathDistribution(support=_positions(estimates), weights=w / w.sum(), kappa=kappa)


def default_kappa(estimates_list: list[list[PathEstimate]]) -> float:
    """Dataset-level default: reciprocal of the median per-sample ToA spread."""
    spreads = [
        max(e.toa for e in ests) - min(e.toa for e in ests)
        for ests in estimates_list
        if len(ests) >= 2
    ]
    spread = float(np.median(spreads)) if spreads else 0.0
    return 1.0 / max(spread, 1e-12)


# ---------------------------------------------------------------------------
# Exact discrete OT (transportation simplex, with Bland's rule)
# ---------------------------------------------------------------------------

def _northwest_corner(us, ut):
    """Initial basic feasible solution; returns plan and the basis cells."""
    ns, nt = len(us), len(ut)
    plan = np.zeros((ns, nt))
    basis = []
    a = us.copy()
    b = ut.copy()
    i = j = 0
    while True:
        amount = min(a[i], b[j])
        plan[i, j] = amount
        basis.append((i, j))
        a[i] -= amount
        b[j] -= amount
        if i == ns - 1 and j == nt - 1:
            break
        # on ties advance the row; the skipped cell stays basic with zero mass
        if a[i] <= b[j] and i < ns - 1:
            i += 1
        else:
            j += 1
    return plan, basis


def _tree_duals(basis, C, ns, nt):
    """Solve u_i + v_j = C_ij over the spanning-tree basis (u_0 = 0)."""
    adj = [[] for _ in range(ns + nt)]
    for i, j in basis:
        adj[i].append(ns + j)
        adj[ns + j].append(i)
    pot = np.full(ns + nt, np.nan)
    pot[0] = 0.0
    stack = [0]
    cost = {(i, j): C[i, j] for i, j in basis}
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if not np.isnan(pot[nb]):
                continue
            if node < ns:
                pot[nb] = cost[(node, nb - ns)] - pot[node]
            else:
                pot[nb] = cost[(nb, node - ns)] - pot[node]
            stack.append(nb)
    return pot[:ns], pot[ns:]


def _find_cycle(basis, enter, ns):
    """Alternating cycle created by the entering cell in the basis tree."""
    adj = {}
    for i, j in basis:
        adj.setdefault(i, []).append(ns + j)
        adj.setdefault(ns + j, []).append(i)
    start, goal = enter[0], ns + enter[1]
    parent = {start: None}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nb in adj.get(node, ()):
            if nb not in parent:
                parent[nb] = node
                stack.append(nb)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    # node path start -> ... -> goal, convert to cells; prepend entering cell
    cells = [enter]
    nodes = path[::-1]
    for a, b in zip(nodes[:-1], nodes[1:]):
        if a < ns:
            cells.append((a, b - ns))
        else:
            cells.append((b, a - ns))
    return cells  # alternating +,-,+,- starting at the entering cell


def _transport_simplex(us, ut, C, max_pivots=10000):
    plan, basis = _northwest_corner(us, ut)
    ns, nt = C.shape
    # Dantzig entering rule for speed; switch to Bland's rule (first
    # improving cell) after a while, which cannot cycle on degenerate bases.
    dantzig_budget = 50 * (ns + nt)
    for pivot in range(max_pivots):
        u, v = _tree_duals(basis, C, ns, nt)
        reduced = C - u[:, None] - v[None, :]
        for i, j in basis:
            reduced[i, j] = 0.0
        if pivot < dantzig_budget:
            enter = np.unravel_index(int(np.argmin(reduced)), reduced.shape)
            if reduced[enter] >= -1e-12:
                return plan
        else:
            candidates = np.argwhere(reduced < -1e-12)
            if len(candidates) == 0:
                return plan
            enter = tuple(candidates[0])
        cycle = _find_cycle(basis, enter, ns)
        minus = cycle[1::2]
        theta_idx = min(range(len(minus)), key=lambda k: (plan[minus[k]], k))
        theta = plan[minus[theta_idx]]
        for k, cell in enumerate(cycle):
            plan[cell] += theta if k % 2 == 0 else -theta
        leave = minus[theta_idx]
        basis.remove(leave)
        basis.append(enter)
        plan[leave] = 0.0
    raise RuntimeError("transportation simplex did not converge")


def exact_ot(us: np.ndarray, ut: np.ndarray, C: np.ndarray):
    """Exact solution of the discrete OT linear program.

    Returns (plan, cost). Marginals must carry equal total mass (1e-8).
    """
    us = np.asarray(us, dtype=float)
    ut = np.asarray(ut, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.shape != (len(us), len(ut)):
        raise ConfigError(f"cost shape {C.shape} does not match marginals")
    if np.any(us < 0) or np.any(ut < 0):
        raise InfeasibleMarginals("marginals must be nonnegative")
    if abs(us.sum() - ut.sum()) > 1e-8:
        raise InfeasibleMarginals(
            f"marginal sums differ: {us.sum():.12f} vs {ut.sum():.12f}"
        )
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ConfigError("cost matrix must be finite and nonnegative")
    if len(us) == 1:
        plan = ut[None, :].copy()
        return plan, float(plan.ravel() @ C.ravel())
    if len(ut) == 1:
        plan = us[:, None].copy()
        return plan, float(plan.ravel() @ C.ravel())
    plan = _transport_simplex(us, ut, C)
    return plan, float(np.sum(plan * C))


def wasserstein_dissimilarity(
    est_i: list[PathEstimate], est_j: list[PathEstimate], kappa: float
) -> float:
    """First-order Wasserstein distance between two samples' path distributions."""
    di = path_distribution(est_i, kappa)
    dj = path_distribution(est_j, kappa)
    C = cdist(di.support, dj.support)
    _, cost = exact_ot(di.weights, dj.weights, C)
    return cost


# ---------------------------------------------------------------------------
# Matrices, geodesic completion, fusion
# ---------------------------------------------------------------------------

KIND_GOSPA = "gospa"
KIND_GGOSPA = "g-gospa"
KIND_WASS = "wass"
KIND_FUSI = "fusi"
KIND_TIME = "time"
MATRIX_KINDS = (KIND_GOSPA, KIND_GGOSPA, KIND_WASS, KIND_FUSI, KIND_TIME)


@dataclass
class DissimilarityMatrix:
    kind: str
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MATRIX_KINDS:
            raise ConfigError(f"unknown matrix kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ConfigError("values must be a square matrix")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _worker_count() -> int:
    env = os.environ.get("ULC_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _pairwise(n: int, fn) -> np.ndarray:
    """Fill a symmetric zero-diagonal matrix from fn(i, j) over i < j."""
    out = np.zeros((n, n))

    def fill_rows(rows):
        for i in rows:
            for j in range(i + 1, n):
                out[i, j] = fn(i, j)

    workers = _worker_count()
    if workers <= 1 or n < 16:
        fill_rows(range(n))
    else:
        chunks = [range(k, n, workers) for k in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill_rows, chunks))
    out += out.T
    return out


def gospa_matrix(estimates_list: list[list[PathEstimate]], params: GospaParams) -> DissimilarityMatrix:
    pos = [_positions(e) for e in estimates_list]

    def fn(i, j):
        g = gospa(pos[i], pos[j], params)
        return g / ((len(pos[i]) + len(pos[j])) / 2.0)

    values = _pairwise(len(pos), fn)
    return DissimilarityMatrix(KIND_GOSPA, values, {
        "p": params.p, "cutoff": params.cutoff, "card_factor": params.card_factor,
    })


def wasserstein_matrix(estimates_list: list[list[PathEstimate]], kappa: float | None = None) -> DissimilarityMatrix:
    if kappa is None:
        kappa = default_kappa(estimates_list)
    dists = [path_distribution(e, kappa) for e in estimates_list]

    def fn(i, j):
        C = cdist(dists[i].support, dists[j].support)
        return exact_ot(dists[i].weights, dists[j].weights, C)[1]

    values = _pairwise(len(dists), fn)
    return DissimilarityMatrix(KIND_WASS, values, {"kappa": kappa})


def time_matrix(timestamps: np.ndarray) -> DissimilarityMatrix:
    t = np.asarray(timestamps, dtype=float)
    values = np.abs(t[:, None] - t[None, :])
    return DissimilarityMatrix(KIND_TIME, values, {})


def time_dissimilarity(t_i: float, t_j: float) -> float:
    return abs(t_i - t_j)


def geodesic_complete(values: np.ndarray, k_neighbors: int = 10) -> np.ndarray:
    """Shortest-path completion of a dissimilarity matrix over its k-NN graph.

    The symmetric k-NN graph keeps, for every node, edges to its k nearest
    neighbors (union over directions). Disconnected components are bridged
    by repeatedly adding the globally minimal inter-component entry of the
    input matrix until the graph is connected, then all-pairs distances are
    computed with Dijkstra.
    """
    D = np.asarray(values, dtype=float)
    n = D.shape[0]
    if n != D.shape[1]:
        raise ConfigError("matrix must be square")
    k = min(max(1, k_neighbors), n - 1)
    mask = np.zeros((n, n), dtype=bool)
    big = D + np.diag(np.full(n, np.inf))
    for i in range(n):
        nbrs = np.argsort(big[i], kind="stable")[:k]
        mask[i, nbrs] = True
    mask |= mask.T

    while True:
        graph = csr_matrix(np.where(mask, D, 0.0))
        ncomp, labels = connected_components(graph, directed=False)
        if ncomp == 1:
            break
        # add the single minimum-weight edge between different components
        cross = labels[:, None] != labels[None, :]
        cand = np.where(cross, D, np.inf)
        i, j = np.unravel_index(int(np.argmin(cand)), cand.shape)
        mask[i, j] = mask[j, i] = True

    geo = dijkstra(csr_matrix(np.where(mask, D, 0.0)), directed=False)
    return geo


def fuse(d_gg: float, d_w: float, vartheta: float = 0.03, d_thre: float = 10.0) -> float:
    """Blend geodesic-GOSPA and Wasserstein values with a distance-driven weight."""
    alpha = 1.0 if d_gg <= d_thre else 1.0 / (1.0 + vartheta * d_gg)
    return alpha * d_gg + (1.0 - alpha) * d_w


def fuse_matrix(
    gg: DissimilarityMatrix, wass: DissimilarityMatrix,
    vartheta: float = 0.03, d_thre: float = 10.0,
) -> DissimilarityMatrix:
    if gg.values.shape != wass.values.shape:
        raise ConfigError("matrices to fuse must have the same shape")
    a = np.where(gg.values <= d_thre, 1.0, 1.0 / (1.0 + vartheta * gg.values))
    values = a * gg.values + (1.0 - a) * wass.values
    params = {"vartheta": vartheta, "d_thre": d_thre,
              "gg": gg.params, "wass": wass.params}
    return DissimilarityMatrix(KIND_FUSI, values, params)


# ---------------------------------------------------------------------------
# Triplets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Triplet:
    ref: int
    pos: int
    neg: int


@dataclass
class TripletSet:
    triplets: list[Triplet]
    lower: float
    upper: float

    def __len__(self):
        return len(self.triplets)


def mine_triplets(
    dissim: np.ndarray,
    lower: float,
    upper: float,
    per_reference_cap: int = 20,
    seed: int = 0,
) -> TripletSet:
    """Sample reference/positive/negative triplets from a dissimilarity matrix.

    A positive satisfies d(ref, pos) <= lower, a negative
    lower < d(ref, neg) <= upper. At most per_reference_cap triplets are
    drawn per reference (uniformly over the candidate pairs, seeded).
    """
    if not (0 <= lower < upper):
        raise ConfigError("need 0 <= lower < upper")
    D = np.asarray(dissim, dtype=float)
    n = D.shape[0]
    rng = np.random.default_rng(seed)
    out: list[Triplet] = []
    for r in range(n):
        row = D[r]
        pos = np.flatnonzero((row <= lower) & (np.arange(n) != r))
        neg = np.flatnonzero((row > lower) & (row <= upper))
        total = len(pos) * len(neg)
        if total == 0:
            continue
        k = min(per_reference_cap, total)
        flat = rng.choice(total, size=k, replace=False)
        for f in flat:
            out.append(Triplet(ref=r, pos=int(pos[f // len(neg)]), neg=int(neg[f % len(neg)])))
    return TripletSet(triplets=out, lower=lower, upper=upper)
