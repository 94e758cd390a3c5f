"""Street-scene geometry: user region, obstacles, LoS/NLoS partition, sampling.

The map is deliberately simple: the user region R is a union of axis-aligned
ground rectangles at a fixed user height, obstacles are rectangular prisms
standing on the ground, and the base station is a single elevated point.
Region membership and line-of-sight blockage are then exact computations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyRegion

LOS = "los"
NLOS = "nlos"
OUTSIDE = "outside"

SCENE_SCHEMA_VERSION = 1

# Tolerance for segment/box intersection tests. A grazing contact of measure
# <= _EPS (e.g. a reflection point lying exactly on a wall) does not block.
_EPS = 1e-9


@dataclass(frozen=True)
class Rect:
    """Axis-aligned ground rectangle [x0, x1] x [y0, y1] (meters)."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ConfigError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def overlaps_interior(self, other: "Rect") -> bool:
        return (
            self.x0 < other.x1 and other.x0 < self.x1
            and self.y0 < other.y1 and other.y0 < self.y1
        )


@dataclass(frozen=True)
class Obstacle:
    """Rectangular building prism: footprint x [0, height]."""

    rect: Rect
    height: float

    def __post_init__(self):
        if self.height <= 0:
            raise ConfigError("obstacle height must be positive")

    def contains_point(self, p) -> bool:
        return self.rect.contains(p[0], p[1]) and 0.0 <= p[2] <= self.height


@dataclass
class SceneMap:
    """Map of the scene: user region, obstacles, BS position, user height."""

    region: list[Rect]
    obstacles: list[Obstacle]
    bs_position: np.ndarray
    user_height: float

    def __post_init__(self):
        self.bs_position = np.asarray(self.bs_position, dtype=float)
        if self.bs_position.shape != (3,):
            raise ConfigError("bs_position must be a 3-vector")
        if not self.region:
            raise ConfigError("region must contain at least one rectangle")
        for i, a in enumerate(self.region):
            for b in self.region[i + 1:]:
                if a.overlaps_interior(b):
                    raise ConfigError(f"region rectangles overlap: {a} / {b}")
        for ob in self.obstacles:
            if ob.contains_point(self.bs_position):
                raise ConfigError("an obstacle contains the BS position")
        if self.user_height >= self.bs_position[2]:
            raise ConfigError("user height must be below the BS height")

    @property
    def total_area(self) -> float:
        return float(sum(r.area for r in self.region))

    def in_region(self, x: float, y: float) -> bool:
        return any(r.contains(x, y) for r in self.region)

    def bounding_box(self) -> Rect:
        return Rect(
            min(r.x0 for r in self.region),
            max(r.x1 for r in self.region),
            min(r.y0 for r in self.region),
            max(r.y1 for r in self.region),
        )


@dataclass
class UserPrior:
    """Prior over user positions in R.

    "uniform" is uniform over the area of R. "tabulated" carries per-cell
    weights on the lattice grid_points(spacing, All); sampling picks a cell
    proportionally to its weight and then uniformly within the cell.
    Conditioning on the LoS or NLoS side (the renormalized sub-densities)
    is realized exactly by rejection sampling.
    """

    kind: str = "uniform"
    grid_spacing: float = 1.0
    cell_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "tabulated"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.cell_weights is None:
                raise ConfigError("tabulated prior requires cell_weights")
            w = np.asarray(self.cell_weights, dtype=float)
            if np.any(w < 0) or w.sum() <= 0:
                raise ConfigError("cell_weights must be nonnegative with positive sum")
            self.cell_weights = w / w.sum()


def segment_blocked(p0, p1, obstacles) -> bool:
    """True if the open segment p0-p1 passes through any obstacle volume.

    Uses the slab method on each prism. Contacts of measure <= _EPS along
    the segment (touching a wall or roof edge) do not count as blockage,
    so reflection points lying exactly on a wall are handled cleanly.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    for ob in obstacles:
        lo = np.array([ob.rect.x0, ob.rect.y0, 0.0])
        hi = np.array([ob.rect.x1, ob.rect.y1, ob.height])
        t_enter, t_exit = 0.0, 1.0
        hit = True
        for k in range(3):
            if abs(d[k]) < 1e-15:
                if p0[k] < lo[k] or p0[k] > hi[k]:
                    hit = False
                    break
            else:
                t0 = (lo[k] - p0[k]) / d[k]
                t1 = (hi[k] - p0[k]) / d[k]
                if t0 > t1:
                    t0, t1 = t1, t0
                t_enter = max(t_enter, t0)
                t_exit = min(t_exit, t1)
                if t_enter >= t_exit:
                    hit = False
                    break
        if hit and (t_exit - t_enter) > _EPS and t_exit > _EPS and t_enter < 1.0 - _EPS:
            return True
    return False


def classify_point(scene: SceneMap, p) -> str:
    """Classify a point as LOS, NLOS, or OUTSIDE the user region.

    LOS iff (x, y) lies in R and the straight segment to the BS intersects
    no obstacle volume.
    """
    p = np.asarray(p, dtype=float)
    if not scene.in_region(p[0], p[1]):
        return OUTSIDE
    if segment_blocked(p, scene.bs_position, scene.obstacles):
        return NLOS
    return LOS


def classify_ground(scene: SceneMap, x: float, y: float) -> str:
    """Classify the ground-plane point (x, y) lifted to the user height."""
    return classify_point(scene, (x, y, scene.user_height))


def _matches(scene: SceneMap, p, region_filter: str) -> bool:
    side = classify_point(scene, p)
    if region_filter == "all":
        return side != OUTSIDE
    return side == region_filter


def sample_positions(
    scene: SceneMap,
    prior: UserPrior,
    n: int,
    region_filter: str = "all",
    seed: int = 0,
) -> np.ndarray:
    """Draw n i.i.d. user positions from the prior restricted to a region side.

    region_filter is one of "all", "los", "nlos". Deterministic given seed.
    Raises EmptyRegion when the filter cannot be satisfied.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if region_filter not in ("all", LOS, NLOS):
        raise ConfigError(f"bad region_filter {region_filter!r}")
    rng = np.random.default_rng(seed)
    out = np.empty((n, 3), dtype=float)
    out[:, 2] = scene.user_height

    if prior.kind == "tabulated":
        cells = grid_points(scene, prior.grid_spacing, "all")
        if len(cells) != len(prior.cell_weights):
            raise ConfigError(
                f"cell_weights length {len(prior.cell_weights)} does not match "
                f"lattice size {len(cells)}"
            )

    areas = np.array([r.area for r in scene.region])
    area_p = areas / areas.sum()
    filled = 0
    attempts = 0
    max_attempts = max(200_000, 2000 * n)
    while filled < n:
        if attempts >= max_attempts:
            raise EmptyRegion(
                f"filter {region_filter!r} accepted {filled}/{n} after {attempts} draws"
            )
        attempts += 1
        if prior.kind == "uniform":
            r = scene.region[rng.choice(len(scene.region), p=area_p)]
            x = rng.uniform(r.x0, r.x1)
            y = rng.uniform(r.y0, r.y1)
        else:
            idx = rng.choice(len(prior.cell_weights), p=prior.cell_weights)
            cx, cy = cells[idx][0], cells[idx][1]
            h = prior.grid_spacing / 2.0
            x = rng.uniform(cx - h, cx + h)
            y = rng.uniform(cy - h, cy + h)
            if not scene.in_region(x, y):
                continue
        p = (x, y, scene.user_height)
        if _matches(scene, p, region_filter):
            out[filled, 0] = x
            out[filled, 1] = y
            filled += 1
    return out


def grid_points(scene: SceneMap, spacing: float, region_filter: str = "all") -> np.ndarray:
    """Lattice of pitch `spacing` inside the filtered region, on the user plane.

    The lattice is anchored at each region rectangle's (x0, y0) corner and
    includes both edges. Points shared by adjacent rectangles are deduplicated.
    """
    if spacing <= 0:
        raise ConfigError("spacing must be positive")
    if region_filter not in ("all", LOS, NLOS):
        raise ConfigError(f"bad region_filter {region_filter!r}")
    pts = []
    seen = set()
    for r in scene.region:
        nx = int(np.floor((r.x1 - r.x0) / spacing + 1e-9)) + 1
        ny = int(np.floor((r.y1 - r.y0) / spacing + 1e-9)) + 1
        for i in range(nx):
            for j in range(ny):
                x = r.x0 + i * spacing
                y = r.y0 + j * spacing
                key = (round(x, 9), round(y, 9))
                if key in seen:
                    continue
                seen.add(key)
                p = (x, y, scene.user_height)
                if _matches(scene, p, region_filter):
                    pts.append(p)
    if not pts:
        return np.empty((0, 3), dtype=float)
    return np.asarray(pts, dtype=float)


@dataclass
class RegionPartition:
    """Rasterized LoS/NLoS partition of R (cell rectangles of pitch `spacing`).

    The partition itself is defined by classify_point; this object gives an
    explicit cell-level geometry for area estimates and target-grid plumbing.
    """

    spacing: float
    los_cells: list[Rect] = field(default_factory=list)
    nlos_cells: list[Rect] = field(default_factory=list)

    @property
    def los_area(self) -> float:
        return sum(c.area for c in self.los_cells)

    @property
    def nlos_area(self) -> float:
        return sum(c.area for c in self.nlos_cells)


def partition(scene: SceneMap, spacing: float = 1.0) -> RegionPartition:
    """Rasterize R into spacing-sized cells labeled by center classification."""
    part = RegionPartition(spacing=spacing)
    h = spacing / 2.0
    for r in scene.region:
        nx = max(1, int(round((r.x1 - r.x0) / spacing)))
        ny = max(1, int(round((r.y1 - r.y0) / spacing)))
        for i in range(nx):
            for j in range(ny):
                cx = r.x0 + (i + 0.5) * (r.x1 - r.x0) / nx
                cy = r.y0 + (j + 0.5) * (r.y1 - r.y0) / ny
                cell = Rect(cx - h, cx + h, cy - h, cy + h)
                side = classify_ground(scene, cx, cy)
                if side == LOS:
                    part.los_cells.append(cell)
                elif side == NLOS:
                    part.nlos_cells.append(cell)
    return part


def default_scene() -> SceneMap:
    """Shipped desk-scale street scene (first-quadrant plaza with blockers).

    An elevated BS south-west of the plaza, two buildings inside the plaza
    casting NLoS shadow wedges, and tall wall buildings along the north and
    east edges acting as reflectors so that every NLoS point is reachable
    with at most two specular bounces. The user region excludes the building
    footprints.
    """
    region = [
        Rect(0.0, 12.0, 0.0, 60.0),
        Rect(12.0, 26.0, 0.0, 8.0),
        Rect(12.0, 26.0, 22.0, 60.0),
        Rect(26.0, 55.0, 0.0, 60.0),
        Rect(55.0, 72.0, 0.0, 10.0),
        Rect(55.0, 72.0, 24.0, 60.0),
        Rect(72.0, 100.0, 0.0, 60.0),
    ]
    obstacles = [
        Obstacle(Rect(12.0, 26.0, 8.0, 22.0), height=30.0),   # blocker near BS
        Obstacle(Rect(55.0, 72.0, 10.0, 24.0), height=34.0),  # mid-plaza blocker
        Obstacle(Rect(-4.0, 112.0, 60.0, 68.0), height=52.0),  # north wall
        Obstacle(Rect(100.0, 108.0, -4.0, 60.0), height=52.0),  # east wall
    ]
    return SceneMap(
        region=region,
        obstacles=obstacles,
        bs_position=np.array([0.0, -9.0, 57.0]),
        user_height=1.5,
    )


def scene_to_dict(scene: SceneMap) -> dict:
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "region": [[r.x0, r.x1, r.y0, r.y1] for r in scene.region],
        "obstacles": [
            {"rect": [o.rect.x0, o.rect.x1, o.rect.y0, o.rect.y1], "height": o.height}
            for o in scene.obstacles
        ],
        "bs_position": [float(v) for v in scene.bs_position],
        "user_height": scene.user_height,
    }


def scene_from_dict(doc: dict) -> SceneMap:
    version = doc.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise ConfigError(f"unsupported scene schema_version {version!r}")
    return SceneMap(
        region=[Rect(*vals) for vals in doc["region"]],
        obstacles=[
            Obstacle(Rect(*o["rect"]), float(o["height"])) for o in doc["obstacles"]
        ],
        bs_position=np.asarray(doc["bs_position"], dtype=float),
        user_height=float(doc["user_height"]),
    )


def save_scene(scene: SceneMap, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def load_scene(path) -> SceneMap:
    return scene_from_dict(json.loads(Path(path).read_text()))
