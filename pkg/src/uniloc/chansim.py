"""Multipath channel synthesis on the scene map via the image method.

Propagation paths are the direct ray plus single and double specular
reflections off obstacle walls (and optionally the ground plane). Each
candidate path is validated segment-by-segment against all obstacle
volumes. CSI matrices follow the standard narrowband OFDM/ULA model:
H = sum_l beta_l * a(theta_l) b(tau_l)^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoPaths
from .scene import LOS, SceneMap, UserPrior, classify_point, sample_positions, segment_blocked

SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class SystemConfig:
    """OFDM/ULA system parameters (desk-scale defaults)."""

    f_c: float = 10e9
    delta_f: float = 120e3
    n_subcarriers: int = 64
    n_antennas: int = 32
    antenna_spacing: float | None = None  # None -> half wavelength
    array_axis: tuple = (0.0, 1.0, 0.0)
    noise_std: float = 0.0
    reflection_coeff: float = 0.5  # amplitude factor per bounce
    include_ground: bool = False
    min_rel_gain: float = 1e-4  # drop paths below this fraction of the strongest

    def __post_init__(self):
        if self.f_c <= 0 or self.delta_f <= 0:
            raise ConfigError("f_c and delta_f must be positive")
        if self.n_antennas < 1 or self.n_subcarriers < 1:
            raise ConfigError("antenna/subcarrier counts must be >= 1")
        axis = np.asarray(self.array_axis, dtype=float)
        self.array_axis = axis / np.linalg.norm(axis)
        if self.antenna_spacing is None:
            self.antenna_spacing = self.wavelength / 2.0
        if self.antenna_spacing <= 0:
            raise ConfigError("antenna spacing must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def bandwidth(self) -> float:
        return self.n_subcarriers * self.delta_f


@dataclass(frozen=True)
class PropPath:
    """One propagation path: complex gain, azimuth AoA at the BS, ToA."""

    gain: complex
    aoa: float      # radians, from array broadside; sin(aoa) = direction . axis
    toa: float      # seconds
    n_bounces: int
    length: float   # meters


@dataclass
class PathSet:
    paths: list[PropPath] = field(default_factory=list)

    def __len__(self):
        return len(self.paths)

    @property
    def toas(self) -> np.ndarray:
        return np.array([p.toa for p in self.paths])

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths])


@dataclass
class Csi:
    """One CSI sample: complex M x N_c matrix plus ground-truth metadata."""

    h: np.ndarray
    sample_id: int = 0
    position: np.ndarray | None = None
    timestamp: float | None = None
    los: bool | None = None


@dataclass(frozen=True)
class _Wall:
    """Vertical reflector plane of an obstacle (axis in {0: x, 1: y})."""

    axis: int
    value: float       # plane coordinate
    sign: float        # outward normal direction (+1 / -1)
    lo: float          # extent along the other horizontal axis
    hi: float
    height: float


_GROUND = "ground"


def _reflectors(scene: SceneMap, include_ground: bool):
    walls = []
    for ob in scene.obstacles:
        r, h = ob.rect, ob.height
        walls.append(_Wall(0, r.x0, -1.0, r.y0, r.y1, h))
        walls.append(_Wall(0, r.x1, +1.0, r.y0, r.y1, h))
        walls.append(_Wall(1, r.y0, -1.0, r.x0, r.x1, h))
        walls.append(_Wall(1, r.y1, +1.0, r.x0, r.x1, h))
    refs = list(walls)
    if include_ground:
        refs.append(_GROUND)
    return refs


def _mirror(p: np.ndarray, ref) -> np.ndarray:
    q = p.copy()
    if ref is _GROUND:
        q[2] = -q[2]
    else:
        q[ref.axis] = 2.0 * ref.value - q[ref.axis]
    return q


def _outward_side(p: np.ndarray, ref) -> bool:
    if ref is _GROUND:
        return p[2] > 0.0
    return (p[ref.axis] - ref.value) * ref.sign > 1e-12


def _plane_hit(src: np.ndarray, dst: np.ndarray, ref):
    """Intersection of segment src->dst with the reflector plane.

    Returns the hit point if it lies strictly inside the segment and within
    the reflector's finite extent, else None.
    """
    if ref is _GROUND:
        axis, value = 2, 0.0
    else:
        axis, value = ref.axis, ref.value
    denom = dst[axis] - src[axis]
    if abs(denom) < 1e-15:
        return None
    s = (value - src[axis]) / denom
    if not (1e-12 < s < 1.0 - 1e-12):
        return None
    q = src + s * (dst - src)
    if ref is _GROUND:
        return q
    other = 1 - ref.axis
    if ref.lo <= q[other] <= ref.hi and 0.0 <= q[2] <= ref.height:
        return q
    return None


def _same_plane(a, b) -> bool:
    if a is _GROUND or b is _GROUND:
        return a is b
    return a.axis == b.axis and abs(a.value - b.value) < 1e-12


def _aoa(first_leg: np.ndarray, cfg: SystemConfig) -> float:
    u = first_leg / np.linalg.norm(first_leg)
    return float(np.arcsin(np.clip(np.dot(u, cfg.array_axis), -1.0, 1.0)))


def _make_path(length: float, first_leg: np.ndarray, n_bounces: int, cfg: SystemConfig) -> PropPath:
    toa = length / SPEED_OF_LIGHT
    amp = cfg.reflection_coeff ** n_bounces / (4.0 * np.pi * length)
    gain = amp * np.exp(-2j * np.pi * cfg.f_c * toa)
    return PropPath(gain=complex(gain), aoa=_aoa(first_leg, cfg), toa=toa,
                    n_bounces=n_bounces, length=length)


def trace_paths(scene: SceneMap, cfg: SystemConfig, p, max_bounces: int = 2) -> PathSet:
    """Image-method path tracing from the BS to user position p.

    The direct path is included iff p classifies as LoS. Each reflected
    candidate must have its specular point(s) on the finite reflector and
    every leg unblocked. Paths weaker than min_rel_gain of the strongest
    are dropped. Raises NoPaths if nothing survives.
    """
    if max_bounces not in (0, 1, 2):
        raise ConfigError("max_bounces must be 0, 1, or 2")
    p = np.asarray(p, dtype=float)
    bs = scene.bs_position
    obstacles = scene.obstacles
    paths: list[PropPath] = []

    if classify_point(scene, p) == LOS:
        paths.append(_make_path(float(np.linalg.norm(p - bs)), p - bs, 0, cfg))

    refs = _reflectors(scene, cfg.include_ground) if max_bounces >= 1 else []

    for ref in refs:
        if not (_outward_side(bs, ref) and _outward_side(p, ref)):
            continue
        img = _mirror(bs, ref)
        q = _plane_hit(img, p, ref)
        if q is None:
            continue
        if segment_blocked(bs, q, obstacles) or segment_blocked(q, p, obstacles):
            continue
        length = float(np.linalg.norm(p - img))
        paths.append(_make_path(length, q - bs, 1, cfg))

    if max_bounces >= 2:
        for r1 in refs:
            if not _outward_side(bs, r1):
                continue
            img1 = _mirror(bs, r1)
            for r2 in refs:
                if _same_plane(r1, r2):
                    continue
                if not _outward_side(p, r2):
                    continue
                img2 = _mirror(img1, r2)
                q2 = _plane_hit(img2, p, r2)
                if q2 is None or not _outward_side(q2, r1):
                    continue
                q1 = _plane_hit(img1, q2, r1)
                if q1 is None or not _outward_side(q1, r2):
                    continue
                if (
                    segment_blocked(bs, q1, obstacles)
                    or segment_blocked(q1, q2, obstacles)
                    or segment_blocked(q2, p, obstacles)
                ):
                    continue
                length = float(np.linalg.norm(p - img2))
                paths.append(_make_path(length, q1 - bs, 2, cfg))

    if not paths:
        raise NoPaths(f"no unblocked path from BS to {p.tolist()}")
    strongest = max(abs(pp.gain) for pp in paths)
    paths = [pp for pp in paths if abs(pp.gain) >= cfg.min_rel_gain * strongest]
    paths.sort(key=lambda pp: pp.toa)
    return PathSet(paths=paths)


def steering_antenna(cfg: SystemConfig, theta: float) -> np.ndarray:
    """ULA spatial steering vector a(theta), length M."""
    m = np.arange(cfg.n_antennas)
    return np.exp(2j * np.pi * m * cfg.antenna_spacing / cfg.wavelength * np.sin(theta))


def steering_delay(cfg: SystemConfig, tau: float) -> np.ndarray:
    """Frequency-domain steering vector b(tau), length N_c."""
    n = np.arange(cfg.n_subcarriers)
    return np.exp(-2j * np.pi * n * cfg.delta_f * tau)


def synthesize_csi(paths: PathSet, cfg: SystemConfig, seed: int = 0) -> Csi:
    """Build H = sum_l beta_l a(theta_l) b(tau_l)^T plus optional noise."""
    if len(paths) == 0:
        raise NoPaths("cannot synthesize CSI from an empty path set")
    h = np.zeros((cfg.n_antennas, cfg.n_subcarriers), dtype=complex)
    for pp in paths.paths:
        h += pp.gain * np.outer(steering_antenna(cfg, pp.aoa), steering_delay(cfg, pp.toa))
    if cfg.noise_std > 0:
        rng = np.random.default_rng(seed)
        scale = cfg.noise_std / np.sqrt(2.0)
        h = h + scale * (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape))
    return Csi(h=h)


@dataclass
class TrajectoryConfig:
    """Timestamp generation along a nearest-neighbor visiting order."""

    mu: float = 10.0        # mean velocity (m/s)
    sigma_v: float = 0.0    # velocity std dev (m/s)
    with_timestamps: bool = False


def _nearest_neighbor_order(points: np.ndarray) -> np.ndarray:
    """Visiting order: start at point 0, repeatedly hop to the nearest unvisited."""
    n = len(points)
    order = np.empty(n, dtype=int)
    remaining = list(range(1, n))
    order[0] = 0
    cur = points[0, :2]
    for k in range(1, n):
        d = np.linalg.norm(np.asarray([points[i, :2] for i in remaining]) - cur, axis=1)
        j = int(np.argmin(d))
        order[k] = remaining.pop(j)
        cur = points[order[k], :2]
    return order


def generate_dataset(
    scene: SceneMap,
    cfg: SystemConfig,
    prior: UserPrior,
    n_users: int,
    trajectory: TrajectoryConfig | None = None,
    seed: int = 0,
    max_bounces: int = 2,
) -> list[Csi]:
    """Sample user positions and synthesize one CSI per position.

    When timestamps are requested, samples are reordered along the
    nearest-neighbor trajectory and t_i = t_{i-1} + |p_i - p_{i-1}| / v_i
    with v_i drawn from the truncated Gaussian max(N(mu, sigma_v^2), mu/1000);
    the small positive floor keeps timestamps finite. Per-sample CSI noise
    uses child seeds (seed, sample_id) so regeneration order cannot matter.
    """
    trajectory = trajectory or TrajectoryConfig()
    if trajectory.with_timestamps and n_users < 2:
        raise ConfigError("timestamps require at least 2 users")
    positions = sample_positions(scene, prior, n_users, "all", seed)
    if trajectory.with_timestamps:
        order = _nearest_neighbor_order(positions)
        positions = positions[order]
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A17]))
        t = np.zeros(n_users)
        for i in range(1, n_users):
            v = max(rng.normal(trajectory.mu, trajectory.sigma_v), trajectory.mu * 1e-3)
            t[i] = t[i - 1] + float(np.linalg.norm(positions[i, :2] - positions[i - 1, :2])) / v
    else:
        t = None

    samples = []
    for i in range(n_users):
        pset = trace_paths(scene, cfg, positions[i], max_bounces)
        child = np.random.SeedSequence([int(seed), int(i)])
        csi = synthesize_csi(pset, cfg, seed=child)
        csi.sample_id = i
        csi.position = positions[i]
        csi.timestamp = float(t[i]) if t is not None else None
        csi.los = classify_point(scene, positions[i]) == LOS
        samples.append(csi)
    return samples
