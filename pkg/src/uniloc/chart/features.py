"""CSI feature extraction for the chart model.

CSI is converted to the angle-delay domain (DFT along antennas, inverse DFT
along subcarriers), truncated to a delay window, and flattened into
[log-magnitude, phase] features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..chansim import SPEED_OF_LIGHT, Csi, SystemConfig
from ..errors import ConfigError
from ..scene import SceneMap

_LOG_FLOOR = np.log(1e-12)


@dataclass
class FeatureConfig:
    tau_min: float = 0.0
    tau_max: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.tau_min < self.tau_max):
            raise ConfigError("need 0 <= tau_min < tau_max")


def delay_window(sys_cfg: SystemConfig, cfg: FeatureConfig) -> tuple[int, int]:
    """Column slice [lo, hi) of the angle-delay matrix for the window."""
    if cfg.tau_max > 1.0 / sys_cfg.delta_f + 1e-15:
        raise ConfigError("tau_max exceeds the unambiguous delay range")
    lo = int(np.floor(cfg.tau_min * sys_cfg.delta_f * sys_cfg.n_subcarriers))
    hi = int(np.ceil(cfg.tau_max * sys_cfg.delta_f * sys_cfg.n_subcarriers))
    hi = min(max(hi, lo + 1), sys_cfg.n_subcarriers)
    lo = min(lo, hi - 1)
    return lo, hi


def feature_dim(sys_cfg: SystemConfig, cfg: FeatureConfig) -> int:
    lo, hi = delay_window(sys_cfg, cfg)
    return 2 * sys_cfg.n_antennas * (hi - lo)


def extract_features(h: np.ndarray | Csi, sys_cfg: SystemConfig, cfg: FeatureConfig) -> np.ndarray:
    """Angle-delay features of one CSI matrix: vec([log|.|, phase(.)])."""
    mat = h.h if isinstance(h, Csi) else np.asarray(h)
    if mat.shape != (sys_cfg.n_antennas, sys_cfg.n_subcarriers):
        raise ConfigError(f"CSI shape {mat.shape} does not match the system config")
    ad = np.fft.ifft(np.fft.fft(mat, axis=0), axis=1)
    lo, hi = delay_window(sys_cfg, cfg)
    win = ad[:, lo:hi]
    logmag = np.maximum(np.log(np.abs(win) + 1e-300), _LOG_FLOOR)
    phase = np.angle(win)
    return np.concatenate([logmag.ravel(), phase.ravel()])


def features_batch(samples, sys_cfg: SystemConfig, cfg: FeatureConfig) -> np.ndarray:
    return np.stack([extract_features(s, sys_cfg, cfg) for s in samples])


def default_feature_config(scene: SceneMap, sys_cfg: SystemConfig) -> FeatureConfig:
    """Delay window wide enough for direct plus twice-around-the-scene paths."""
    bb = scene.bounding_box()
    corners = np.array([
        [bb.x0, bb.y0], [bb.x0, bb.y1], [bb.x1, bb.y0], [bb.x1, bb.y1],
    ])
    bs = scene.bs_position
    d3 = np.sqrt(
        (corners[:, 0] - bs[0]) ** 2
        + (corners[:, 1] - bs[1]) ** 2
        + (scene.user_height - bs[2]) ** 2
    )
    diag = float(np.hypot(bb.x1 - bb.x0, bb.y1 - bb.y0))
    tau_max = min((d3.max() + 2.0 * diag) / SPEED_OF_LIGHT, 1.0 / sys_cfg.delta_f)
    return FeatureConfig(tau_min=0.0, tau_max=tau_max)
