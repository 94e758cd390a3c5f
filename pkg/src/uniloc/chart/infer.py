"""Unified inference routing: model-based branch for identified-LoS CSI,
chart branch for identified-NLoS CSI."""

from __future__ import annotations

import numpy as np

from ..chansim import Csi, SystemConfig
from ..estimation import Identifier, OmpConfig, identify, model_based_estimate
from ..scene import SceneMap
from .features import FeatureConfig, extract_features
from .model import ChartModel

BRANCH_MODEL = "model"
BRANCH_CHART = "chart"


def infer(
    csi: Csi,
    model: ChartModel,
    scene: SceneMap,
    sys_cfg: SystemConfig,
    omp_cfg: OmpConfig,
    identifier: Identifier,
    feat_cfg: FeatureConfig,
    apply_override: bool = True,
):
    """Position estimate and branch tag for one CSI sample."""
    pmb = model_based_estimate(csi, scene, sys_cfg, omp_cfg)
    if identify(csi, pmb, scene, identifier, apply_override) == 1:
        return pmb, BRANCH_MODEL
    s = extract_features(csi, sys_cfg, feat_cfg)
    xy = model.predict(s[None, :])[0]
    return np.array([xy[0], xy[1], scene.user_height]), BRANCH_CHART
