"""Pipeline configuration: one JSON document with a defaults profile and
dotted-path overrides."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .chansim import SystemConfig, TrajectoryConfig
from .chart.features import FeatureConfig, default_feature_config
from .chart.losses import LossWeights
from .chart.training import TrainConfig
from .errors import ConfigError
from .estimation import Identifier, OmpConfig
from .ot import SinkhornConfig
from .scene import SceneMap, default_scene, load_scene
from .setmetrics import GospaParams

DEFAULTS: dict = {
    "schema_version": 1,
    "seed": 0,
    "scene": {"path": None},
    "system": {
        "f_c": 1.0e10,
        "delta_f": 1.2e5,
        "n_subcarriers": 64,
        "n_antennas": 32,
        "noise_std": 0.0,
        "reflection_coeff": 0.5,
        "include_ground": False,
    },
    "dataset": {
        "n_users": 600,
        "with_timestamps": False,
        "mu": 10.0,
        "sigma_v": 0.0,
        "max_bounces": 2,
    },
    "omp": {
        "max_paths": 6,
        "residual_ratio": 0.08,
        "refinement": "local",
        "min_gain_ratio": 0.15,
    },
    "features": {"tau_min": None, "tau_max": None},
    "metrics": {
        "zeta": 20.0,
        "gospa_p": 1.0,
        "card_factor": 2.0,
        "kappa": None,
        "vartheta": 0.03,
        "d_thre": 10.0,
        "k_neighbors": 10,
        "t_lower": None,
        "t_upper": None,
        "triplet_cap": 20,
    },
    "sinkhorn": {"eps": 2.0 / 3.0, "max_iters": 500, "tol": 1e-6, "log_domain": True},
    "loss": {"w_ccc": 1.0, "w_pwd": 1.0, "w_tri": 1.0, "w_los": 1.0, "w_ot": 1.0, "margin": 0.1},
    "train": {
        "mode": "unilocpro",
        "lr": 1e-3,
        "lr_decay": 0.97,
        "batch_size": 128,
        "epochs": 60,
        "seed": 0,
        "ot_target_factor": 2,
        "label_target_factor": 4,
    },
    "identifier": {"mode": "oracle", "p_i": 1.0, "seed": 0, "apply_override": True},
    "targets": {"delta_d": 0.5},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _apply_override(doc: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like section.key=value")
    path, raw = spec.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown config section {'.'.join(keys[:-1])!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {path!r}")
    node[keys[-1]] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults profile, deep-merged with an optional JSON file, then
    dotted-path overrides (e.g. train.epochs=30)."""
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if user.get("schema_version", 1) != 1:
            raise ConfigError("unsupported config schema_version")
        doc = _deep_merge(doc, user)
    for spec in overrides:
        _apply_override(doc, spec)
    return doc


# -- typed builders ---------------------------------------------------------

def build_scene(doc: dict) -> SceneMap:
    path = doc["scene"].get("path")
    return default_scene() if path is None else load_scene(path)


def build_system(doc: dict) -> SystemConfig:
    d = doc["system"]
    return SystemConfig(
        f_c=float(d["f_c"]),
        delta_f=float(d["delta_f"]),
        n_subcarriers=int(d["n_subcarriers"]),
        n_antennas=int(d["n_antennas"]),
        noise_std=float(d["noise_std"]),
        reflection_coeff=float(d["reflection_coeff"]),
        include_ground=bool(d["include_ground"]),
    )


def build_trajectory(doc: dict) -> TrajectoryConfig:
    d = doc["dataset"]
    return TrajectoryConfig(
        mu=float(d["mu"]),
        sigma_v=float(d["sigma_v"]),
        with_timestamps=bool(d["with_timestamps"]),
    )


def build_omp(doc: dict) -> OmpConfig:
    d = doc["omp"]
    return OmpConfig(
        max_paths=int(d["max_paths"]),
        residual_ratio=float(d["residual_ratio"]),
        refinement=d["refinement"],
        min_gain_ratio=float(d["min_gain_ratio"]),
    )


def build_features(doc: dict, scene: SceneMap, sys_cfg: SystemConfig) -> FeatureConfig:
    d = doc["features"]
    if d["tau_max"] is None:
        return default_feature_config(scene, sys_cfg)
    return FeatureConfig(tau_min=float(d["tau_min"] or 0.0), tau_max=float(d["tau_max"]))


def build_gospa(doc: dict) -> GospaParams:
    d = doc["metrics"]
    return GospaParams(p=float(d["gospa_p"]), cutoff=float(d["zeta"]),
                       card_factor=float(d["card_factor"]))


def build_sinkhorn(doc: dict) -> SinkhornConfig:
    d = doc["sinkhorn"]
    return SinkhornConfig(eps=float(d["eps"]), max_iters=int(d["max_iters"]),
                          tol=float(d["tol"]), log_domain=bool(d["log_domain"]))


def build_weights(doc: dict) -> LossWeights:
    d = doc["loss"]
    return LossWeights(w_ccc=float(d["w_ccc"]), w_pwd=float(d["w_pwd"]),
                       w_tri=float(d["w_tri"]), w_los=float(d["w_los"]),
                       w_ot=float(d["w_ot"]), margin=float(d["margin"]))


def build_train(doc: dict) -> TrainConfig:
    d = doc["train"]
    return TrainConfig(
        mode=d["mode"], lr=float(d["lr"]), lr_decay=float(d["lr_decay"]),
        batch_size=int(d["batch_size"]), epochs=int(d["epochs"]), seed=int(d["seed"]),
        ot_target_factor=int(d["ot_target_factor"]),
        label_target_factor=int(d["label_target_factor"]),
    )


def build_identifier(doc: dict) -> Identifier:
    d = doc["identifier"]
    return Identifier(mode=d["mode"], p_i=float(d["p_i"]), seed=int(d["seed"]))


def triplet_thresholds(doc: dict) -> tuple[float, float]:
    d = doc["metrics"]
    mu = float(doc["dataset"]["mu"])
    lower = float(d["t_lower"]) if d["t_lower"] is not None else 10.0 / mu
    upper = float(d["t_upper"]) if d["t_upper"] is not None else 50.0 / mu
    return lower, upper
