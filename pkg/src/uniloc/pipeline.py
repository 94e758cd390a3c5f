"""Stage orchestration shared by the CLI and the test harness.

Every stage reads/writes artifacts in a run directory and stamps them with
the producing config hash plus the dataset fingerprint, so downstream
stages can refuse stale or mixed-provenance inputs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import storage
from .chansim import generate_dataset
from .chart.features import features_batch
from .chart.infer import BRANCH_CHART, BRANCH_MODEL
from .chart.model import ChartModelConfig
from .chart.training import (
    self_generated_labels,
    train_fingerprint,
    train_uniloc,
    train_unilocpro,
)
from .config import (
    build_features,
    build_gospa,
    build_identifier,
    build_omp,
    build_scene,
    build_sinkhorn,
    build_system,
    build_train,
    build_trajectory,
    build_weights,
    triplet_thresholds,
)
from .errors import ConfigError, StaleArtifact
from .estimation import identify, omp_estimate, shortest_path_select
from .evalsuite import EvalReport, chart_metrics, positioning_metrics
from .scene import UserPrior, grid_points, save_scene
from .setmetrics import (
    DissimilarityMatrix,
    KIND_FUSI,
    KIND_GGOSPA,
    default_kappa,
    fuse_matrix,
    geodesic_complete,
    gospa_matrix,
    mine_triplets,
    time_matrix,
    wasserstein_matrix,
)

DATASET_BLOB = "dataset.ulc"
DATASET_MANIFEST = "dataset.jsonl"
ESTIMATES = "estimates.jsonl"
SCENE_FILE = "scene.json"

_COMPAT_SECTIONS = ("scene", "system", "omp", "features")


def _compat_hash(doc: dict) -> str:
    return storage.config_hash({k: doc[k] for k in _COMPAT_SECTIONS})


def scene_model_config(scene, seed: int) -> ChartModelConfig:
    """Chart-model init matched to the scene: outputs start centered on the
    region with a spread of a quarter of its diagonal."""
    bb = scene.bounding_box()
    diag = float(np.hypot(bb.x1 - bb.x0, bb.y1 - bb.y0))
    return ChartModelConfig(
        seed=seed,
        out_bias=((bb.x0 + bb.x1) / 2.0, (bb.y0 + bb.y1) / 2.0),
        out_scale=diag / 4.0,
    )


def _dataset_paths(data_dir):
    d = Path(data_dir)
    return d / DATASET_BLOB, d / DATASET_MANIFEST


def simulate(doc: dict, out_dir, seed: int | None = None) -> str:
    """Generate a dataset into out_dir; returns the dataset fingerprint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_scene(doc)
    sys_cfg = build_system(doc)
    trajectory = build_trajectory(doc)
    seed = int(doc["seed"]) if seed is None else int(seed)
    samples = generate_dataset(
        scene, sys_cfg, UserPrior(), int(doc["dataset"]["n_users"]),
        trajectory, seed=seed, max_bounces=int(doc["dataset"]["max_bounces"]),
    )
    blob, manifest = _dataset_paths(out)
    fingerprint = storage.save_dataset(samples, blob, manifest)
    save_scene(scene, out / SCENE_FILE)
    storage.save_sidecar(blob, {
        "stage": "simulate",
        "dataset_hash": fingerprint,
        "seed": seed,
        "config_hash": storage.config_hash(
            {k: doc[k] for k in ("scene", "system", "dataset")}
        ),
    })
    return fingerprint


def load_run_dataset(data_dir):
    blob, manifest = _dataset_paths(data_dir)
    if not blob.exists() or not manifest.exists():
        raise ConfigError(f"no dataset in {data_dir}; run `simulate` first")
    return storage.load_dataset(blob, manifest)


def estimate(doc: dict, data_dir) -> Path:
    """Run the model-based estimator over the dataset; writes the sidecar."""
    samples, meta = load_run_dataset(data_dir)
    scene = build_scene(doc)
    sys_cfg = build_system(doc)
    omp_cfg = build_omp(doc)
    estimates = [omp_estimate(s, scene, sys_cfg, omp_cfg) for s in samples]
    path = Path(data_dir) / ESTIMATES
    storage.save_estimates(estimates, path, {
        "dataset_hash": meta["dataset_hash"],
        "compat_hash": _compat_hash(doc),
    })
    return path


def load_run_estimates(doc: dict, data_dir):
    path = Path(data_dir) / ESTIMATES
    if not path.exists():
        raise ConfigError(f"no estimates in {data_dir}; run `estimate` first")
    estimates, meta = storage.load_estimates(path)
    _, ds_meta = load_run_dataset(data_dir)
    if meta.get("dataset_hash") != ds_meta["dataset_hash"]:
        raise StaleArtifact("estimates were computed for a different dataset")
    if meta.get("compat_hash") != _compat_hash(doc):
        raise StaleArtifact("estimates were computed under a different config")
    return estimates


def dissim(doc: dict, data_dir, kind: str) -> Path:
    """Compute one dissimilarity matrix artifact (plus its dependencies)."""
    samples, meta = load_run_dataset(data_dir)
    data_dir = Path(data_dir)
    met = doc["metrics"]

    def save(mat: DissimilarityMatrix, name: str) -> Path:
        path = data_dir / f"{name}.uld"
        storage.save_matrix(mat, path)
        storage.save_sidecar(path, {
            "stage": "dissim", "kind": mat.kind, "params": mat.params,
            "dataset_hash": meta["dataset_hash"],
            "compat_hash": _compat_hash(doc),
        })
        return path

    if kind == "time":
        ts = [s.timestamp for s in samples]
        if any(t is None for t in ts):
            raise ConfigError("time dissimilarity needs a dataset with timestamps")
        return save(time_matrix(np.array(ts)), "time")

    estimates = load_run_estimates(doc, data_dir)
    if kind in ("gospa", "ggospa", "fusi"):
        g = gospa_matrix(estimates, build_gospa(doc))
        path = save(g, "gospa")
        if kind == "gospa":
            return path
        gg = DissimilarityMatrix(
            KIND_GGOSPA,
            geodesic_complete(g.values, int(met["k_neighbors"])),
            {**g.params, "k_neighbors": int(met["k_neighbors"])},
        )
        path = save(gg, "ggospa")
        if kind == "ggospa":
            return path
        w = wasserstein_matrix(estimates, met["kappa"])
        save(w, "wass")
        fu = fuse_matrix(gg, w, float(met["vartheta"]), float(met["d_thre"]))
        return save(fu, "fusi")
    if kind == "wass":
        return save(wasserstein_matrix(estimates, met["kappa"]), "wass")
    raise ConfigError(f"unknown dissimilarity kind {kind!r}")


def load_run_matrix(doc: dict, data_dir, name: str) -> DissimilarityMatrix:
    path = Path(data_dir) / f"{name}.uld"
    if not path.exists():
        raise ConfigError(f"no {name} matrix in {data_dir}; run `dissim --kind {name}`")
    side = storage.load_sidecar(path)
    _, ds_meta = load_run_dataset(data_dir)
    if side.get("dataset_hash") != ds_meta["dataset_hash"]:
        raise StaleArtifact(f"{name} matrix belongs to a different dataset")
    return storage.load_matrix(path)


def identification(doc: dict, samples, estimates, scene, apply_override: bool = True):
    """Per-sample I' decisions and model-based anchors (full 3-vectors)."""
    identifier = build_identifier(doc)
    iprime = np.empty(len(samples), dtype=int)
    anchors = np.empty((len(samples), 3))
    for i, (s, ests) in enumerate(zip(samples, estimates)):
        pmb = shortest_path_select(ests).position
        anchors[i] = pmb
        iprime[i] = identify(s, pmb, scene, identifier, apply_override)
    return iprime, anchors


def _training_inputs(doc: dict, data_dir):
    samples, meta = load_run_dataset(data_dir)
    scene = build_scene(doc)
    sys_cfg = build_system(doc)
    feat_cfg = build_features(doc, scene, sys_cfg)
    estimates = load_run_estimates(doc, data_dir)
    feats = features_batch(samples, sys_cfg, feat_cfg)
    iprime, anchors = identification(
        doc, samples, estimates, scene,
        apply_override=bool(doc["identifier"]["apply_override"]),
    )
    return samples, meta, scene, sys_cfg, feats, estimates, iprime, anchors


def _mined_triplets(doc: dict, samples, weights):
    if weights.w_tri <= 0:
        return None, 0.0
    ts = [s.timestamp for s in samples]
    if any(t is None for t in ts):
        return None, 0.0
    lower, upper = triplet_thresholds(doc)
    tri = mine_triplets(
        time_matrix(np.array(ts)).values, lower, upper,
        per_reference_cap=int(doc["metrics"]["triplet_cap"]),
        seed=int(doc["seed"]),
    )
    return tri, weights.w_tri


def train(doc: dict, data_dir, out_dir=None, make_labels: bool = False):
    """Train per doc['train']['mode']; writes checkpoint, trace, label file."""
    data_dir = Path(data_dir)
    out_dir = Path(out_dir) if out_dir is not None else data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = doc["train"]["mode"]
    tcfg = build_train(doc)
    weights = build_weights(doc)
    sink_cfg = build_sinkhorn(doc)

    samples, meta, scene, sys_cfg, feats, estimates, iprime, anchors = _training_inputs(doc, data_dir)
    triplets, w_tri = _mined_triplets(doc, samples, weights)
    if triplets is None:
        weights.w_tri = 0.0
    nlos_targets = grid_points(scene, float(doc["targets"]["delta_d"]), "nlos")

    ckpt = out_dir / f"{mode}.ulm"
    trace = out_dir / f"{mode}_trace.csv"
    label_path = out_dir / "labels.jsonl"
    model_cfg = scene_model_config(scene, tcfg.seed)
    extra: dict = {}

    if mode == "unilocpro":
        model, history = train_unilocpro(
            feats, iprime, anchors[:, :2], load_run_matrix(doc, data_dir, "fusi"),
            nlos_targets, weights, sink_cfg, tcfg,
            triplets=triplets, model_cfg=model_cfg,
        )
    elif mode == "uniloc":
        if make_labels:
            labels = self_generated_labels(
                anchors[:, :2], iprime, nlos_targets, sink_cfg,
                target_factor=tcfg.label_target_factor, seed=tcfg.seed,
            )
            branches = [BRANCH_MODEL if v == 1 else BRANCH_CHART for v in iprime]
            storage.save_labels(labels, branches, label_path, {
                "dataset_hash": meta["dataset_hash"],
                "compat_hash": _compat_hash(doc),
            })
        if not label_path.exists():
            raise ConfigError(
                "uniloc training needs a label file; rerun with --make-labels "
                "(one barycentric OT pass) or point at an existing labels.jsonl"
            )
        labels, _, lmeta = storage.load_labels(label_path)
        if lmeta.get("dataset_hash") != meta["dataset_hash"]:
            raise StaleArtifact("label file belongs to a different dataset")
        model, history = train_uniloc(
            feats, labels, weights, tcfg, triplets=triplets, model_cfg=model_cfg,
        )
    elif mode == "fingerprint":
        truth = np.array([s.position[:2] for s in samples])
        model, history = train_fingerprint(feats, truth, tcfg, model_cfg=model_cfg)
    elif mode == "affinecc":
        from .chart.training import fit_affine

        cc_weights = build_weights(doc)
        cc_weights.w_los = 0.0
        cc_weights.w_ot = 0.0
        if triplets is None:
            cc_weights.w_tri = 0.0
        model, history = train_unilocpro(
            feats, iprime, anchors[:, :2], load_run_matrix(doc, data_dir, "fusi"),
            nlos_targets, cc_weights, sink_cfg, tcfg,
            triplets=triplets, model_cfg=model_cfg,
        )
        emb = model.predict(feats)
        truth = np.array([s.position[:2] for s in samples])
        A, b = fit_affine(emb, truth)
        extra["affine"] = {"A": A.tolist(), "b": b.tolist()}
    else:
        raise ConfigError(f"unknown train mode {mode!r}")

    storage.save_model(model, ckpt)
    storage.save_sidecar(ckpt, {
        "stage": "train", "mode": mode,
        "dataset_hash": meta["dataset_hash"],
        "compat_hash": _compat_hash(doc),
        "config_hash": storage.config_hash(doc),
        "epochs": tcfg.epochs,
        "epoch_seconds": history.epoch_seconds,
        **extra,
    })
    storage.write_csv(
        [{"step": i, **losses} for i, losses in enumerate(history.step_losses)], trace
    )
    return ckpt, history


def evaluate(doc: dict, data_dir, checkpoint=None, out_prefix=None,
             apply_override: bool | None = None) -> EvalReport:
    """Route every test sample and compute the evaluation report.

    checkpoint=None evaluates the pure model-based estimator. For a trained
    checkpoint, identified-LoS samples take the model-based branch and the
    rest go through the chart (except the affinecc baseline, which maps all
    samples through the chart plus its fitted affine transform).
    """
    data_dir = Path(data_dir)
    samples, meta = load_run_dataset(data_dir)
    scene = build_scene(doc)
    sys_cfg = build_system(doc)
    estimates = load_run_estimates(doc, data_dir)
    truths = np.array([s.position for s in samples])
    los_mask = np.array([bool(s.los) for s in samples])
    if apply_override is None:
        apply_override = bool(doc["identifier"]["apply_override"])

    if checkpoint is None:
        preds = np.array([shortest_path_select(e).position for e in estimates])
        branches = [BRANCH_MODEL] * len(samples)
    else:
        side = storage.load_sidecar(checkpoint)
        if side.get("compat_hash") != _compat_hash(doc):
            raise StaleArtifact("checkpoint was trained under an incompatible config")
        model = storage.load_model(checkpoint)
        feat_cfg = build_features(doc, scene, sys_cfg)
        feats = features_batch(samples, sys_cfg, feat_cfg)
        emb = model.predict(feats)
        mode = side.get("mode", "unilocpro")
        if mode == "affinecc":
            A = np.array(side["affine"]["A"])
            b = np.array(side["affine"]["b"])
            xy = emb @ A.T + b
            preds = np.column_stack([xy, np.full(len(xy), scene.user_height)])
            branches = [BRANCH_CHART] * len(samples)
        elif mode == "fingerprint":
            preds = np.column_stack([emb, np.full(len(emb), scene.user_height)])
            branches = [BRANCH_CHART] * len(samples)
        else:
            iprime, anchors = identification(doc, samples, estimates, scene, apply_override)
            preds = np.empty((len(samples), 3))
            branches = []
            for i in range(len(samples)):
                if iprime[i] == 1:
                    preds[i] = anchors[i]
                    branches.append(BRANCH_MODEL)
                else:
                    preds[i] = [emb[i, 0], emb[i, 1], scene.user_height]
                    branches.append(BRANCH_CHART)

    report = positioning_metrics(preds, truths, los_mask, branches)
    report.ct, report.tw, report.ks = chart_metrics(preds[:, :2], truths)
    if out_prefix is not None:
        prefix = Path(out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        storage.write_csv([report.flat()], Path(str(prefix) + "_report.csv"))
        storage.save_sidecar(prefix, {
            "stage": "eval",
            "dataset_hash": meta["dataset_hash"],
            "report": report.flat(),
            "errors": report.errors.tolist(),
        })
    return report


def default_kappa_for(doc: dict, data_dir) -> float:
    return default_kappa(load_run_estimates(doc, data_dir))
