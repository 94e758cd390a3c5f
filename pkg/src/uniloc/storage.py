"""On-disk artifact formats: dataset blob + manifest, estimate sidecars,
dissimilarity matrices, model checkpoints, label files, reports.

All binary payloads are little-endian float32 with small magic-tagged
headers; manifests and sidecars are JSON-lines with a leading meta record.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .chansim import Csi
from .errors import ConfigError, StaleArtifact
from .estimation import PathEstimate
from .chart.model import ChartModel, ChartModelConfig
from .setmetrics import MATRIX_KINDS, DissimilarityMatrix

DATASET_MAGIC = b"ULC1"
MATRIX_MAGIC = b"ULD1"
MODEL_MAGIC = b"ULM1"


def config_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Dataset (CSI blob + manifest)
# ---------------------------------------------------------------------------

def save_dataset(samples: list[Csi], blob_path, manifest_path) -> str:
    """Write the CSI blob and JSONL manifest; returns the dataset fingerprint."""
    if not samples:
        raise ConfigError("cannot save an empty dataset")
    m, nc = samples[0].h.shape
    with open(blob_path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<III", m, nc, len(samples)))
        offsets = []
        for s in samples:
            if s.h.shape != (m, nc):
                raise ConfigError("all CSI matrices must share one shape")
            offsets.append(f.tell())
            inter = np.empty((m, nc, 2), dtype="<f4")
            inter[..., 0] = s.h.real
            inter[..., 1] = s.h.imag
            f.write(inter.tobytes())
    fingerprint = file_hash(blob_path)
    with open(manifest_path, "w") as f:
        f.write(json.dumps({"meta": {
            "n_antennas": m, "n_subcarriers": nc, "count": len(samples),
            "dataset_hash": fingerprint,
        }}) + "\n")
        for s, off in zip(samples, offsets):
            f.write(json.dumps({
                "id": s.sample_id,
                "position": None if s.position is None else [float(v) for v in s.position],
                "timestamp": s.timestamp,
                "los": s.los,
                "offset": off,
            }) + "\n")
    return fingerprint


def load_dataset(blob_path, manifest_path) -> tuple[list[Csi], dict]:
    with open(manifest_path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or "meta" not in lines[0]:
        raise ConfigError("manifest is missing its meta record")
    meta = lines[0]["meta"]
    with open(blob_path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise ConfigError(f"bad dataset magic {magic!r}")
        m, nc, count = struct.unpack("<III", f.read(12))
        if count != len(lines) - 1:
            raise ConfigError("manifest / blob sample count mismatch")
        samples = []
        for rec in lines[1:]:
            f.seek(rec["offset"])
            raw = np.frombuffer(f.read(m * nc * 8), dtype="<f4").reshape(m, nc, 2)
            h = (raw[..., 0] + 1j * raw[..., 1]).astype(complex)
            samples.append(Csi(
                h=h,
                sample_id=rec["id"],
                position=None if rec["position"] is None else np.array(rec["position"]),
                timestamp=rec["timestamp"],
                los=rec["los"],
            ))
    if meta.get("dataset_hash") != file_hash(blob_path):
        raise StaleArtifact("dataset blob does not match its manifest fingerprint")
    return samples, meta


# ---------------------------------------------------------------------------
# Estimate sidecar
# ---------------------------------------------------------------------------

def save_estimates(estimates: list[list[PathEstimate]], path, meta: dict) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"meta": meta}) + "\n")
        for i, ests in enumerate(estimates):
            f.write(json.dumps({"id": i, "paths": [
                {
                    "re": e.gain.real, "im": e.gain.imag,
                    "aoa": e.aoa, "toa": e.toa,
                    "x": float(e.position[0]), "y": float(e.position[1]),
                    "z": float(e.position[2]),
                    "clamped": e.clamped,
                } for e in ests
            ]}) + "\n")


def load_estimates(path) -> tuple[list[list[PathEstimate]], dict]:
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or "meta" not in lines[0]:
        raise ConfigError("estimates sidecar is missing its meta record")
    out = []
    for rec in lines[1:]:
        out.append([
            PathEstimate(
                gain=complex(p["re"], p["im"]), aoa=p["aoa"], toa=p["toa"],
                position=np.array([p["x"], p["y"], p["z"]]), clamped=p["clamped"],
            ) for p in rec["paths"]
        ])
    return out, lines[0]["meta"]


# ---------------------------------------------------------------------------
# Dissimilarity matrix
# ---------------------------------------------------------------------------

def save_matrix(matrix: DissimilarityMatrix, path) -> None:
    n = matrix.n
    kind_tag = MATRIX_KINDS.index(matrix.kind)
    iu = np.triu_indices(n, 1)
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<BI", kind_tag, n))
        f.write(matrix.values[iu].astype("<f4").tobytes())


def load_matrix(path) -> DissimilarityMatrix:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MATRIX_MAGIC:
            raise ConfigError(f"bad matrix magic {magic!r}")
        kind_tag, n = struct.unpack("<BI", f.read(5))
        tri = np.frombuffer(f.read(), dtype="<f4").astype(float)
    if len(tri) != n * (n - 1) // 2:
        raise ConfigError("matrix payload length mismatch")
    values = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    values[iu] = tri
    values += values.T
    return DissimilarityMatrix(MATRIX_KINDS[kind_tag], values)


# ---------------------------------------------------------------------------
# Model checkpoint
# ---------------------------------------------------------------------------

def save_model(model: ChartModel, path) -> None:
    dims = model.layer_dims
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(struct.pack("<ff", model.cfg.bn_momentum, model.cfg.bn_eps))
        for l in range(len(dims) - 1):
            f.write(model.params[f"W{l}"].astype("<f4").tobytes())
            f.write(model.params[f"b{l}"].astype("<f4").tobytes())
        for l in range(model.n_hidden):
            f.write(model.params[f"gamma{l}"].astype("<f4").tobytes())
            f.write(model.params[f"beta{l}"].astype("<f4").tobytes())
            f.write(model.run_mean[l].astype("<f4").tobytes())
            f.write(model.run_var[l].astype("<f4").tobytes())


def load_model(path) -> ChartModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise ConfigError(f"bad model magic {magic!r}")
        (ndims,) = struct.unpack("<I", f.read(4))
        dims = list(struct.unpack(f"<{ndims}I", f.read(4 * ndims)))
        momentum, eps = struct.unpack("<ff", f.read(8))
        cfg = ChartModelConfig(hidden=tuple(dims[1:-1]), out_dim=dims[-1],
                               bn_momentum=momentum, bn_eps=eps)
        model = ChartModel(dims[0], cfg)

        def read(shape):
            size = int(np.prod(shape))
            return np.frombuffer(f.read(4 * size), dtype="<f4").astype(float).reshape(shape)

        for l in range(len(dims) - 1):
            model.params[f"W{l}"] = read((dims[l], dims[l + 1]))
            model.params[f"b{l}"] = read((dims[l + 1],))
        for l in range(model.n_hidden):
            width = dims[l + 1]
            model.params[f"gamma{l}"] = read((width,))
            model.params[f"beta{l}"] = read((width,))
            model.run_mean[l] = read((width,))
            model.run_var[l] = read((width,))
    return model


# ---------------------------------------------------------------------------
# Labels, reports, sidecars
# ---------------------------------------------------------------------------

def save_labels(labels: np.ndarray, branches, path, meta: dict) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"meta": meta}) + "\n")
        for i, (xy, br) in enumerate(zip(labels, branches)):
            f.write(json.dumps(
                {"id": i, "x": float(xy[0]), "y": float(xy[1]), "branch": br}
            ) + "\n")


def load_labels(path):
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or "meta" not in lines[0]:
        raise ConfigError("label file is missing its meta record")
    labels = np.array([[r["x"], r["y"]] for r in lines[1:]])
    branches = [r["branch"] for r in lines[1:]]
    return labels, branches, lines[0]["meta"]


def save_sidecar(path, doc: dict) -> None:
    Path(str(path) + ".json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_sidecar(path) -> dict:
    p = Path(str(path) + ".json")
    if not p.exists():
        raise StaleArtifact(f"missing provenance sidecar for {path}")
    return json.loads(p.read_text())


def write_csv(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
