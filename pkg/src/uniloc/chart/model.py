"""Fully-connected chart model with batch normalization, from scratch.

Hidden layers are affine -> batchnorm -> ReLU; the output layer is affine
with identity activation. Forward returns a cache consumed by backward,
which produces exact reverse-mode gradients for every parameter (including
the batch-statistics path of batchnorm in training mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionMismatch

DEFAULT_HIDDEN = (1024, 512, 256, 128, 64)


@dataclass
class ChartModelConfig:
    hidden: tuple = DEFAULT_HIDDEN
    out_dim: int = 2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0
    # initial output distribution: coordinates live in meters, so the output
    # layer starts centered on the scene with a spread of out_scale
    out_bias: tuple | None = None
    out_scale: float = 1.0


class ChartModel:
    """MLP f_theta mapping CSI features to 2-D chart coordinates."""

    def __init__(self, in_dim: int, cfg: ChartModelConfig | None = None):
        cfg = cfg or ChartModelConfig()
        if in_dim < 1:
            raise ConfigError("input dimension must be >= 1")
        self.cfg = cfg
        self.layer_dims = [in_dim, *cfg.hidden, cfg.out_dim]
        rng = np.random.default_rng(cfg.seed)
        self.params: dict[str, np.ndarray] = {}
        for l in range(len(self.layer_dims) - 1):
            fan_in, fan_out = self.layer_dims[l], self.layer_dims[l + 1]
            self.params[f"W{l}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out))
            self.params[f"b{l}"] = np.zeros(fan_out)
        last = len(self.layer_dims) - 2
        self.params[f"W{last}"] *= cfg.out_scale
        if cfg.out_bias is not None:
            self.params[f"b{last}"] = np.asarray(cfg.out_bias, dtype=float).copy()
        self.n_hidden = len(cfg.hidden)
        for l in range(self.n_hidden):
            width = self.layer_dims[l + 1]
            self.params[f"gamma{l}"] = np.ones(width)
            self.params[f"beta{l}"] = np.zeros(width)
        self.run_mean = [np.zeros(w) for w in cfg.hidden]
        self.run_var = [np.ones(w) for w in cfg.hidden]

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    def forward(self, x: np.ndarray, training: bool = False, update_stats: bool | None = None):
        """Batched forward pass; returns (output, cache).

        In training mode batchnorm uses batch statistics (and, when
        update_stats, folds them into the running averages); in eval mode
        it uses the frozen running statistics.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionMismatch(
                f"input shape {x.shape} incompatible with in_dim {self.in_dim}"
            )
        if update_stats is None:
            update_stats = training
        eps = self.cfg.bn_eps
        cache = {"x": x, "layers": []}
        a = x
        for l in range(self.n_hidden):
            z = a @ self.params[f"W{l}"] + self.params[f"b{l}"]
            if training:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    m = self.cfg.bn_momentum
                    self.run_mean[l] = m * self.run_mean[l] + (1 - m) * mu
                    self.run_var[l] = m * self.run_var[l] + (1 - m) * var
            else:
                mu, var = self.run_mean[l], self.run_var[l]
            inv_std = 1.0 / np.sqrt(var + eps)
            zhat = (z - mu) * inv_std
            y = self.params[f"gamma{l}"] * zhat + self.params[f"beta{l}"]
            out = np.maximum(y, 0.0)
            cache["layers"].append({
                "a_in": a, "z": z, "zhat": zhat, "inv_std": inv_std,
                "relu_mask": y > 0.0, "training": training,
            })
            a = out
        out = a @ self.params[f"W{self.n_hidden}"] + self.params[f"b{self.n_hidden}"]
        cache["a_last"] = a
        return out, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, training=False)[0]

    def backward(self, cache, dout: np.ndarray):
        """Gradients of sum(dout * output) w.r.t. every parameter.

        Returns (grads dict, gradient w.r.t. the input batch).
        """
        grads: dict[str, np.ndarray] = {}
        L = self.n_hidden
        grads[f"W{L}"] = cache["a_last"].T @ dout
        grads[f"b{L}"] = dout.sum(axis=0)
        da = dout @ self.params[f"W{L}"].T
        for l in range(L - 1, -1, -1):
            lay = cache["layers"][l]
            dy = da * lay["relu_mask"]
            grads[f"beta{l}"] = dy.sum(axis=0)
            grads[f"gamma{l}"] = (dy * lay["zhat"]).sum(axis=0)
            dzhat = dy * self.params[f"gamma{l}"]
            if lay["training"]:
                B = dzhat.shape[0]
                # full batch-statistics gradient of (z - mu(z)) / std(z)
                dz = (
                    dzhat
                    - dzhat.mean(axis=0)
                    - lay["zhat"] * (dzhat * lay["zhat"]).mean(axis=0)
                ) * lay["inv_std"]
            else:
                dz = dzhat * lay["inv_std"]
            grads[f"W{l}"] = lay["a_in"].T @ dz
            grads[f"b{l}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{l}"].T
        return grads, da

    # -- parameter (de)serialization helpers -------------------------------

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_param_vector(self, vec: np.ndarray) -> None:
        pos = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k] = vec[pos:pos + n].reshape(self.params[k].shape).copy()
            pos += n
        if pos != len(vec):
            raise DimensionMismatch("parameter vector length mismatch")

    def grad_vector(self, grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in sorted(self.params)])

    def copy(self) -> "ChartModel":
        other = ChartModel(self.in_dim, self.cfg)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.run_mean = [v.copy() for v in self.run_mean]
        other.run_var = [v.copy() for v in self.run_var]
        return other


class Adam:
    """Adaptive-moment optimizer over the model's parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)
