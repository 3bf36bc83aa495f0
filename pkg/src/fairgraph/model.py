"""Learnable components: GNN encoder, classifier and the three discriminators."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, concat
from .graph import Graph, mean_aggregate

__all__ = [
    "ModelConfig",
    "EagnnModel",
    "mlp_forward",
    "spectral_norm",
    "save_checkpoint",
    "load_checkpoint",
]

ENCODERS = ("sage_concat", "gcn_mean")
DISC_INPUTS = {"d_in": 2, "d_se": 3, "d_eps": 2}


@dataclass
class ModelConfig:
    in_dim: int
    hidden: int = 16
    n_layers: int = 2
    encoder: str = "sage_concat"
    head_hidden: int = 16
    disc_hidden: int = 16
    self_loops: bool = True

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_mlp(rng, prefix, dims, zero=False):
    params = {}
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        if zero:
            w, c = np.zeros((a, b)), np.zeros(b)
        else:
            w, c = _uniform(rng, a, (a, b)), _uniform(rng, a, (b,))
        params[f"{prefix}.{k}.weight"] = Tensor(w, requires_grad=True)
        params[f"{prefix}.{k}.bias"] = Tensor(c, requires_grad=True)
    return params


def mlp_forward(params: dict, prefix: str, x: Tensor) -> Tensor:
    """ReLU MLP ending in a sigmoid; output is clamped into ``(0, 1)``."""
    k = 0
    while f"{prefix}.{k}.weight" in params:
        if k:
            x = x.relu()
        x = x @ params[f"{prefix}.{k}.weight"] + params[f"{prefix}.{k}.bias"]
        k += 1
    return x.reshape(-1).sigmoid().clamp_prob()


class EagnnModel:
    """All parameters of one model, keyed by dotted names.

    Encoder and classifier parameters (``main``) and discriminator
    parameters (``disc``) are initialised from separate random streams so a
    model trained without adversaries follows the same trajectory as a plain
    GNN under the same seed.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, zero_discriminators: bool = False):
        self.config = config
        main_ss, disc_ss = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(main_ss)
        self.params: dict[str, Tensor] = {}
        width = 2 if config.encoder == "sage_concat" else 1
        dims = [config.in_dim] + [config.hidden] * config.n_layers
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"encoder.{k}.weight"] = Tensor(_uniform(rng, width * a, (width * a, b)), True)
            self.params[f"encoder.{k}.bias"] = Tensor(_uniform(rng, width * a, (b,)), True)
        self.params.update(_init_mlp(rng, "classifier", [config.hidden, config.head_hidden, 1]))
        drng = np.random.default_rng(disc_ss)
        for name, fan in DISC_INPUTS.items():
            self.params.update(
                _init_mlp(drng, name, [fan, config.disc_hidden, 1], zero=zero_discriminators)
            )

    # -- parameter groups --------------------------------------------------

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.split(".")[0] == prefix}

    def main_params(self) -> dict[str, Tensor]:
        return {**self.group("encoder"), **self.group("classifier")}

    # -- forward passes ----------------------------------------------------

    def encode(self, g: Graph, x: Tensor | None = None) -> Tensor:
        """Node representations; hidden layers use ReLU, the last is linear."""
        cfg = self.config
        h = Tensor(g.features) if x is None else x
        if h.shape[1] != cfg.in_dim:
            raise ValueError(f"feature_dim {h.shape[1]} does not match encoder input {cfg.in_dim}")
        for k in range(cfg.n_layers):
            if k:
                h = h.relu()
            agg = mean_aggregate(g, h, self_loops=cfg.self_loops)
            z = concat([h, agg], axis=1) if cfg.encoder == "sage_concat" else agg
            h = z @ self.params[f"encoder.{k}.weight"] + self.params[f"encoder.{k}.bias"]
        return h

    def classify(self, h: Tensor) -> Tensor:
        return mlp_forward(self.params, "classifier", h)

    def predict_proba(self, g: Graph) -> Tensor:
        return self.classify(self.encode(g))

    def discriminate_in(self, y_hat, s) -> Tensor:
        return mlp_forward(self.params, "d_in", concat([y_hat, s], axis=1))

    def discriminate_se(self, y_hat, s, y) -> Tensor:
        return mlp_forward(self.params, "d_se", concat([y_hat, s, y], axis=1))

    def discriminate_eps(self, s, y) -> Tensor:
        return mlp_forward(self.params, "d_eps", concat([s, y], axis=1))

    # -- state -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, v in state.items():
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = arr.copy()
            self.params[k].grad = None


def save_checkpoint(model: EagnnModel, path):
    payload = {
        "config": asdict(model.config),
        "params": {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                   for k, v in model.params.items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> EagnnModel:
    payload = json.loads(Path(path).read_text())
    model = EagnnModel(ModelConfig(**payload["config"]))
    model.load_state_dict(
        {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in payload["params"].items()}
    )
    return model


def spectral_norm(w, max_iter: int = 200, tol: float = 1e-10) -> float:
    """Largest singular value by power iteration on ``W^T W``."""
    w = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=np.float64)
    if w.ndim == 1:
        w = w.reshape(1, -1)
    if not np.any(w):
        return 0.0
    gram = w.T @ w
    v = np.random.default_rng(12345).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = gram @ v
        norm = np.linalg.norm(u)
        if norm == 0:
            return 0.0
        v = u / norm
        new = float(v @ gram @ v)
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))
