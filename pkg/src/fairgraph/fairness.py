"""Loss terms of the fair training objective and group-fairness metrics.

Losses operate on :class:`~fairgraph.autodiff.Tensor` values so they can be
differentiated; metrics operate on plain arrays of hard predictions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, concat
from .model import mlp_forward

__all__ = [
    "SufficiencyMask",
    "RandomSensitive",
    "FairnessWeights",
    "MetricsReport",
    "UndefinedMetricError",
    "loss_classification",
    "sufficiency_mask",
    "loss_sufficiency",
    "draw_random_sensitive",
    "loss_independence",
    "reward_epsilon",
    "epsilon_ratio",
    "reward_separation",
    "loss_separation",
    "delta_sp",
    "delta_eo",
    "accuracy_f1",
    "config_hash",
]

EPS_CLAMP = 1e-6


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class FairnessWeights:
    alpha: float = 0.15
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("fairness weights must be non-negative")


@dataclass(frozen=True)
class SufficiencyMask:
    m: np.ndarray
    theta: float

    @property
    def coverage(self) -> float:
        return float(self.m.mean()) if self.m.size else 0.0


@dataclass(frozen=True)
class RandomSensitive:
    s_prime: np.ndarray
    p: float
    seed: int | None = None


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def loss_classification(y_hat, y, mask=None, literal: bool = False) -> Tensor:
    """Mean binary cross-entropy over the nodes selected by ``mask``.

    With ``literal=True`` the second term is subtracted instead of added,
    reproducing the printed form of the objective for comparison only.
    """
    y_hat = _t(y_hat).clamp_prob()
    y = np.asarray(y, dtype=np.float64)
    if mask is not None:
        idx = _index(mask, len(y))
        if len(idx) == 0:
            raise ValueError("empty mask")
        y_hat, y = y_hat.take(idx), y[idx]
    if len(y) == 0:
        raise ValueError("empty mask")
    pos = y_hat.log() * y
    neg = (1.0 - y_hat).log() * (1.0 - y)
    per_node = pos - neg if literal else pos + neg
    return -per_node.mean()


def _index(mask, n):
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if len(mask) != n:
            raise ValueError("boolean mask length mismatch")
        return np.flatnonzero(mask)
    return mask.astype(np.int64)


def sufficiency_mask(features, sensitive, theta: float = 0.85, block: int = 2048) -> SufficiencyMask:
    """Flag nodes that have a cross-group node with cosine similarity above ``theta``.

    Pairwise similarities are computed exactly in row blocks.
    """
    if hasattr(features, "features"):
        sensitive = features.sensitive
        features = features.features
    x = np.asarray(features, dtype=np.float64)
    s = np.asarray(sensitive).astype(np.int64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    m = np.zeros(len(x), dtype=np.int64)
    g0, g1 = np.flatnonzero(s == 0), np.flatnonzero(s == 1)
    if len(g0) and len(g1):
        other = unit[g1]
        hit1 = np.zeros(len(g1), dtype=bool)
        for start in range(0, len(g0), block):
            rows = g0[start : start + block]
            sim = unit[rows] @ other.T
            over = sim > theta
            m[rows] = over.any(axis=1)
            hit1 |= over.any(axis=0)
        m[g1] = hit1
    return SufficiencyMask(m, float(theta))


def loss_sufficiency(y_hat, y, m, sign: float = 1.0, index=None) -> Tensor:
    """Mean of ``0.5 (y_hat - y)^2 m`` (times ``sign``) over all or indexed nodes."""
    y_hat = _t(y_hat)
    y = np.asarray(y, dtype=np.float64)
    mvec = np.asarray(m.m if isinstance(m, SufficiencyMask) else m, dtype=np.float64)
    if index is not None:
        y_hat, y, mvec = y_hat.take(index), y[index], mvec[index]
    err = (y_hat - y).square() * (0.5 * mvec)
    return err.mean() * sign


def draw_random_sensitive(p: float, n: int, rng) -> RandomSensitive:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return RandomSensitive((rng.random(n) < p).astype(np.float64), float(p))


def _col(x):
    x = _t(x)
    return x if x.ndim == 2 else x.reshape(-1, 1)


def loss_independence(y_hat, s, s_prime, params) -> Tensor:
    """``mean(log D(y_hat, s) + log(1 - D(y_hat, s')))``."""
    y_hat = _col(y_hat)
    d_real = mlp_forward(params, "d_in", concat([y_hat, _col(s)], axis=1))
    d_fake = mlp_forward(params, "d_in", concat([y_hat, _col(s_prime)], axis=1))
    return (d_real.log() + (1.0 - d_fake).log()).mean()


def reward_epsilon(s, y, s_prime, params) -> Tensor:
    y = _col(y)
    d_real = mlp_forward(params, "d_eps", concat([_col(s), y], axis=1))
    d_fake = mlp_forward(params, "d_eps", concat([_col(s_prime), y], axis=1))
    return (d_real.log() + (1.0 - d_fake).log()).mean()


def epsilon_ratio(s, y, params) -> np.ndarray:
    """Estimated ``p_{S,Y}(s, y) / p_{S',Y}(s, y)`` as ``D / (1 - D)``; detached."""
    x = Tensor(np.column_stack([np.asarray(s, dtype=np.float64).reshape(-1),
                                np.asarray(y, dtype=np.float64).reshape(-1)]))
    d = np.clip(mlp_forward(params, "d_eps", x).data, EPS_CLAMP, 1.0 - EPS_CLAMP)
    return d / (1.0 - d)


def reward_separation(y_hat, s, y, s_prime, params, eps_values) -> Tensor:
    """``mean(log D(y_hat, s, y) + eps * log(1 - D(y_hat, s', y)))``."""
    y_hat, y = _col(y_hat), _col(y)
    eps = np.asarray(eps_values, dtype=np.float64).reshape(-1)
    d_real = mlp_forward(params, "d_se", concat([y_hat, _col(s), y], axis=1))
    d_fake = mlp_forward(params, "d_se", concat([y_hat, _col(s_prime), y], axis=1))
    return (d_real.log() + (1.0 - d_fake).log() * eps).mean()


def loss_separation(r_eps, r_se):
    return r_eps + r_se


# -- metrics ---------------------------------------------------------------


def _binary(a, name):
    a = np.asarray(a).reshape(-1)
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return a.astype(np.int64)


def delta_sp(pred, s) -> float:
    """Absolute gap in positive-prediction rate between the two groups."""
    pred, s = _binary(pred, "pred"), _binary(s, "sensitive")
    if not (s == 0).any() or not (s == 1).any():
        raise UndefinedMetricError("undefined parity: a group is empty")
    return float(abs(pred[s == 0].mean() - pred[s == 1].mean()))


def delta_eo(pred, y, s) -> float:
    """Absolute gap in true-positive rate between the two groups."""
    pred, y, s = _binary(pred, "pred"), _binary(y, "labels"), _binary(s, "sensitive")
    c0, c1 = (y == 1) & (s == 0), (y == 1) & (s == 1)
    if not c0.any() or not c1.any():
        raise UndefinedMetricError("undefined EO: a (y=1, s) cell is empty")
    return float(abs(pred[c0].mean() - pred[c1].mean()))


def accuracy_f1(pred, y) -> tuple[float, float]:
    pred, y = _binary(pred, "pred"), _binary(y, "labels")
    if len(y) == 0:
        raise ValueError("empty input")
    acc = float((pred == y).mean())
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    denom = 2 * tp + fp + fn
    f1 = 0.0 if denom == 0 or tp == 0 else 2 * tp / denom
    return acc, float(f1)


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MetricsReport:
    acc: float
    f1: float
    delta_sp: float
    delta_eo: float
    homophily: float | None = None
    epoch: int | None = None
    seed: int | None = None
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)
