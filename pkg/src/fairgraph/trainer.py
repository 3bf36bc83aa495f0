"""Full-batch alternating adversarial training and plain-GNN baselines."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import ComputationRecord, Tensor, no_grad
from .data_io import SplitMasks
from .fairness import (
    FairnessWeights,
    MetricsReport,
    accuracy_f1,
    config_hash,
    delta_eo,
    delta_sp,
    draw_random_sensitive,
    epsilon_ratio,
    loss_classification,
    loss_independence,
    loss_sufficiency,
    reward_epsilon,
    reward_separation,
    sufficiency_mask,
)
from .graph import Graph, social_homophily
from .model import EagnnModel, ModelConfig

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainingDivergedError",
    "SGD",
    "Adam",
    "train_eagnn",
    "train_baseline",
    "evaluate",
    "select_epoch",
    "ascend",
    "composite_objective",
]

SELECTIONS = ("acc", "acc_fair", "fair_percentile", "last")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch, components):
        self.epoch = epoch
        self.components = components
        super().__init__(f"non-finite loss at epoch {epoch}: {components}")


@dataclass
class TrainConfig:
    alpha: float = 0.15
    beta: float = 10.0
    gamma: float = 10.0
    lr_main: float = 0.05
    lr_disc: float = 0.05
    epochs: int = 400
    disc_steps: int = 5
    theta: float = 0.85
    patience: int | None = None
    seed: int = 0
    encoder: str = "sage_concat"
    hidden: int = 16
    n_layers: int = 2
    optimizer: str = "sgd"
    momentum: float = 0.9
    clip_norm: float | None = 5.0
    suff_sign: float = 1.0
    bce_literal: bool = False
    selection: str = "fair_percentile"
    baseline_selection: str = "acc"
    fair_percentile: float = 20.0
    min_epochs: int = 50

    def __post_init__(self):
        if self.lr_main <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.disc_steps < 1:
            raise ValueError("disc_steps must be >= 1")
        if self.selection not in SELECTIONS or self.baseline_selection not in SELECTIONS:
            raise ValueError(f"selection rules must be one of {SELECTIONS}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        FairnessWeights(self.alpha, self.beta, self.gamma)

    @property
    def weights(self) -> FairnessWeights:
        return FairnessWeights(self.alpha, self.beta, self.gamma)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    test: MetricsReport | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


# -- optimisers ------------------------------------------------------------


class SGD:
    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params, self.lr, self.momentum = params, lr, momentum
        self.velocity = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict, ascent: bool = False):
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v += g
            self.params[k].data = self.params[k].data + sign * self.lr * v


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.betas, self.eps = params, lr, betas, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict, ascent: bool = False):
        self.t += 1
        b1, b2 = self.betas
        sign = 1.0 if ascent else -1.0
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mh = self.m[k] / (1 - b1**self.t)
            vh = self.v[k] / (1 - b2**self.t)
            self.params[k].data = self.params[k].data + sign * self.lr * mh / (np.sqrt(vh) + self.eps)


def _optimizer(cfg: TrainConfig, params: dict, lr: float):
    if cfg.optimizer == "adam":
        return Adam(params, lr)
    return SGD(params, lr, cfg.momentum)


def _collect(params: dict, clip: float | None) -> dict:
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    for p in params.values():
        p.grad = None
    if clip is not None:
        total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if total > clip:
            grads = {k: g * (clip / total) for k, g in grads.items()}
    return grads


def _step(objective_fn, params: dict, opt, clip, ascent=False) -> float:
    """One optimiser step on ``params``; all other tensors are treated as frozen."""
    with ComputationRecord():
        for k, p in params.items():
            p.grad = None
            p.requires_grad = True
        value = objective_fn()
        value.backward()
    grads = _collect(params, clip)
    opt.step(grads, ascent=ascent)
    return value.item()


def ascend(objective_fn, params: dict, steps: int, lr: float = 0.05, optimizer: str = "adam",
           clip: float | None = None) -> float:
    """Maximise ``objective_fn()`` over ``params`` by ``steps`` full-batch updates.

    Returns the objective at the final parameters.
    """
    opt = Adam(params, lr) if optimizer == "adam" else SGD(params, lr)
    for _ in range(steps):
        _step(objective_fn, params, opt, clip, ascent=True)
    with no_grad():
        return objective_fn().item()


def _freeze(model: EagnnModel, trainable: dict):
    for k, p in model.params.items():
        p.requires_grad = k in trainable


# -- evaluation ------------------------------------------------------------


def _predict(model: EagnnModel, g: Graph) -> np.ndarray:
    with no_grad():
        return model.predict_proba(g).data


def evaluate(model: EagnnModel, g: Graph, mask, proba: np.ndarray | None = None,
             seed: int | None = None, epoch: int | None = None, cfg_hash: str | None = None) -> MetricsReport:
    """Threshold at 0.5 and score ACC, F1, delta SP and delta EO on ``mask``."""
    idx = np.asarray(mask, dtype=np.int64)
    if len(idx) == 0:
        raise ValueError("empty evaluation mask")
    p = _predict(model, g) if proba is None else proba
    pred = (p[idx] >= 0.5).astype(np.int64)
    y, s = g.labels[idx], g.sensitive[idx]
    acc, f1 = accuracy_f1(pred, y)
    try:
        hom = social_homophily(g)
    except ValueError:
        hom = None
    return MetricsReport(acc, f1, delta_sp(pred, s), delta_eo(pred, y, s), hom, epoch, seed, cfg_hash)


def _score(report: MetricsReport, selection: str) -> float:
    if selection == "acc":
        return report.acc
    return report.acc - 0.5 * (report.delta_sp + report.delta_eo)


def select_epoch(records: list, selection: str, percentile: float = 20.0, min_epoch: int = 0) -> int:
    """Pick the index of the selected epoch from per-epoch validation records."""
    cands = [r for r in records if r["epoch"] >= min_epoch] or records
    if selection == "last":
        return cands[-1]["epoch"]
    if selection == "fair_percentile":
        fair = np.array([r["val_delta_sp"] + r["val_delta_eo"] for r in cands])
        cut = np.percentile(fair, percentile)
        pool = [r for r, f in zip(cands, fair) if f <= cut]
        return max(pool, key=lambda r: (r["val_acc"], -r["epoch"]))["epoch"]
    return max(cands, key=lambda r: (r["val_score"], -r["epoch"]))["epoch"]


# -- training --------------------------------------------------------------


def composite_objective(model: EagnnModel, g: Graph, train, s_prime, weights: FairnessWeights,
                        mask=None, eps=None, r_eps: float = 0.0, suff_sign: float = 1.0,
                        bce_literal: bool = False):
    """Main-model objective ``L_C + a L_suff + b L_in + c (R_se + R_eps)`` on ``train`` nodes.

    Terms with zero weight are not evaluated. ``eps`` holds the detached
    density ratios at ``(s_prime, y)``; ``r_eps`` is the current value of the
    density-ratio reward, a constant for the main model.

    Returns
    -------
    total : Tensor
    parts : dict of str -> Tensor
    """
    train = np.asarray(train, dtype=np.int64)
    y_tr = g.labels[train].astype(np.float64)
    s_tr = g.sensitive[train].astype(np.float64)
    y_hat = model.predict_proba(g)
    y_hat_tr = y_hat.take(train)
    total = loss_classification(y_hat_tr, y_tr, literal=bce_literal)
    parts = {"l_c": total}
    if weights.alpha > 0:
        l_suff = loss_sufficiency(y_hat, g.labels, mask, sign=suff_sign, index=train)
        parts["l_suff"] = l_suff
        total = total + l_suff * weights.alpha
    if weights.beta > 0:
        l_in = loss_independence(y_hat_tr, s_tr, s_prime, model.params)
        parts["l_in"] = l_in
        total = total + l_in * weights.beta
    if weights.gamma > 0:
        l_se = reward_separation(y_hat_tr, s_tr, y_tr, s_prime, model.params, eps) + r_eps
        parts["l_se"] = l_se
        total = total + l_se * weights.gamma
    parts["total"] = total
    return total, parts


def _train(g: Graph, masks: SplitMasks, cfg: TrainConfig, adversarial: bool):
    train, val = np.asarray(masks.train, dtype=np.int64), np.asarray(masks.val, dtype=np.int64)
    s_tr = g.sensitive[train]
    if adversarial and not ((s_tr == 0).any() and (s_tr == 1).any()):
        raise ValueError("both sensitive groups must be present in the training split")
    w = cfg.weights if adversarial else FairnessWeights(0.0, 0.0, 0.0)
    selection = cfg.selection if adversarial else cfg.baseline_selection
    model = EagnnModel(ModelConfig(g.feature_dim, cfg.hidden, cfg.n_layers, cfg.encoder), seed=cfg.seed)
    main = model.main_params()
    opt_main = _optimizer(cfg, main, cfg.lr_main)
    groups = {name: model.group(name) for name in ("d_in", "d_eps", "d_se")}
    opt_disc = {name: _optimizer(cfg, ps, cfg.lr_disc) for name, ps in groups.items()}
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])

    y_tr = g.labels[train].astype(np.float64)
    s_trf = s_tr.astype(np.float64)
    p_s = float(s_trf.mean())
    mask = sufficiency_mask(g, cfg.theta) if w.alpha > 0 else None
    chash = config_hash(cfg.to_dict())

    history = TrainHistory()

    def record_val(epoch, comps):
        rep = evaluate(model, g, val, seed=cfg.seed, epoch=epoch)
        entry = {"epoch": epoch, **comps,
                 "val_acc": rep.acc, "val_f1": rep.f1,
                 "val_delta_sp": rep.delta_sp, "val_delta_eo": rep.delta_eo}
        entry["val_score"] = _score(rep, selection)
        history.epochs.append(entry)
        return entry

    snapshots = {0: model.state_dict()}
    record_val(0, {})
    best_score, best_epoch, since = history.epochs[0]["val_score"], 0, 0

    uses_disc = w.beta > 0 or w.gamma > 0
    s_prime, eps, r_eps_now = None, None, 0.0
    for epoch in range(1, cfg.epochs + 1):
        comps = {}
        if uses_disc:
            s_prime = draw_random_sensitive(p_s, len(train), rng).s_prime
            for _ in range(cfg.disc_steps):
                y_hat_c = Tensor(_predict(model, g)[train])
                if w.beta > 0:
                    _freeze(model, groups["d_in"])
                    comps["disc_l_in"] = _step(
                        lambda: loss_independence(y_hat_c, s_trf, s_prime, model.params),
                        groups["d_in"], opt_disc["d_in"], cfg.clip_norm, ascent=True)
                if w.gamma > 0:
                    _freeze(model, groups["d_eps"])
                    comps["r_eps"] = _step(
                        lambda: reward_epsilon(s_trf, y_tr, s_prime, model.params),
                        groups["d_eps"], opt_disc["d_eps"], cfg.clip_norm, ascent=True)
                    with no_grad():
                        eps = epsilon_ratio(s_prime, y_tr, model.params)
                    _freeze(model, groups["d_se"])
                    comps["disc_r_se"] = _step(
                        lambda: reward_separation(y_hat_c, s_trf, y_tr, s_prime, model.params, eps),
                        groups["d_se"], opt_disc["d_se"], cfg.clip_norm, ascent=True)
            if w.gamma > 0:
                with no_grad():
                    r_eps_now = reward_epsilon(s_trf, y_tr, s_prime, model.params).item()
                    eps = epsilon_ratio(s_prime, y_tr, model.params)

        _freeze(model, main)
        parts = {}

        def objective():
            total, comps_t = composite_objective(model, g, train, s_prime, w, mask, eps, r_eps_now,
                                                 cfg.suff_sign, cfg.bce_literal)
            parts.update(comps_t)
            return total

        _step(objective, main, opt_main, cfg.clip_norm)
        comps.update({k: v.item() for k, v in parts.items()})
        if not all(math.isfinite(v) for v in comps.values()):
            raise TrainingDivergedError(epoch, comps)

        entry = record_val(epoch, comps)
        if selection == "fair_percentile":
            snapshots[epoch] = model.state_dict()
            continue
        if selection == "last" or (epoch >= cfg.min_epochs and entry["val_score"] > best_score) \
                or (best_epoch < cfg.min_epochs and epoch >= cfg.min_epochs):
            best_score, best_epoch, since = entry["val_score"], epoch, 0
            snapshots = {epoch: model.state_dict()}
        else:
            since += 1
            if cfg.patience is not None and epoch >= cfg.min_epochs and since >= cfg.patience:
                break

    if selection == "fair_percentile":
        best_epoch = select_epoch(history.epochs, selection, cfg.fair_percentile, cfg.min_epochs)
    elif selection == "last":
        best_epoch = history.epochs[-1]["epoch"]
    model.load_state_dict(snapshots[best_epoch])
    _freeze(model, model.params)
    history.best_epoch = best_epoch
    if len(masks.test):
        history.test = evaluate(model, g, masks.test, seed=cfg.seed, epoch=best_epoch, cfg_hash=chash)
    return model, history


def train_eagnn(g: Graph, masks: SplitMasks, cfg: TrainConfig):
    """Train encoder + classifier under the composite fair objective.

    Returns
    -------
    model : EagnnModel
        Parameters restored to the selected epoch.
    history : TrainHistory
    """
    return _train(g, masks, cfg, adversarial=True)


def train_baseline(g: Graph, masks: SplitMasks, cfg: TrainConfig):
    """Same loop with the classification loss only."""
    return _train(g, masks, cfg, adversarial=False)
