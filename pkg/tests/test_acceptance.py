"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the verdict lines are
also printed when output is captured.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from fairgraph.autodiff import Tensor, grad_check
from fairgraph.cli import main
from fairgraph.data_io import DatasetSpec, save_graph, split, standardize
from fairgraph.experiments import cmd_ablation, cmd_concentration, cmd_stats, resolve_config
from fairgraph.fairness import (
    FairnessWeights,
    accuracy_f1,
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
from fairgraph.graph import Graph, social_homophily
from fairgraph.model import EagnnModel, ModelConfig
from fairgraph.synthgen import SynthConfig, generate, make_shaped_graph
from fairgraph.trainer import TrainConfig, ascend, composite_objective, train_baseline, train_eagnn
from oracles import count_acc_f1, count_delta_eo, count_delta_sp, count_homophily, jsd

LOG4 = math.log(4)


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return _report


# -- 1. dataset statistics -------------------------------------------------

# nodes, attributes, undirected edges, homophily, average degree, density
TABLE1 = {
    "credit": (30_000, 13, 1_436_858, 0.9600, 95.79, 47.90),
    "german": (1_000, 27, 22_242, 0.8092, 44.48, 22.24),
    "bail": (18_876, 18, 321_308, 0.5361, 34.04, 17.02),
}


@pytest.mark.parametrize("name", sorted(TABLE1))
def test_criterion1_dataset_statistics(name, tmp_path, report):
    n, d, m, h, avg, dens = TABLE1[name]
    g = make_shaped_graph(n, m, h, feature_dim=d, seed=0)
    save_graph(g, tmp_path / f"{name}.csv", tmp_path / f"{name}.txt")
    cfg = resolve_config({"dataset": DatasetSpec(str(tmp_path / f"{name}.csv"), str(tmp_path / f"{name}.txt"),
                                                 name=name, standardize=False).to_dict()}, "stats")
    t = time.perf_counter()
    (row,) = cmd_stats(cfg, tmp_path / "out")
    took = time.perf_counter() - t
    rel = {k: abs(row[k] - ref) / ref for k, ref in (("homophily", h), ("avg_degree", avg), ("density", dens))}
    ok = max(rel.values()) <= 0.005 and took < 30 and (row["nodes"], row["attributes"], row["edges"]) == (n, d, m)
    report(1, ok, f"{name}: h={row['homophily']:.4f} avg={row['avg_degree']:.2f} "
                  f"density={row['density']:.2f} max_rel={max(rel.values()):.2e} {took:.1f}s")


# -- 2. gradient correctness -------------------------------------------------


def _grad_errors(seed):
    rng = np.random.default_rng(seed)
    n = 12
    g = Graph(rng.standard_normal((n, 3)), rng.integers(0, 2, n), np.r_[0, 1, rng.integers(0, 2, n - 2)],
              rng.integers(0, n, size=(2 * n, 2)))
    model = EagnnModel(ModelConfig(3, hidden=4), seed=seed)
    train = np.arange(n)
    s, y = g.sensitive.astype(float), g.labels.astype(float)
    sp = draw_random_sensitive(s.mean(), n, seed).s_prime
    eps = epsilon_ratio(sp, y, model.params)
    mask = sufficiency_mask(g, 0.0)
    w = FairnessWeights(0.15, 1.0, 1.0)
    errs = {}

    def check(label, fn, name):
        def f(v):
            model.params[name] = v
            return fn()

        base = model.params[name].data.copy()
        errs[f"{label}:{name}"] = grad_check(f, base)
        model.params[name] = Tensor(base, requires_grad=True)

    objective = lambda: composite_objective(model, g, train, sp, w, mask, eps)[0]
    for name in [k for k in model.params if k.split(".")[0] in ("encoder", "classifier", "d_in", "d_se")]:
        check("composite", objective, name)
    for name in model.group("d_eps"):
        check("r_eps", lambda: reward_epsilon(s, y, sp, model.params), name)

    p0 = rng.uniform(0.1, 0.9, n)
    m = rng.integers(0, 2, n)
    for label, f in (
        ("l_c", lambda v: loss_classification(v, y)),
        ("l_suff", lambda v: loss_sufficiency(v, y, m)),
        ("l_in", lambda v: loss_independence(v, s, sp, model.params)),
        ("r_se", lambda v: reward_separation(v, s, y, sp, model.params, eps)),
    ):
        errs[label] = grad_check(f, p0)
    return errs


def test_criterion2_gradient_correctness(report):
    t = time.perf_counter()
    worst = {}
    for seed in range(10):
        for k, v in _grad_errors(seed).items():
            worst[k] = max(worst.get(k, 0.0), v)
    took = time.perf_counter() - t
    top = max(worst.values())
    groups = sorted({k.split(":")[-1].split(".")[0] for k in worst})
    report(2, top < 1e-4 and took < 10,
           f"max rel err {top:.2e} over {len(worst)} checks x 10 seeds ({', '.join(groups)}) {took:.1f}s")


# -- 3. concentration bound ---------------------------------------------------


def test_criterion3_concentration_bound(tmp_path, report):
    cfg = resolve_config({"concentration": {"trials": 10_000, "dims": [1, 4], "degrees": [10, 50],
                                            "t_grid": [0.0, 0.25, 0.5, 1.0, 2.0]}}, "concentration")
    t = time.perf_counter()
    rows = cmd_concentration(cfg, tmp_path)
    took = time.perf_counter() - t
    slack = [r["exceedance"] - r["bound"] - 3 * r["std_error"] for r in rows]
    ok = len(rows) == 20 and all(r["passed"] for r in rows) and max(slack) <= 0 and took < 60
    report(3, ok, f"{len(rows)} points, max(exceedance - bound - 3se) = {max(slack):.3f} {took:.1f}s")


# -- 4. independence penalty optimum ------------------------------------------


def _exact_independent(p_first, p_second, n):
    """Binary columns with exact marginals and exactly independent counts."""
    a = np.repeat([0.0, 1.0], [round(n * (1 - p_first)), round(n * p_first)])
    b = np.zeros(n)
    for v in (0.0, 1.0):
        idx = np.flatnonzero(a == v)
        b[idx[: round(len(idx) * p_second)]] = 1.0
    return a, b


def _fit_l_in(yh, s, sp, seed):
    params = EagnnModel(ModelConfig(2), seed=seed).params
    group = {k: v for k, v in params.items() if k.startswith("d_in.")}
    val = ascend(lambda: loss_independence(yh, s, sp, params), group, 1000)
    levels = np.unique(yh)
    joint = np.array([[np.mean((yh == a) & (s == b)) for b in (0, 1)] for a in levels])
    prod = np.outer(joint.sum(axis=1), [np.mean(sp == 0), np.mean(sp == 1)])
    return val, 2 * jsd(joint.ravel(), prod.ravel()) - LOG4


def test_criterion4_independence_penalty_is_jsd(report):
    t = time.perf_counter()
    n = 2000
    # dependent: y_hat level depends on s; s' independent of y_hat with the same marginal
    s, y_bin = _exact_independent(0.5, 0.5, n)
    k = np.arange(n) % 5
    yh_dep = np.where(s == 1, np.where(k < 4, 0.8, 0.2), np.where(k < 1, 0.8, 0.2))
    sp = np.zeros(n)
    for v in (0.2, 0.8):
        idx = np.flatnonzero(yh_dep == v)
        sp[idx[: len(idx) // 2]] = 1.0
    dep_val, dep_target = _fit_l_in(yh_dep, s, sp, 0)
    # independent: s, s' and y_hat mutually independent in exact counts
    yh_ind = np.where(y_bin == 1, 0.8, 0.2)
    sp_ind = np.zeros(n)
    for a in (0.0, 1.0):
        for b in (0.0, 1.0):
            idx = np.flatnonzero((s == a) & (y_bin == b))
            sp_ind[idx[: len(idx) // 2]] = 1.0
    ind_val, ind_target = _fit_l_in(yh_ind, s, sp_ind, 1)
    took = time.perf_counter() - t
    err = max(abs(dep_val - dep_target), abs(ind_val - ind_target))
    report(4, err < 0.05 and took < 60,
           f"dependent {dep_val:.4f} vs {dep_target:.4f}, independent {ind_val:.4f} vs {ind_target:.4f} "
           f"(max err {err:.4f}) {took:.1f}s")


# -- 5. density-ratio fidelity --------------------------------------------------


def test_criterion5_density_ratio(report):
    t = time.perf_counter()
    joint = np.array([[0.10, 0.30], [0.35, 0.25]])  # rows s, columns y
    n = 2000
    counts = (joint * n).round().astype(int)
    s = np.repeat([0.0, 0.0, 1.0, 1.0], counts.ravel())
    y = np.repeat([0.0, 1.0, 0.0, 1.0], counts.ravel())
    p_s, p_y = joint.sum(axis=1), joint.sum(axis=0)
    # s' independent of y in exact counts with the marginal of s
    sp = np.zeros(n)
    for v in (0.0, 1.0):
        idx = np.flatnonzero(y == v)
        sp[idx[: round(len(idx) * p_s[1])]] = 1.0
    params = EagnnModel(ModelConfig(2), seed=0).params
    group = {k: v for k, v in params.items() if k.startswith("d_eps.")}
    ascend(lambda: reward_epsilon(s, y, sp, params), group, 1500)
    cells = []
    for a in (0, 1):
        for b in (0, 1):
            est = float(epsilon_ratio(np.array([a]), np.array([b]), params)[0])
            true = joint[a, b] / (p_s[a] * p_y[b])
            cells.append((a, b, est, true, abs(est - true) / true))
    took = time.perf_counter() - t
    worst = max(c[-1] for c in cells)
    detail = ", ".join(f"({a},{b}) {e:.3f}/{r:.3f}" for a, b, e, r, _ in cells)
    report(5, worst < 0.15 and took < 60, f"{detail}; max rel err {worst:.3f} {took:.1f}s")


# -- 6. / 7. debiasing and ablation direction -----------------------------------

SUITE = {"n": 2000, "target_homophily": 0.9, "label_bias": 0.4}
SEEDS = range(5)


def test_criterion6_debiasing_direction(report):
    t = time.perf_counter()
    base, fair = [], []
    for seed in SEEDS:
        g = generate(SynthConfig(**SUITE, seed=seed))
        masks = split(g, seed=seed)
        g = standardize(g, masks.train)
        cfg = TrainConfig(seed=seed)
        base.append(train_baseline(g, masks, cfg)[1].test)
        fair.append(train_eagnn(g, masks, cfg)[1].test)
    took = time.perf_counter() - t
    med = lambda reps, k: float(np.median([getattr(r, k) for r in reps]))
    sp_ratio = med(fair, "delta_sp") / med(base, "delta_sp")
    eo_ratio = med(fair, "delta_eo") / med(base, "delta_eo")
    acc_drop = med(base, "acc") - med(fair, "acc")
    ok = sp_ratio < 0.5 and eo_ratio < 0.5 and acc_drop <= 0.05 and took < 600
    report(6, ok, f"median dSP {med(fair, 'delta_sp'):.3f} vs {med(base, 'delta_sp'):.3f} (x{sp_ratio:.2f}), "
                  f"dEO {med(fair, 'delta_eo'):.3f} vs {med(base, 'delta_eo'):.3f} (x{eo_ratio:.2f}), "
                  f"ACC {med(fair, 'acc'):.3f} vs {med(base, 'acc'):.3f} {took:.0f}s")


def test_criterion7_ablation_direction(tmp_path, report):
    t = time.perf_counter()
    rows = cmd_ablation(resolve_config({"synth": SUITE, "seeds": list(SEEDS)}, "ablate"), tmp_path)
    took = time.perf_counter() - t
    med = {r["variant"]: r["delta_sp_median"] for r in rows}
    full = med.pop("EAGNN")
    ok = all(v >= full for v in med.values()) and took < 900
    report(7, ok, f"median dSP full {full:.3f}; " + ", ".join(f"{k} {v:.3f}" for k, v in med.items())
           + f" {took:.0f}s")


# -- 8. metric oracles ---------------------------------------------------------------


def test_criterion8_metric_oracles(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(4, 31))
        s = np.r_[0, 1, rng.integers(0, 2, n - 2)]
        y = np.r_[1, 1, rng.integers(0, 2, n - 2)]
        order = rng.permutation(n)
        s, y = s[order], y[order]
        y[np.flatnonzero(s == 0)[0]] = 1
        y[np.flatnonzero(s == 1)[0]] = 1
        pred = rng.integers(0, 2, n)
        edges = rng.integers(0, n, size=(int(rng.integers(1, 3 * n)), 2))
        if (edges[:, 0] == edges[:, 1]).all():
            edges[0] = (0, 1)
        g = Graph(np.zeros((n, 1)), y, s, edges)
        mismatches += delta_sp(pred, s) != count_delta_sp(pred, s)
        mismatches += delta_eo(pred, y, s) != count_delta_eo(pred, y, s)
        mismatches += tuple(accuracy_f1(pred, y)) != count_acc_f1(pred, y)
        mismatches += social_homophily(g) != count_homophily(edges, s)
    took = time.perf_counter() - t
    report(8, mismatches == 0 and took < 5, f"{mismatches} mismatches over 100 fixtures x 4 metrics {took:.2f}s")


# -- 9. determinism -------------------------------------------------------------------

SMALL = {"synth": {"n": 150, "avg_degree": 6.0}, "train": {"epochs": 8, "min_epochs": 0},
         "seeds": [0, 1, 2], "svg": True,
         "sweep": {"param": "beta_gamma_grid", "grid": [0.0, 1.0]},
         "concentration": {"trials": 1000, "t_grid": [0.0, 1.0], "dims": [2], "degrees": [10]}}


def _outputs(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion9_determinism(tmp_path, report, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    first = tmp_path / "first" / "train"
    main(["train", "--config", str(cfg), "--out", str(first)])
    extra = {"eval": [f"--checkpoint={first / 'checkpoint.json'}", f"--split={first / 'split.json'}"]}
    bad = []
    for cmd in ("stats", "synth", "train", "eval", "ablate", "sweep", "concentration"):
        a, b, c = (tmp_path / r / cmd for r in ("first", "second", "resolved"))
        if cmd != "train":
            main([cmd, "--config", str(cfg), "--out", str(a), *extra.get(cmd, [])])
        main([cmd, "--config", str(cfg), "--out", str(b), *extra.get(cmd, [])])
        main([cmd, "--config", str(a / "resolved_config.json"), "--out", str(c)])
        if not (_outputs(a) == _outputs(b) == _outputs(c)) or len(_outputs(a)) < 2:
            bad.append(cmd)
    capsys.readouterr()
    report(9, not bad, f"7 commands x 3 runs (repeat, resolved-config re-run); differing: {bad or 'none'}")
