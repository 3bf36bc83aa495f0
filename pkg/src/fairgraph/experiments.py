"""Experiment runners behind the command-line interface.

Every command takes a *resolved config*, a plain JSON-compatible dict, and an
output directory. The config is written to ``resolved_config.json`` beside the
outputs, so re-running the command on that file reproduces them exactly.

Config keys
-----------
dataset : dict, optional
    :class:`~fairgraph.data_io.DatasetSpec` fields. Relative paths resolve
    against the config file directory, the working directory, then
    ``$FAIRGRAPH_DATA_DIR``.
datasets : dict of name -> dict, optional
    Several datasets (``stats`` only).
synth : dict
    :class:`~fairgraph.synthgen.SynthConfig` fields, used when no dataset is
    given. Run ``k`` draws its graph with seed ``synth.seed + seeds[k]``.
train : dict
    :class:`~fairgraph.trainer.TrainConfig` overrides.
seeds : list of int
    Seeds for split, initialisation and synthetic draws.
ratios : list of float
    Train/validation/test fractions.
workers : int
    Size of the process pool for multi-run commands.
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data_io import DatasetSpec, SplitMasks, load_graph, load_split, save_graph, save_split, split, standardize
from .graph import Graph, average_degree, graph_density, social_homophily
from .model import load_checkpoint, save_checkpoint
from .synthgen import SynthConfig, generate, theorem1_sample
from .trainer import TrainConfig, evaluate, train_baseline, train_eagnn

__all__ = [
    "DEFAULTS",
    "resolve_config",
    "merge_config",
    "cmd_stats",
    "cmd_synth",
    "cmd_train",
    "cmd_eval",
    "cmd_ablation",
    "cmd_sweep",
    "cmd_concentration",
    "dataset_stats",
    "write_csv",
    "svg_line_chart",
    "svg_heatmap",
    "COMMANDS",
]

DEFAULTS: dict = {
    "seeds": [0, 1, 2, 3, 4],
    "ratios": [0.5, 0.25, 0.25],
    "workers": 1,
    "svg": False,
    "model": "eagnn",
    "synth": {},
    "train": {},
    "sweep": {"param": "alpha", "grid": [0.0, 0.15, 0.35]},
    "concentration": {
        "trials": 10_000,
        "t_grid": [0.0, 0.25, 0.5, 1.0, 2.0],
        "dims": [1, 4],
        "degrees": [10, 50],
        "weight_rows": 4,
        "weight_scale": 1.0,
        "weight_seed": 0,
        "rng_seed": 0,
    },
}

STATS_COLUMNS = ["dataset", "nodes", "attributes", "edges", "homophily", "avg_degree", "density"]
METRIC_COLUMNS = ["acc", "f1", "delta_sp", "delta_eo"]
ABLATION_VARIANTS = [
    ("EAGNN", {}),
    ("w/o L_suff", {"alpha": 0.0}),
    ("w/o L_in", {"beta": 0.0}),
    ("w/o L_se", {"gamma": 0.0}),
]


# -- config ----------------------------------------------------------------


def merge_config(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(config: dict | None = None, command: str | None = None, base_dir=None) -> dict:
    """Fill defaults and normalise every field to its on-disk JSON form.

    Dataset paths are made absolute so the resolved file is location-independent.
    """
    cfg = merge_config(DEFAULTS, config or {})
    if command is not None:
        cfg["command"] = command
    cfg["synth"] = SynthConfig(**cfg["synth"]).to_dict()
    cfg["train"] = TrainConfig.from_dict(cfg["train"]).to_dict()
    cfg["seeds"] = [int(s) for s in cfg["seeds"]]
    cfg["ratios"] = [float(r) for r in cfg["ratios"]]
    if cfg.get("dataset") is not None:
        cfg["dataset"] = DatasetSpec.from_dict(cfg["dataset"], base_dir).to_dict()
    if cfg.get("datasets"):
        cfg["datasets"] = {name: DatasetSpec.from_dict(d, base_dir).to_dict()
                           for name, d in cfg["datasets"].items()}
    # round-trip through JSON so tuples and numpy scalars take their file form
    return json.loads(json.dumps(cfg, sort_keys=True))


def _write_resolved(cfg: dict, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def write_csv(path, rows: list[dict], columns: list[str]):
    """Write ``rows`` with a fixed header; floats use ``repr`` for exact round-trips."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- graphs for a run --------------------------------------------------------


def _spec(d: dict) -> DatasetSpec:
    names = {f.name for f in fields(DatasetSpec)}
    return DatasetSpec(**{k: v for k, v in d.items() if k in names})


def _raw_graph(cfg: dict, seed: int) -> tuple[Graph, bool]:
    """Unstandardised graph for run ``seed`` and whether it should be standardised."""
    if cfg.get("dataset") is not None:
        spec = _spec(cfg["dataset"])
        g = load_graph(DatasetSpec(**{**spec.to_dict(), "standardize": False}))
        return g, spec.standardize
    synth = dict(cfg["synth"])
    synth["seed"] = int(synth["seed"]) + seed
    return generate(SynthConfig(**synth)), True


def _prepared(cfg: dict, seed: int, masks: SplitMasks | None = None):
    g, std = _raw_graph(cfg, seed)
    if masks is None:
        masks = split(g, cfg["ratios"], seed=seed)
    if std:
        bound = cfg["dataset"].get("feature_bound", 10.0) if cfg.get("dataset") else 10.0
        g = standardize(g, masks.train, bound)
    return g, masks


def _run_one(cfg: dict, seed: int, train_overrides: dict, baseline: bool = False):
    g, masks = _prepared(cfg, seed)
    tcfg = TrainConfig.from_dict({**cfg["train"], **train_overrides, "seed": seed})
    fn = train_baseline if baseline else train_eagnn
    model, hist = fn(g, masks, tcfg)
    return model, hist, masks


def _run_metrics(job):
    cfg, seed, overrides, baseline = job
    _, hist, _ = _run_one(cfg, seed, overrides, baseline)
    return hist.test.to_dict()


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


# -- commands ----------------------------------------------------------------


def dataset_stats(g: Graph, name: str = "") -> dict:
    return {
        "dataset": name,
        "nodes": g.n,
        "attributes": g.feature_dim,
        "edges": g.n_edges,
        "homophily": social_homophily(g),
        "avg_degree": average_degree(g),
        "density": graph_density(g),
    }


def cmd_stats(cfg: dict, out) -> list[dict]:
    """One row per dataset: nodes, attributes, edges, homophily, avg degree, density."""
    out = Path(out)
    _write_resolved(cfg, out)
    datasets = dict(cfg.get("datasets") or {})
    if cfg.get("dataset") is not None:
        datasets[cfg["dataset"].get("name") or "dataset"] = cfg["dataset"]
    rows = []
    if datasets:
        for name in sorted(datasets):
            spec = _spec(datasets[name])
            try:
                g = load_graph(DatasetSpec(**{**spec.to_dict(), "standardize": False}))
            except Exception as exc:
                raise type(exc)(f"{name} ({spec.node_file}): {exc}") from exc
            rows.append(dataset_stats(g, name))
    else:
        for seed in cfg["seeds"]:
            g, _ = _raw_graph(cfg, seed)
            rows.append(dataset_stats(g, f"synth-seed{int(cfg['synth']['seed']) + seed}"))
    write_csv(out / "stats.csv", rows, STATS_COLUMNS)
    return rows


def cmd_synth(cfg: dict, out) -> Graph:
    """Draw one synthetic graph (seed ``synth.seed + seeds[0]``) and write it with its split."""
    out = Path(out)
    _write_resolved(cfg, out)
    seed = cfg["seeds"][0]
    g, _ = _raw_graph({**cfg, "dataset": None}, seed)
    save_graph(g, out / "nodes.csv", out / "edges.txt")
    save_split(split(g, cfg["ratios"], seed=seed), out / "split.json")
    write_csv(out / "stats.csv", [dataset_stats(g, f"synth-seed{int(cfg['synth']['seed']) + seed}")],
              STATS_COLUMNS)
    return g


def cmd_train(cfg: dict, out) -> dict:
    """Train one model (first seed); write metrics, history, checkpoint and split."""
    out = Path(out)
    _write_resolved(cfg, out)
    seed = cfg["seeds"][0]
    model, hist, masks = _run_one(cfg, seed, {}, baseline=cfg["model"] == "baseline")
    save_checkpoint(model, out / "checkpoint.json")
    save_split(masks, out / "split.json")
    hist.write(out / "history.jsonl")
    metrics = hist.test.to_dict()
    metrics["best_epoch"] = hist.best_epoch
    _write_json(out / "metrics.json", metrics)
    return metrics


def cmd_eval(cfg: dict, out) -> dict:
    """Evaluate ``cfg["checkpoint"]`` on the test nodes of ``cfg["split"]``."""
    out = Path(out)
    _write_resolved(cfg, out)
    if not cfg.get("checkpoint") or not cfg.get("split"):
        raise ValueError("eval needs 'checkpoint' and 'split' paths")
    masks = load_split(cfg["split"])
    seed = cfg["seeds"][0] if masks.seed is None else int(masks.seed)
    g, masks = _prepared(cfg, seed, masks)
    model = load_checkpoint(cfg["checkpoint"])
    metrics = evaluate(model, g, masks.test, seed=seed).to_dict()
    _write_json(out / "metrics.json", metrics)
    return metrics


def _summary(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "median": float(np.median(a))}


def cmd_ablation(cfg: dict, out) -> list[dict]:
    """Full model and the three single-constraint removals, aggregated over seeds.

    Writes ``ablation.csv`` (4 rows, ``mean±std`` columns plus numeric
    mean/std/median) and ``ablation_runs.csv`` (one row per variant and seed).
    """
    out = Path(out)
    if len(cfg["seeds"]) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    _write_resolved(cfg, out)
    jobs = [(cfg, seed, over, False) for _, over in ABLATION_VARIANTS for seed in cfg["seeds"]]
    results = _map(_run_metrics, jobs, cfg["workers"])
    runs = []
    for (name, _), chunk in zip(ABLATION_VARIANTS, _chunks(results, len(cfg["seeds"]))):
        for seed, m in zip(cfg["seeds"], chunk):
            runs.append({"variant": name, "seed": seed, **{c: m[c] for c in METRIC_COLUMNS}})
    rows = []
    for name, _ in ABLATION_VARIANTS:
        sub = [r for r in runs if r["variant"] == name]
        row = {"variant": name, "n_seeds": len(sub)}
        for c in METRIC_COLUMNS:
            st = _summary([r[c] for r in sub])
            row[c] = f"{st['mean']:.4f}±{st['std']:.4f}"
            row.update({f"{c}_{k}": v for k, v in st.items()})
        rows.append(row)
    cols = ["variant", "n_seeds", *METRIC_COLUMNS,
            *[f"{c}_{k}" for c in METRIC_COLUMNS for k in ("mean", "std", "median")]]
    write_csv(out / "ablation.csv", rows, cols)
    write_csv(out / "ablation_runs.csv", runs, ["variant", "seed", *METRIC_COLUMNS])
    return rows


def _chunks(seq, k):
    return [seq[i : i + k] for i in range(0, len(seq), k)]


def cmd_sweep(cfg: dict, out) -> list[dict]:
    """Sensitivity sweep over ``alpha`` or the ``beta`` x ``gamma`` grid.

    ``sweep.grid`` lists the values; for ``beta_gamma_grid`` every
    (beta, gamma) pair of the grid is run, and ``sweep.gamma_grid`` may give
    a separate gamma axis. One CSV row per grid point and seed.
    """
    out = Path(out)
    sw = cfg["sweep"]
    param, grid = sw["param"], [float(v) for v in sw["grid"]]
    if not grid:
        raise ValueError("sweep grid is empty")
    if param == "alpha":
        points = [{"alpha": a} for a in grid]
    elif param == "beta_gamma_grid":
        gammas = [float(v) for v in sw.get("gamma_grid") or grid]
        points = [{"beta": b, "gamma": c} for b in grid for c in gammas]
    else:
        raise ValueError("sweep param must be 'alpha' or 'beta_gamma_grid'")
    _write_resolved(cfg, out)
    keys = sorted(points[0])
    jobs = [(cfg, seed, p, False) for p in points for seed in cfg["seeds"]]
    results = _map(_run_metrics, jobs, cfg["workers"])
    rows = [{**job[2], "seed": job[1], **{c: m[c] for c in METRIC_COLUMNS}}
            for job, m in zip(jobs, results)]
    rows.sort(key=lambda r: (*[r[k] for k in keys], r["seed"]))
    write_csv(out / "sweep.csv", rows, [*keys, "seed", *METRIC_COLUMNS])
    if cfg.get("svg"):
        med = {}
        for r in rows:
            med.setdefault(tuple(r[k] for k in keys), []).append(r["delta_sp"])
        med = {k: float(np.median(v)) for k, v in med.items()}
        if param == "alpha":
            xs = sorted(med)
            svg = svg_line_chart([x[0] for x in xs], {"median delta SP": [med[x] for x in xs]},
                                 xlabel="alpha", ylabel="delta SP")
        else:
            bs = sorted({k[0] for k in med})
            gs = sorted({k[1] for k in med})
            svg = svg_heatmap(bs, gs, [[med[(b, c)] for c in gs] for b in bs],
                              xlabel="gamma", ylabel="beta")
        (out / "sweep.svg").write_text(svg)
    return rows


def random_weight(rows: int, dim: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, rows, dim])
    return scale * rng.standard_normal((rows, dim)) / math.sqrt(dim)


def cmd_concentration(cfg: dict, out) -> list[dict]:
    """Monte Carlo tail vs. Hoeffding bound for every (feature dim, degree) pair.

    ``concentration.weight`` may give an explicit matrix (single ``dims``
    entry matching its columns); otherwise a Gaussian matrix with
    ``weight_rows`` rows is drawn per dimension.
    """
    out = Path(out)
    _write_resolved(cfg, out)
    cc = cfg["concentration"]
    rows = []
    for dim in cc["dims"]:
        synth = {**cfg["synth"], "feature_dim": int(dim), "label_dims": 0}
        scfg = SynthConfig(**synth)
        if cc.get("weight") is not None:
            w = np.asarray(cc["weight"], dtype=np.float64)
        else:
            w = random_weight(int(cc["weight_rows"]), int(dim), float(cc["weight_scale"]),
                              int(cc["weight_seed"]))
        for deg in cc["degrees"]:
            rep = theorem1_sample(scfg, w, trials=int(cc["trials"]), t_grid=cc["t_grid"],
                                  degree=int(deg), rng_seed=int(cc["rng_seed"]) + 1000 * int(dim) + int(deg))
            rows.extend(rep.rows())
    cols = ["feature_dim", "degree", "t", "exceedance", "bound", "std_error", "rho", "trials", "passed"]
    write_csv(out / "concentration.csv", rows, cols)
    _write_json(out / "summary.json", {"all_passed": all(r["passed"] for r in rows), "rows": len(rows)})
    if cfg.get("svg"):
        series = {}
        for r in rows:
            lab = f"l={r['feature_dim']} deg={r['degree']}"
            series.setdefault(lab + " empirical", []).append(r["exceedance"])
            series.setdefault(lab + " bound", []).append(min(r["bound"], 1.0))
        (out / "concentration.svg").write_text(
            svg_line_chart(list(cc["t_grid"]), series, xlabel="t", ylabel="P(dev >= t)"))
    return rows


COMMANDS = {
    "stats": cmd_stats,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablation,
    "sweep": cmd_sweep,
    "concentration": cmd_concentration,
}


# -- SVG -------------------------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def svg_line_chart(xs, series: dict, xlabel: str = "", ylabel: str = "",
                   width: int = 480, height: int = 320) -> str:
    """Minimal standalone SVG line chart, one polyline per series."""
    pad = 50
    ys = [v for vals in series.values() for v in vals]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys + [0.0]), max(ys + [0.0])
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
             f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
             f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
             f'text-anchor="middle">{ylabel}</text>']
    for k, (name, vals) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_heatmap(rows, cols, values, xlabel: str = "", ylabel: str = "", cell: int = 40) -> str:
    """Grid of shaded cells; darker means larger."""
    flat = [v for r in values for v in r]
    lo, hi = min(flat), max(flat)
    span = hi - lo if hi > lo else 1.0
    pad = 50
    w, h = pad + cell * len(cols) + 10, pad + cell * len(rows) + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>']
    for i, r in enumerate(rows):
        parts.append(f'<text x="4" y="{pad + cell * i + cell / 2}" font-size="10">{r:g}</text>')
        for j, _ in enumerate(cols):
            shade = int(255 - 200 * (values[i][j] - lo) / span)
            parts.append(f'<rect x="{pad + cell * j}" y="{pad + cell * i}" width="{cell}" height="{cell}" '
                         f'fill="rgb({shade},{shade},255)"/>')
    for j, c in enumerate(cols):
        parts.append(f'<text x="{pad + cell * j + 4}" y="{pad - 6}" font-size="10">{c:g}</text>')
    parts.append(f'<text x="{pad}" y="{h - 8}" font-size="11">{ylabel} (rows) x {xlabel} (columns)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
