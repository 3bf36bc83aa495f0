"""Reading node tables and edge lists, stratified splits, standardisation."""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .graph import Graph

__all__ = [
    "DatasetSpec",
    "SplitMasks",
    "DataFormatError",
    "load_graph",
    "save_graph",
    "read_edges",
    "split",
    "standardize",
    "save_split",
    "load_split",
    "resolve_path",
]

LABEL_COLUMN = "label"
SENSITIVE_COLUMN = "sensitive"


class DataFormatError(ValueError):
    pass


@dataclass
class DatasetSpec:
    """Where a dataset lives and how to encode its columns.

    ``sensitive_threshold`` / ``label_threshold`` binarise numeric columns as
    ``value >= threshold``; ``sensitive_map`` / ``label_map`` map raw values
    (compared as strings) to 0/1.
    """

    node_file: str
    edge_file: str
    sensitive_column: str = SENSITIVE_COLUMN
    label_column: str = LABEL_COLUMN
    drop_columns: list = field(default_factory=list)
    standardize: bool = True
    sensitive_threshold: float | None = None
    sensitive_map: dict | None = None
    label_threshold: float | None = None
    label_map: dict | None = None
    feature_bound: float = 10.0
    name: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "DatasetSpec":
        d = dict(d)
        for key in ("node_file", "edge_file"):
            d[key] = str(resolve_path(d[key], base))
        return cls(**d)


def resolve_path(path, base: Path | None = None) -> Path:
    """Absolute paths pass through; relative ones are tried against ``base``
    and then ``$FAIRGRAPH_DATA_DIR``."""
    p = Path(path)
    if p.is_absolute():
        return p
    candidates = []
    if base is not None:
        candidates.append(Path(base) / p)
    candidates.append(p)
    env = os.environ.get("FAIRGRAPH_DATA_DIR")
    if env:
        candidates.append(Path(env) / p)
    for c in candidates:
        if c.exists():
            return c.resolve()
    return candidates[0]


@dataclass
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int | None = None
    ratios: tuple = (0.5, 0.25, 0.25)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitMasks":
        arr = lambda k: np.asarray(d[k], dtype=np.int64)  # noqa: E731
        return cls(arr("train"), arr("val"), arr("test"), d.get("seed"), tuple(d["ratios"]))


def _encode_binary(col: pd.Series, name: str, threshold=None, mapping=None) -> np.ndarray:
    if mapping is not None:
        mapped = col.astype(str).map({str(k): v for k, v in mapping.items()})
        bad = col[mapped.isna()].unique()
        if len(bad):
            raise DataFormatError(f"column {name!r} has unmapped values: {sorted(map(str, bad))[:10]}")
        values = mapped.to_numpy()
    elif threshold is not None:
        values = (pd.to_numeric(col, errors="raise") >= threshold).to_numpy()
    else:
        values = pd.to_numeric(col, errors="coerce").to_numpy()
    values = np.asarray(values, dtype=np.float64)
    ok = np.isin(values, (0.0, 1.0))
    if not ok.all():
        bad = np.unique(col.to_numpy()[~ok])
        raise DataFormatError(f"column {name!r} is not binary; offending values: {bad[:10].tolist()}")
    return values.astype(np.int64)


def read_edges(path, n: int | None = None) -> np.ndarray:
    """Parse a two-column edge list (``src dst`` or ``src,dst`` per line)."""
    text = Path(path).read_text()
    tokens = text.replace(",", " ").split()
    try:
        flat = np.array(tokens, dtype=np.int64)
    except ValueError:
        flat = None
    lines = None
    if flat is None or len(flat) % 2:
        lines = [ln for ln in text.splitlines()]
        for lineno, ln in enumerate(lines, start=1):
            parts = ln.replace(",", " ").split()
            if not parts:
                continue
            if len(parts) != 2 or not all(p.lstrip("-").isdigit() for p in parts):
                raise DataFormatError(f"{path}:{lineno}: expected two integer ids, got {ln!r}")
        raise DataFormatError(f"{path}: malformed edge list")
    edges = flat.reshape(-1, 2)
    if n is not None:
        bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))
        if len(bad):
            lineno = _line_of(text, int(bad[0]))
            raise DataFormatError(
                f"{path}:{lineno}: edge {edges[bad[0]].tolist()} references a node outside [0, {n})"
            )
    return edges


def _line_of(text: str, k: int) -> int:
    seen = -1
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if ln.strip():
            seen += 1
            if seen == k:
                return lineno
    return -1


def standardize(g: Graph, train_index=None, bound: float = 10.0) -> Graph:
    """Zero-mean / unit-variance columns from ``train_index`` rows, clipped to ``[-bound, bound]``."""
    x = g.features
    ref = x if train_index is None else x[np.asarray(train_index, dtype=np.int64)]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    z = np.clip((x - mean) / std, -bound, bound)
    return g.with_features(z)


def load_graph(spec: DatasetSpec, train_index=None) -> Graph:
    """Read a dataset; with ``spec.standardize`` the features are standardised
    using ``train_index`` rows (all rows when None)."""
    node_path = Path(spec.node_file)
    if not node_path.exists():
        raise FileNotFoundError(node_path)
    df = pd.read_csv(node_path, float_precision="round_trip")
    for col in (spec.sensitive_column, spec.label_column):
        if col not in df.columns:
            raise DataFormatError(f"{node_path}: column {col!r} not in header")
    n_rows = len(df)
    drop = {spec.sensitive_column, spec.label_column, *spec.drop_columns}
    keep = ~df[[c for c in df.columns if c not in spec.drop_columns]].isna().any(axis=1).to_numpy()
    kept = df[keep]
    s = _encode_binary(kept[spec.sensitive_column], spec.sensitive_column,
                       spec.sensitive_threshold, spec.sensitive_map)
    y = _encode_binary(kept[spec.label_column], spec.label_column, spec.label_threshold, spec.label_map)
    feats = kept[[c for c in df.columns if c not in drop]].apply(pd.to_numeric, errors="raise")
    edges = read_edges(spec.edge_file, n=n_rows)
    if not keep.all():
        # rows with missing values are rejected together with their edges
        remap = np.full(n_rows, -1, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        edges = remap[edges]
        edges = edges[(edges >= 0).all(axis=1)]
    g = Graph(feats.to_numpy(dtype=np.float64), y, s, edges)
    if spec.standardize:
        g = standardize(g, train_index, spec.feature_bound)
    return g


def save_graph(g: Graph, node_file, edge_file):
    """Write ``g`` in the format :func:`load_graph` reads (lossless floats)."""
    cols = {f"x{k}": g.features[:, k] for k in range(g.feature_dim)}
    df = pd.DataFrame(cols)
    df[LABEL_COLUMN] = g.labels
    df[SENSITIVE_COLUMN] = g.sensitive
    df.to_csv(node_file, index=False, float_format="%.17g")
    np.savetxt(edge_file, g.edges, fmt="%d")


def split(g: Graph, ratios=(0.5, 0.25, 0.25), seed: int = 0, labeled=None) -> SplitMasks:
    """Stratified train/val/test split over (label, sensitive) cells.

    Split sizes are exact (largest-remainder rounding of ``n * ratio``) and
    each cell is divided as close to ``ratios`` as integer counts allow.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0) or not np.isclose(ratios.sum(), 1.0):
        raise ValueError("ratios must be three positive fractions summing to 1")
    pool = np.arange(g.n) if labeled is None else np.asarray(labeled, dtype=np.int64)
    rng = np.random.default_rng(seed)
    totals = _largest_remainder(len(pool) * ratios, len(pool))
    cell_of = 2 * g.labels[pool] + g.sensitive[pool]
    cells = [pool[cell_of == c] for c in range(4)]
    for c, members in enumerate(cells):
        if 0 < len(members) < 3:
            warnings.warn(f"cell {c} has only {len(members)} members; stratification not guaranteed",
                          RuntimeWarning, stacklevel=2)
    quota = np.array([len(m) * ratios for m in cells])
    alloc = np.floor(quota).astype(np.int64)
    remaining = totals - alloc.sum(axis=0)
    frac = quota - alloc
    order = np.argsort(-frac, axis=None, kind="stable")
    need = np.array([len(m) for m in cells]) - alloc.sum(axis=1)
    for flat in order:
        c, k = divmod(int(flat), 3)
        if need[c] > 0 and remaining[k] > 0:
            alloc[c, k] += 1
            need[c] -= 1
            remaining[k] -= 1
    for c in range(4):
        while need[c] > 0:
            k = int(np.argmax(remaining))
            alloc[c, k] += 1
            need[c] -= 1
            remaining[k] -= 1
    parts = [[], [], []]
    for c, members in enumerate(cells):
        perm = rng.permutation(members)
        a, b = alloc[c, 0], alloc[c, 0] + alloc[c, 1]
        parts[0].append(perm[:a])
        parts[1].append(perm[a:b])
        parts[2].append(perm[b:])
    arrays = [np.sort(np.concatenate(p)).astype(np.int64) for p in parts]
    return SplitMasks(*arrays, seed=seed, ratios=tuple(float(r) for r in ratios))


def _largest_remainder(quota: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(quota).astype(np.int64)
    short = total - base.sum()
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:short]] += 1
    return base


def save_split(masks: SplitMasks, path):
    Path(path).write_text(json.dumps(masks.to_dict()))


def load_split(path) -> SplitMasks:
    return SplitMasks.from_dict(json.loads(Path(path).read_text()))
