"""Synthetic attributed graphs with controllable social homophily.

Nodes get a group ``s ~ Bernoulli(group_fraction)`` and a label drawn from
the group-conditional positive rate. Features are truncated Gaussians around
the group mean; the first ``label_dims`` coordinates are additionally shifted
by ``+/- label_signal`` according to the label, so the label is learnable
from the node's own attributes while the group is visible through both the
attributes and (under homophily) the neighbourhood.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .graph import Graph

__all__ = [
    "SynthConfig",
    "InfeasibleConfigError",
    "generate",
    "make_shaped_graph",
    "TailReport",
    "theorem1_sample",
    "hoeffding_bound",
    "truncated_mean",
]


class InfeasibleConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n: int = 2000
    group_fraction: float = 0.5
    target_homophily: float = 0.9
    avg_degree: float = 10.0
    feature_dim: int = 8
    group_means: list | None = None
    group_shift: float = 0.5
    feature_std: float = 1.0
    feature_bound: float = 3.0
    label_bias: float = 0.4
    base_positive_rate: float = 0.3
    label_signal: float = 0.7
    label_dims: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.group_fraction < 1.0:
            raise ValueError("group_fraction must lie in (0, 1)")
        if not 0.0 <= self.target_homophily <= 1.0:
            raise ValueError("target_homophily must lie in [0, 1]")
        if self.avg_degree < 1:
            raise ValueError("avg_degree must be >= 1")
        if self.feature_bound <= 0 or self.feature_std <= 0:
            raise ValueError("feature_bound and feature_std must be positive")
        p1 = self.base_positive_rate + self.label_bias
        if not (0.0 <= self.base_positive_rate <= 1.0 and 0.0 <= p1 <= 1.0):
            raise ValueError("implied positive rates must lie in [0, 1]")
        if not 0 <= self.label_dims <= self.feature_dim:
            raise ValueError("label_dims must not exceed feature_dim")

    def means(self) -> np.ndarray:
        """Group mean vectors as a ``(2, feature_dim)`` array."""
        if self.group_means is not None:
            mu = np.asarray(self.group_means, dtype=np.float64)
            if mu.shape != (2, self.feature_dim):
                raise ValueError("group_means must be two vectors of length feature_dim")
            return mu
        mu = np.zeros((2, self.feature_dim))
        mu[0, self.label_dims :] = -self.group_shift
        mu[1, self.label_dims :] = self.group_shift
        return mu

    def to_dict(self) -> dict:
        return asdict(self)


def _truncnorm(rng, loc, scale, bound, size=None):
    loc = np.asarray(loc, dtype=np.float64)
    a = (-bound - loc) / scale
    b = (bound - loc) / scale
    return truncnorm.rvs(a, b, loc=loc, scale=scale, size=size, random_state=rng)


def truncated_mean(loc, scale: float, bound: float) -> np.ndarray:
    loc = np.asarray(loc, dtype=np.float64)
    return truncnorm.mean((-bound - loc) / scale, (bound - loc) / scale, loc=loc, scale=scale)


def _pair_stubs(rng, degrees, groups, homophily):
    pools = [[], []]
    for g in (0, 1):
        members = np.flatnonzero(groups == g)
        stubs = np.repeat(members, degrees[members])
        rng.shuffle(stubs)
        pools[g] = stubs.tolist()
    total = len(pools[0]) + len(pools[1])
    seen = set()
    edges = []
    dropped = 0
    while True:
        n0, n1 = len(pools[0]), len(pools[1])
        if n0 + n1 < 2:
            dropped += n0 + n1
            break
        g = 0 if rng.random() * (n0 + n1) < n0 else 1
        u = pools[g].pop()
        same = rng.random() < homophily
        partner = g if same else 1 - g
        pool = pools[partner]
        if not pool:
            # the requested side is exhausted: leftover stubs are dropped
            dropped += 1
            continue
        v = None
        for _ in range(8):
            k = int(rng.integers(len(pool)))
            cand = pool[k]
            key = (min(u, cand), max(u, cand))
            if cand != u and key not in seen:
                pool[k] = pool[-1]
                pool.pop()
                v = cand
                seen.add(key)
                break
        if v is None:
            dropped += 1
            continue
        edges.append((u, v))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2), dropped / max(total, 1)


def generate(cfg: SynthConfig) -> Graph:
    """Draw a graph from ``cfg``; bit-identical for a fixed ``cfg.seed``."""
    if cfg.avg_degree >= cfg.n:
        raise InfeasibleConfigError("avg_degree must be smaller than n")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    s = (rng.random(n) < cfg.group_fraction).astype(np.int64)
    if s.sum() in (0, n):
        raise InfeasibleConfigError("infeasible homophily target: a group is empty")
    rates = np.array([cfg.base_positive_rate, cfg.base_positive_rate + cfg.label_bias])
    y = (rng.random(n) < rates[s]).astype(np.int64)

    mu = cfg.means()[s]
    if cfg.label_dims:
        mu[:, : cfg.label_dims] += cfg.label_signal * (2 * y[:, None] - 1)
    x = _truncnorm(rng, mu, cfg.feature_std, cfg.feature_bound)

    degrees = np.maximum(rng.poisson(cfg.avg_degree, size=n), 1)
    edges, dropped = _pair_stubs(rng, degrees, s, cfg.target_homophily)
    if dropped > 0.1:
        raise InfeasibleConfigError(
            f"infeasible homophily target: {dropped:.1%} of degree budget could not be paired"
        )
    return Graph(x, y, s, edges)


def _sample_unique_pairs(rng, left, right, count, exclude: set | None, n):
    """``count`` distinct unordered pairs with one end in ``left`` and one in ``right``."""
    keys = np.zeros(0, dtype=np.int64)
    while len(keys) < count:
        need = int((count - len(keys)) * 1.2) + 16
        a = left[rng.integers(len(left), size=need)]
        b = right[rng.integers(len(right), size=need)]
        ok = a != b
        lo, hi = np.minimum(a[ok], b[ok]), np.maximum(a[ok], b[ok])
        new = lo * n + hi
        keys = np.unique(np.concatenate([keys, new]))
    rng.shuffle(keys)
    keys = np.sort(keys[:count])
    return np.stack([keys // n, keys % n], axis=1)


def make_shaped_graph(n: int, n_edges: int, homophily: float, feature_dim: int = 2,
                      group_fraction: float = 0.5, seed: int = 0) -> Graph:
    """Graph with exactly ``n_edges`` undirected edges and homophily ``round(h*m)/m``.

    Used to build files with the node/edge counts of a named benchmark when the
    real data is not at hand.
    """
    rng = np.random.default_rng(seed)
    n1 = int(round(group_fraction * n))
    s = np.zeros(n, dtype=np.int64)
    s[rng.permutation(n)[:n1]] = 1
    groups = [np.flatnonzero(s == 0), np.flatnonzero(s == 1)]
    n_same = int(round(homophily * n_edges))
    n_cross = n_edges - n_same
    w = np.array([len(g) * (len(g) - 1) / 2 for g in groups], dtype=np.float64)
    same0 = int(round(n_same * w[0] / w.sum()))
    parts = [
        _sample_unique_pairs(rng, groups[0], groups[0], same0, None, n),
        _sample_unique_pairs(rng, groups[1], groups[1], n_same - same0, None, n),
        _sample_unique_pairs(rng, groups[0], groups[1], n_cross, None, n),
    ]
    edges = np.concatenate(parts)
    x = rng.standard_normal((n, feature_dim))
    y = (rng.random(n) < 0.5).astype(np.int64)
    return Graph(x, y, s, edges)


def hoeffding_bound(t, degree: int, rho: float, bound: float, dim: int) -> np.ndarray:
    """``2 l exp(-deg t^2 / (2 rho^2 B^2 l))`` evaluated on ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if rho == 0:
        return np.where(t > 0, 0.0, 2.0 * dim)
    return 2.0 * dim * np.exp(-degree * t**2 / (2.0 * rho**2 * bound**2 * dim))


@dataclass
class TailReport:
    t_grid: np.ndarray
    exceedance: np.ndarray
    bound: np.ndarray
    std_error: np.ndarray
    degree: int
    rho: float
    trials: int
    feature_dim: int
    passed: np.ndarray = field(init=False)

    def __post_init__(self):
        self.passed = self.exceedance <= self.bound + 3.0 * self.std_error

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    def rows(self) -> list[dict]:
        return [
            {
                "t": float(t),
                "exceedance": float(e),
                "bound": float(b),
                "std_error": float(se),
                "degree": self.degree,
                "feature_dim": self.feature_dim,
                "rho": self.rho,
                "trials": self.trials,
                "passed": bool(p),
            }
            for t, e, b, se, p in zip(self.t_grid, self.exceedance, self.bound, self.std_error, self.passed)
        ]


def theorem1_sample(cfg: SynthConfig, weight, trials: int = 10_000, t_grid=(0.1, 0.2, 0.4),
                    degree: int | None = None, rng_seed: int | None = None) -> TailReport:
    """Monte Carlo tail of ``||W mean(x_nbr) - E[.]||_2`` against the Hoeffding bound.

    The focal node's neighbour groups are fixed once (drawn with the
    configured homophily, or read off a generated graph when ``degree`` is
    None); neighbour features are then resampled ``trials`` times. Only the
    group-mean feature model is used (no label shift), matching the bounded
    independent-feature assumption.
    """
    from .model import spectral_norm

    if trials < 1000:
        raise ValueError("trials must be >= 1000 for a 3-sigma binomial check")
    w = np.asarray(weight, dtype=np.float64)
    dim = cfg.feature_dim
    if w.ndim != 2 or w.shape[1] != dim:
        raise ValueError("weight must have feature_dim columns")
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    if degree is None:
        g = generate(cfg)
        focal = int(np.argmax(g.degree))
        nbr_groups = g.sensitive[g.neighbor_index.neighbors(focal)]
        degree = len(nbr_groups)
        if degree < 1:
            raise InfeasibleConfigError("focal node has no neighbours")
    else:
        own = int(rng.random() < cfg.group_fraction)
        same = rng.random(degree) < cfg.target_homophily
        nbr_groups = np.where(same, own, 1 - own)

    mu = cfg.means()[nbr_groups]
    expected_x = truncated_mean(mu, cfg.feature_std, cfg.feature_bound).mean(axis=0)
    expected_h = w @ expected_x
    rho = spectral_norm(w)

    dev = np.empty(trials)
    chunk = max(1, 200_000 // (degree * dim))
    for start in range(0, trials, chunk):
        k = min(chunk, trials - start)
        x = _truncnorm(rng, np.broadcast_to(mu, (k, degree, dim)), cfg.feature_std,
                       cfg.feature_bound, size=(k, degree, dim))
        h = x.mean(axis=1) @ w.T
        dev[start : start + k] = np.linalg.norm(h - expected_h, axis=1)

    t = np.asarray(t_grid, dtype=np.float64)
    exceed = (dev[None, :] >= t[:, None]).mean(axis=1)
    se = np.sqrt(np.maximum(exceed * (1 - exceed), 1.0 / trials) / trials)
    return TailReport(t, exceed, hoeffding_bound(t, degree, rho, cfg.feature_bound, dim), se,
                      degree, float(rho), trials, dim)
