"""Quantile regression forest grown from scratch on variance-reduction splits.

Leaves keep the indices of the training rows that fall into them; a query's
conditional quantile is read off the weighted empirical CDF with
Meinshausen weights: average over trees of
``1{training row shares the query's leaf} / |leaf|``.  Quantiles use the
inf-over-atoms definition (smallest retained target whose cumulative
weight reaches the level), with no interpolation.

Determinism: per-tree RNGs derive from the config seed, candidate features
are sampled without replacement, ties in split quality resolve to the
lowest feature index and then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, DimensionMismatch

__all__ = ["ForestConfig", "FittedForest", "fit_forest", "pinball_loss"]

# guards float round-off when cumulative weights land exactly on a level
_LEVEL_SLACK = 1e-9


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: "int | None" = None
    min_leaf: int = 5
    mtry: "int | None" = None  # default ceil(p / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DegenerateData(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            raise DegenerateData(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise DegenerateData(f"max_depth must be >= 0, got {self.max_depth}")
        if self.mtry is not None and self.mtry < 1:
            raise DegenerateData(f"mtry must be >= 1, got {self.mtry}")


@dataclass
class _Tree:
    feature: np.ndarray  # int32, -1 marks a leaf
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    members: list  # per node: original row indices for leaves, None inside

    def leaf_for(self, query: np.ndarray) -> int:
        node = 0
        while self.feature[node] >= 0:
            if query[self.feature[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        return node


@dataclass
class FittedForest:
    trees: list
    targets: np.ndarray  # original training targets
    n_features: int
    config: ForestConfig
    _order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._order = np.argsort(self.targets, kind="stable")

    @property
    def n_samples(self) -> int:
        return self.targets.shape[0]

    def weights(self, query) -> np.ndarray:
        """Meinshausen weights over the training rows; nonnegative, sum to 1."""
        query = np.asarray(query, dtype=np.float64).ravel()
        if query.shape[0] != self.n_features:
            raise DimensionMismatch(
                f"query has {query.shape[0]} features, forest expects {self.n_features}"
            )
        w = np.zeros(self.n_samples)
        per_tree = 1.0 / len(self.trees)
        for tree in self.trees:
            members = tree.members[tree.leaf_for(query)]
            np.add.at(w, members, per_tree / members.shape[0])
        return w

    def quantile(self, query, level):
        """Conditional quantile(s) at one or more levels in (0, 1)."""
        levels = np.atleast_1d(np.asarray(level, dtype=np.float64))
        if np.any(levels <= 0) or np.any(levels >= 1):
            raise DimensionMismatch(f"levels must lie in (0, 1), got {level}")
        w = self.weights(query)
        cum = np.cumsum(w[self._order])
        idx = np.searchsorted(cum, levels - _LEVEL_SLACK, side="left")
        idx = np.minimum(idx, self.n_samples - 1)
        values = self.targets[self._order[idx]]
        return float(values[0]) if np.isscalar(level) or np.ndim(level) == 0 else values

    def to_debug_dict(self) -> dict:
        """Dump tree structure for inspection; layout not stability-guaranteed."""
        return {
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": tree.feature.tolist(),
                    "threshold": tree.threshold.tolist(),
                    "left": tree.left.tolist(),
                    "right": tree.right.tolist(),
                    "leaf_members": [
                        None if m is None else m.tolist() for m in tree.members
                    ],
                }
                for tree in self.trees
            ],
        }


def _best_split(x, rows, y_node, feats, min_leaf):
    """Lowest-SSE axis split; returns (feature, threshold, mask) or None."""
    best = None
    n = y_node.shape[0]
    sizes_l = np.arange(1, n)
    size_ok = (sizes_l >= min_leaf) & (n - sizes_l >= min_leaf)
    for f in feats:
        xv = x[rows, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y_node[order]
        cum = np.cumsum(ys)
        cumsq = np.cumsum(ys * ys)
        total, total_sq = cum[-1], cumsq[-1]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not np.any(valid):
            continue
        sse_l = cumsq[:-1] - cum[:-1] ** 2 / sizes_l
        sse_r = (total_sq - cumsq[:-1]) - (total - cum[:-1]) ** 2 / (n - sizes_l)
        score = np.where(valid, sse_l + sse_r, np.inf)
        pos = int(np.argmin(score))  # first minimum: lowest threshold
        if best is None or score[pos] < best[0]:
            threshold = 0.5 * (xs[pos] + xs[pos + 1])
            best = (score[pos], int(f), threshold)
    if best is None:
        return None
    _, f, threshold = best
    return f, threshold, x[rows, f] <= threshold


def _grow_tree(x, y, orig, config: ForestConfig, mtry: int, rng) -> _Tree:
    feature, threshold, left, right, members = [], [], [], [], []

    def add_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        members.append(None)
        return len(feature) - 1

    stack = [(add_node(), np.arange(x.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        y_node = y[rows]
        depth_ok = config.max_depth is None or depth < config.max_depth
        splittable = depth_ok and rows.shape[0] >= 2 * config.min_leaf
        split = None
        if splittable:
            feats = np.sort(rng.choice(x.shape[1], size=mtry, replace=False))
            split = _best_split(x, rows, y_node, feats, config.min_leaf)
        if split is None:
            members[node] = orig[rows]
            continue
        f, thr, mask = split
        feature[node] = f
        threshold[node] = thr
        left_id, right_id = add_node(), add_node()
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, rows[~mask], depth + 1))
        stack.append((left_id, rows[mask], depth + 1))
    return _Tree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        members=members,
    )


def fit_forest(features, targets, config: "ForestConfig | None" = None) -> FittedForest:
    """Grow the forest; deterministic given ``config.seed``."""
    config = config or ForestConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DegenerateData(
            f"features {x.shape} and targets {y.shape} are not an aligned (n, p) / (n,)"
        )
    n, p = x.shape
    if n == 0:
        raise DegenerateData("empty training set")
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise DegenerateData("features/targets contain NaN or Inf")
    mtry = config.mtry if config.mtry is not None else int(np.ceil(p / 3))
    if mtry > p:
        raise DegenerateData(f"mtry={mtry} exceeds {p} features")

    trees = []
    for child_seed in np.random.SeedSequence(config.seed).spawn(config.n_trees):
        rng = np.random.default_rng(child_seed)
        if config.bootstrap:
            sample = rng.integers(0, n, size=n)
        else:
            sample = np.arange(n)
        trees.append(_grow_tree(x[sample], y[sample], sample, config, mtry, rng))
    return FittedForest(trees=trees, targets=y.copy(), n_features=p, config=config)


def pinball_loss(x, alpha: float):
    """Asymmetric quantile loss: alpha * x for x >= 0, (alpha - 1) * x otherwise."""
    if not 0.0 < alpha < 1.0:
        raise DimensionMismatch(f"alpha must lie in (0, 1), got {alpha}")
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, alpha * x, (alpha - 1.0) * x)
    return float(out) if out.ndim == 0 else out
