"""Prediction intervals: split conformal, Poisson parametric, and the
forest-on-residuals methods (temporal-only and graph-pooled).

The graph method follows a per-node loop: pool the signed residual
histories of the node's neighborhood N(j), build lagged features (the
freshest ``window`` residuals, newest first) with the next residual as
target, fit a quantile forest, and set the interval to the point forecast
plus the forest's (alpha/2, 1 - alpha/2) residual quantiles.  The temporal
method is the same code path with the neighborhood forced to {j}; on an
edgeless graph the two are bit-identical.

Vanilla split conformal uses absolute residuals and the finite-sample rank
ceil((1 - alpha) (n + 1)); Poisson intervals are equal-tail discrete
quantiles of Poisson(rate).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    AlignmentError,
    DimensionMismatch,
    InsufficientHistory,
    UnknownMethod,
)
from .model import ModelParams, intensity
from .panel import DataSplit, PanelDataset, ServiceGraph
from .qrf import FittedForest, ForestConfig, fit_forest

__all__ = [
    "METHODS",
    "ResidualHistory",
    "IntervalSeries",
    "vanilla_cp",
    "poisson_interval",
    "build_qrf_training_set",
    "graph_cp_step",
    "run_conformal",
    "read_interval_series",
]

METHODS = ("poisson", "vanilla", "temporal", "graph")


class ResidualHistory:
    """Per-node ring buffers of signed residuals, capped at ``capacity``.

    ``window`` is the lag order used to build forest features and must be
    strictly smaller than the capacity, otherwise no (feature, target) pair
    ever fits in a full buffer.
    """

    def __init__(self, n_nodes: int, capacity: int, window: int):
        if capacity < 2:
            raise InsufficientHistory(f"capacity must be >= 2, got {capacity}")
        if not 1 <= window < capacity:
            raise InsufficientHistory(
                f"window must satisfy 1 <= window < capacity, got "
                f"window={window}, capacity={capacity}"
            )
        self.capacity = int(capacity)
        self.window = int(window)
        self._buffers = [deque(maxlen=capacity) for _ in range(n_nodes)]

    @property
    def n_nodes(self) -> int:
        return len(self._buffers)

    def append(self, node: int, value: float) -> None:
        self._buffers[node].append(float(value))

    def count(self, node: int) -> int:
        return len(self._buffers[node])

    def values(self, node: int) -> np.ndarray:
        """Residuals oldest to newest."""
        return np.array(self._buffers[node], dtype=np.float64)

    def latest_window(self, node: int) -> np.ndarray:
        """The freshest ``window`` residuals, newest first (the query features)."""
        buf = self._buffers[node]
        if len(buf) < self.window:
            raise InsufficientHistory(
                f"node {node} has {len(buf)} residuals, need {self.window}"
            )
        return np.array([buf[-1 - i] for i in range(self.window)], dtype=np.float64)


@dataclass
class IntervalSeries:
    """Per (node, time) prediction intervals with point forecasts and truths."""

    method: str
    node: np.ndarray
    time: np.ndarray
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y_true: np.ndarray

    def __post_init__(self):
        n = self.node.shape[0]
        for name in ("time", "point", "lower", "upper", "y_true"):
            if getattr(self, name).shape[0] != n:
                raise DimensionMismatch(f"interval column {name} has wrong length")
        if np.any(self.lower > self.upper):
            raise DimensionMismatch("interval with lower > upper")
        if not np.all(np.isfinite(self.point)):
            raise DimensionMismatch("non-finite point forecast")

    def __len__(self) -> int:
        return self.node.shape[0]

    def to_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            handle.write("method,node,time,point,lower,upper,y_true\n")
            for i in range(len(self)):
                handle.write(
                    f"{self.method},{int(self.node[i])},{int(self.time[i])},"
                    f"{float(self.point[i])!r},{float(self.lower[i])!r},"
                    f"{float(self.upper[i])!r},{float(self.y_true[i])!r}\n"
                )


def read_interval_series(path) -> IntervalSeries:
    node, time, point, lower, upper, y_true = [], [], [], [], [], []
    method = None
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        header = handle.readline().strip().split(",")
        if header != ["method", "node", "time", "point", "lower", "upper", "y_true"]:
            raise AlignmentError(f"{path}: unexpected interval header {header}")
        for line in handle:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise AlignmentError(f"{path}: bad interval row {line!r}")
            if method is None:
                method = parts[0]
            elif parts[0] != method:
                raise AlignmentError(f"{path}: mixed methods {method!r} and {parts[0]!r}")
            node.append(int(parts[1]))
            time.append(int(parts[2]))
            point.append(float(parts[3]))
            lower.append(float(parts[4]))
            upper.append(float(parts[5]))
            y_true.append(float(parts[6]))
    if method is None:
        raise AlignmentError(f"{path}: no interval rows")
    return IntervalSeries(
        method=method,
        node=np.array(node, dtype=np.int64),
        time=np.array(time, dtype=np.int64),
        point=np.array(point, dtype=np.float64),
        lower=np.array(lower, dtype=np.float64),
        upper=np.array(upper, dtype=np.float64),
        y_true=np.array(y_true, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# Interval constructions
# --------------------------------------------------------------------------


def vanilla_cp(residuals, alpha: float, point: float):
    """Symmetric split-conformal interval from absolute residuals.

    The half-width is the ceil((1 - alpha)(n + 1))-th smallest absolute
    residual, infinite when that rank exceeds n.
    """
    residuals = np.abs(np.asarray(residuals, dtype=np.float64).ravel())
    n = residuals.shape[0]
    if n < 1:
        raise InsufficientHistory("vanilla interval needs at least one residual")
    if not 0.0 < alpha < 1.0:
        raise DimensionMismatch(f"alpha must lie in (0, 1), got {alpha}")
    # the slack keeps e.g. 0.8 * 5 = 4.000000000000001 from ceiling to 5
    rank = int(math.ceil((1.0 - alpha) * (n + 1) - 1e-9))
    if rank > n:
        half = math.inf
    else:
        half = float(np.partition(residuals, rank - 1)[rank - 1])
    return point - half, point + half


def poisson_interval(rate: float, alpha: float):
    """Equal-tail discrete quantiles of Poisson(rate)."""
    if not 0.0 < alpha < 1.0:
        raise DimensionMismatch(f"alpha must lie in (0, 1), got {alpha}")
    lower = float(stats.poisson.ppf(alpha / 2.0, rate))
    upper = float(stats.poisson.ppf(1.0 - alpha / 2.0, rate))
    return lower, upper


def build_qrf_training_set(history: ResidualHistory, nodes, window: "int | None" = None):
    """Pooled lagged-residual rows over the given nodes.

    Each node with L residuals contributes L - window rows; features are
    ``window`` consecutive residuals ordered newest first, the target is
    the residual immediately after them.
    """
    window = history.window if window is None else int(window)
    features, targets = [], []
    for node in sorted(int(n) for n in nodes):
        series = history.values(node)
        if series.shape[0] < window + 1:
            raise InsufficientHistory(
                f"node {node} has {series.shape[0]} residuals, need {window + 1}"
            )
        lagged = np.lib.stride_tricks.sliding_window_view(series, window)
        features.append(lagged[: series.shape[0] - window, ::-1])
        targets.append(series[window:])
    return np.concatenate(features, axis=0), np.concatenate(targets, axis=0)


def _interval_from_forest(forest: FittedForest, history, node, alpha, point):
    query = history.latest_window(node)
    q_low, q_high = forest.quantile(query, np.array([alpha / 2.0, 1.0 - alpha / 2.0]))
    return point + float(q_low), point + float(q_high)


def graph_cp_step(
    node: int,
    neighbors,
    history: ResidualHistory,
    forest_config: ForestConfig,
    alpha: float,
    point: float,
):
    """One prediction step for one node: fit on N(node), query, widen around point."""
    features, targets = build_qrf_training_set(history, neighbors)
    forest = fit_forest(features, targets, forest_config)
    return _interval_from_forest(forest, history, node, alpha, point)


# --------------------------------------------------------------------------
# Sequential driver
# --------------------------------------------------------------------------


def _derived_forest_config(base: ForestConfig, seed: int, node: int, refit: int):
    child = np.random.SeedSequence([seed, node, refit]).generate_state(1)[0]
    return ForestConfig(
        n_trees=base.n_trees,
        max_depth=base.max_depth,
        min_leaf=base.min_leaf,
        mtry=base.mtry,
        bootstrap=base.bootstrap,
        seed=int(child),
    )


def run_conformal(
    panel: PanelDataset,
    graph: ServiceGraph,
    params: ModelParams,
    data_split: DataSplit,
    method: str,
    alpha: float = 0.1,
    window: int = 20,
    calib_window: "int | None" = None,
    retrain_stride: "int | float | None" = 1,
    forest_config: "ForestConfig | None" = None,
    seed: "int | None" = None,
) -> IntervalSeries:
    """Walk the test range emitting intervals for every node at every step.

    Residual buffers warm up on the last ``calib_window`` calibration steps
    (default: the whole calibration range) and ingest each test residual
    after the step's intervals are emitted.  Forest methods refit every
    ``retrain_stride`` steps (None or inf: fit once).
    """
    if method not in METHODS:
        raise UnknownMethod(f"method {method!r} not in {METHODS}")
    if not 0.0 < alpha < 1.0:
        raise DimensionMismatch(f"alpha must lie in (0, 1), got {alpha}")
    forest_config = forest_config or ForestConfig()
    seed = forest_config.seed if seed is None else int(seed)
    cal_lo, cal_hi = data_split.calibration
    cal_len = cal_hi - cal_lo + 1
    calib_window = cal_len if calib_window is None else int(calib_window)
    if calib_window > cal_len:
        raise InsufficientHistory(
            f"calibration range has {cal_len} steps, cannot warm up {calib_window}"
        )
    if retrain_stride is None or retrain_stride == math.inf:
        stride = None
    else:
        stride = int(retrain_stride)
        if stride < 1:
            raise DimensionMismatch(f"retrain_stride must be >= 1, got {retrain_stride}")

    rates = intensity(panel, graph, params)
    counts = panel.counts
    k = panel.n_nodes

    history = ResidualHistory(k, capacity=calib_window, window=window)
    for t in range(cal_hi - calib_window + 1, cal_hi + 1):
        for node in range(k):
            history.append(node, counts[node, t - 1] - rates[node, t - 1])

    if method == "graph":
        pools = {j: sorted(graph.neighborhood(j)) for j in range(k)}
    else:
        pools = {j: [j] for j in range(k)}

    test_lo, test_hi = data_split.test
    rec_node, rec_time, rec_point, rec_lower, rec_upper, rec_true = [], [], [], [], [], []
    forests: dict[int, FittedForest] = {}
    n_refits = 0
    for step, t in enumerate(range(test_lo, test_hi + 1)):
        if method in ("temporal", "graph"):
            needs_fit = step == 0 if stride is None else step % stride == 0
            if needs_fit:
                for j in range(k):
                    features, targets = build_qrf_training_set(history, pools[j])
                    cfg = _derived_forest_config(forest_config, seed, j, n_refits)
                    forests[j] = fit_forest(features, targets, cfg)
                n_refits += 1
        for j in range(k):
            point = float(rates[j, t - 1])
            if method == "poisson":
                lower, upper = poisson_interval(point, alpha)
            elif method == "vanilla":
                lower, upper = vanilla_cp(history.values(j), alpha, point)
            else:
                lower, upper = _interval_from_forest(forests[j], history, j, alpha, point)
            rec_node.append(j)
            rec_time.append(t)
            rec_point.append(point)
            rec_lower.append(lower)
            rec_upper.append(upper)
            rec_true.append(float(counts[j, t - 1]))
        for j in range(k):
            history.append(j, counts[j, t - 1] - rates[j, t - 1])

    return IntervalSeries(
        method=method,
        node=np.array(rec_node, dtype=np.int64),
        time=np.array(rec_time, dtype=np.int64),
        point=np.array(rec_point, dtype=np.float64),
        lower=np.array(rec_lower, dtype=np.float64),
        upper=np.array(rec_upper, dtype=np.float64),
        y_true=np.array(rec_true, dtype=np.float64),
    )
