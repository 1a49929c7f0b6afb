"""Service-area graph, spatio-temporal panel, and validated CSV ingestion.

Conventions used throughout the package:

* Node ids are the integers ``0 .. K-1``.
* A directed edge ``(src, dst)`` means outages at ``src`` excite the
  intensity at ``dst``.  The influence sources of node ``i`` are
  ``sources(i) = {src : (src, i) in E}`` and the pooling neighborhood is
  ``N(i) = sources(i) | {i}`` (a node always pools with itself).
* Time indices in files and in ``DataSplit`` are 1-based and contiguous;
  in-memory arrays are 0-based, so time ``t`` lives at column ``t - 1``.

File formats (UTF-8, comma separated, decimal points, one header row):

* edge list:   ``src,dst[,weight]``
* weather:     ``unit,time,variable,value``  (long format, dense)
* counts:      ``unit,time,count``
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadFractions,
    DimensionMismatch,
    DuplicateEdge,
    MalformedRow,
    MissingCell,
    NegativeCount,
    NonIntegerCount,
    SymmetricEdgePair,
    UnknownNodeReference,
)

__all__ = [
    "ServiceGraph",
    "PanelDataset",
    "DataSplit",
    "load_graph",
    "write_graph",
    "load_panel",
    "write_panel",
    "split",
]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ServiceGraph:
    """Directed influence graph over K geographical units.

    ``edges`` holds ``(src, dst, weight)`` triples.  Weights are parsed and
    stored but unused by the core algorithms (reserved for weighted-edge
    extensions); they default to 1.0.
    """

    node_ids: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]
    neighbors: tuple[frozenset[int], ...] = field(repr=False)

    @classmethod
    def from_edges(
        cls,
        n_nodes: int,
        edges: "list[tuple] | tuple[tuple, ...]" = (),
    ) -> "ServiceGraph":
        """Validate an edge list and build neighbor sets.

        Raises DuplicateEdge, SymmetricEdgePair, UnknownNodeReference, or
        MalformedRow on contract violations.
        """
        if n_nodes < 1:
            raise MalformedRow(f"need at least one node, got {n_nodes}")
        seen: set[tuple[int, int]] = set()
        norm: list[tuple[int, int, float]] = []
        for edge in edges:
            if len(edge) == 2:
                src, dst = edge
                weight = 1.0
            elif len(edge) == 3:
                src, dst, weight = edge
            else:
                raise MalformedRow(f"edge {edge!r} is not (src, dst[, weight])")
            src, dst = int(src), int(dst)
            weight = float(weight)
            if not (0 <= src < n_nodes) or not (0 <= dst < n_nodes):
                raise UnknownNodeReference(
                    f"edge ({src}, {dst}) references a node outside 0..{n_nodes - 1}"
                )
            if src == dst:
                raise MalformedRow(
                    f"explicit self-loop ({src}, {dst}); self-influence is implicit"
                )
            if not math.isfinite(weight) or weight < 0:
                raise MalformedRow(f"edge ({src}, {dst}) has bad weight {weight!r}")
            if (src, dst) in seen:
                raise DuplicateEdge(f"edge ({src}, {dst}) appears twice")
            if (dst, src) in seen:
                raise SymmetricEdgePair(
                    f"both ({src}, {dst}) and ({dst}, {src}) present"
                )
            seen.add((src, dst))
            norm.append((src, dst, weight))
        nbrs = [{i} for i in range(n_nodes)]
        for src, dst, _ in norm:
            nbrs[dst].add(src)
        return cls(
            node_ids=tuple(range(n_nodes)),
            edges=tuple(norm),
            neighbors=tuple(frozenset(s) for s in nbrs),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def neighborhood(self, node: int) -> frozenset[int]:
        """N(node): influence sources plus the node itself."""
        return self.neighbors[node]

    def edge_pairs(self) -> list[tuple[int, int]]:
        """Sorted (src, dst) pairs; the canonical coupling-parameter order."""
        return sorted((src, dst) for src, dst, _ in self.edges)


@dataclass(frozen=True)
class PanelDataset:
    """Aligned weather tensor (K, T, M) and outage-count matrix (K, T)."""

    weather: np.ndarray
    counts: np.ndarray
    time_step: str = ""

    @classmethod
    def build(
        cls, weather: np.ndarray, counts: np.ndarray, time_step: str = ""
    ) -> "PanelDataset":
        weather = np.asarray(weather, dtype=np.float64)
        counts_arr = np.asarray(counts)
        if weather.ndim != 3:
            raise DimensionMismatch(f"weather must be (K, T, M), got {weather.shape}")
        if counts_arr.ndim != 2:
            raise DimensionMismatch(f"counts must be (K, T), got {counts_arr.shape}")
        if weather.shape[:2] != counts_arr.shape:
            raise DimensionMismatch(
                f"weather {weather.shape[:2]} and counts {counts_arr.shape} "
                "disagree on (K, T)"
            )
        if not np.all(np.isfinite(weather)):
            raise MissingCell("weather tensor contains NaN or Inf")
        if np.issubdtype(counts_arr.dtype, np.floating):
            if not np.all(np.isfinite(counts_arr)):
                raise NonIntegerCount("counts contain NaN or Inf")
            rounded = np.rint(counts_arr)
            if not np.array_equal(rounded, counts_arr):
                raise NonIntegerCount("counts contain non-integral values")
            counts_arr = rounded.astype(np.int64)
        else:
            counts_arr = counts_arr.astype(np.int64)
        if np.any(counts_arr < 0):
            raise NegativeCount("counts contain negative values")
        return cls(
            weather=_readonly(weather.copy()),
            counts=_readonly(counts_arr.copy()),
            time_step=time_step,
        )

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]

    @property
    def n_steps(self) -> int:
        return self.counts.shape[1]

    @property
    def n_vars(self) -> int:
        return self.weather.shape[2]


@dataclass(frozen=True)
class DataSplit:
    """Disjoint contiguous 1-based inclusive time ranges: train < calibration < test."""

    train: tuple[int, int]
    calibration: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self) -> None:
        lo_t, hi_t = self.train
        lo_c, hi_c = self.calibration
        lo_s, hi_s = self.test
        ok = (
            1 <= lo_t <= hi_t
            and hi_t + 1 == lo_c <= hi_c
            and hi_c + 1 == lo_s <= hi_s
        )
        if not ok:
            raise BadFractions(
                f"ranges {self.train}, {self.calibration}, {self.test} are not "
                "ordered, contiguous, 1-based"
            )

    @staticmethod
    def _slice(rng: tuple[int, int]) -> slice:
        return slice(rng[0] - 1, rng[1])

    def train_slice(self) -> slice:
        return self._slice(self.train)

    def calibration_slice(self) -> slice:
        return self._slice(self.calibration)

    def test_slice(self) -> slice:
        return self._slice(self.test)


def split(panel: PanelDataset, fractions: "tuple[float, float, float]") -> DataSplit:
    """Partition 1..T into train/calibration/test by rounded fractions.

    Train and calibration lengths are the half-up-rounded fractions of T;
    the remainder goes to the test range.
    """
    if len(fractions) != 3:
        raise BadFractions(f"need three fractions, got {len(fractions)}")
    f_train, f_cal, f_test = (float(f) for f in fractions)
    if min(f_train, f_cal, f_test) <= 0:
        raise BadFractions("fractions must all be positive")
    if abs(f_train + f_cal + f_test - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {f_train + f_cal + f_test}, not 1")
    t_total = panel.n_steps
    n_train = int(math.floor(f_train * t_total + 0.5))
    n_cal = int(math.floor(f_cal * t_total + 0.5))
    n_test = t_total - n_train - n_cal
    if min(n_train, n_cal, n_test) < 1:
        raise BadFractions(
            f"T={t_total} with fractions {fractions} leaves an empty range"
        )
    return DataSplit(
        train=(1, n_train),
        calibration=(n_train + 1, n_train + n_cal),
        test=(n_train + n_cal + 1, t_total),
    )


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


def _open_rows(path: "str | Path", expected_header: list[str], optional_last: bool = False):
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(f"{path}: empty file, expected header row") from None
        header = [h.strip() for h in header]
        full = expected_header
        short = expected_header[:-1] if optional_last else expected_header
        if header != full and header != short:
            raise MalformedRow(
                f"{path}: header {header} does not match {full}"
                + (f" or {short}" if optional_last else "")
            )
        yield from (row for row in reader if row)


def _parse_int(token: str, what: str, row: list[str], path) -> int:
    try:
        value = int(token)
    except ValueError:
        raise MalformedRow(f"{path}: bad {what} {token!r} in row {row}") from None
    return value


def _parse_float(token: str, what: str, row: list[str], path) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedRow(f"{path}: bad {what} {token!r} in row {row}") from None
    return value


def load_graph(edge_file: "str | Path", n_nodes: "int | None" = None) -> ServiceGraph:
    """Read an edge-list CSV (header ``src,dst[,weight]``) into a ServiceGraph.

    The file carries no node universe of its own: pass ``n_nodes`` to allow
    isolated nodes; otherwise K is inferred as ``max node index + 1``.
    """
    edges: list[tuple[int, int, float]] = []
    for row in _open_rows(edge_file, ["src", "dst", "weight"], optional_last=True):
        if len(row) not in (2, 3):
            raise MalformedRow(f"{edge_file}: row {row} is not src,dst[,weight]")
        src = _parse_int(row[0], "src", row, edge_file)
        dst = _parse_int(row[1], "dst", row, edge_file)
        weight = _parse_float(row[2], "weight", row, edge_file) if len(row) == 3 else 1.0
        edges.append((src, dst, weight))
    if n_nodes is None:
        if not edges:
            raise MalformedRow(
                f"{edge_file}: no edges and no n_nodes given; node count unknown"
            )
        n_nodes = 1 + max(max(s, d) for s, d, _ in edges)
    return ServiceGraph.from_edges(n_nodes, edges)


def write_graph(graph: ServiceGraph, edge_file: "str | Path") -> None:
    path = Path(edge_file)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("src,dst,weight\n")
        for src, dst, weight in sorted(graph.edges):
            handle.write(f"{src},{dst},{weight!r}\n")


def load_panel(
    weather_file: "str | Path",
    counts_file: "str | Path",
    time_step: str = "",
) -> PanelDataset:
    """Read long-format weather and counts CSVs into dense validated arrays.

    Units must be 0..K-1 and times 1..T with every cell present; any gap
    raises MissingCell.
    """
    weather_cells: dict[tuple[int, int, int], float] = {}
    for row in _open_rows(weather_file, ["unit", "time", "variable", "value"]):
        if len(row) != 4:
            raise MalformedRow(f"{weather_file}: row {row} is not unit,time,variable,value")
        unit = _parse_int(row[0], "unit", row, weather_file)
        time = _parse_int(row[1], "time", row, weather_file)
        var = _parse_int(row[2], "variable", row, weather_file)
        value = _parse_float(row[3], "value", row, weather_file)
        if unit < 0 or time < 1 or var < 0:
            raise MalformedRow(
                f"{weather_file}: unit/time/variable out of domain in row {row}"
            )
        if not math.isfinite(value):
            raise MalformedRow(f"{weather_file}: non-finite value in row {row}")
        key = (unit, time, var)
        if key in weather_cells:
            raise MalformedRow(f"{weather_file}: duplicate cell {key}")
        weather_cells[key] = value
    if not weather_cells:
        raise MalformedRow(f"{weather_file}: no data rows")

    count_cells: dict[tuple[int, int], int] = {}
    for row in _open_rows(counts_file, ["unit", "time", "count"]):
        if len(row) != 3:
            raise MalformedRow(f"{counts_file}: row {row} is not unit,time,count")
        unit = _parse_int(row[0], "unit", row, counts_file)
        time = _parse_int(row[1], "time", row, counts_file)
        raw = _parse_float(row[2], "count", row, counts_file)
        if unit < 0 or time < 1:
            raise MalformedRow(f"{counts_file}: unit/time out of domain in row {row}")
        if not math.isfinite(raw) or raw != math.floor(raw):
            raise NonIntegerCount(f"{counts_file}: count {row[2]!r} is not an integer")
        count = int(raw)
        if count < 0:
            raise NegativeCount(f"{counts_file}: negative count in row {row}")
        key = (unit, time)
        if key in count_cells:
            raise MalformedRow(f"{counts_file}: duplicate cell {key}")
        count_cells[key] = count
    if not count_cells:
        raise MalformedRow(f"{counts_file}: no data rows")

    k_w = 1 + max(u for u, _, _ in weather_cells)
    t_w = max(t for _, t, _ in weather_cells)
    n_vars = 1 + max(m for _, _, m in weather_cells)
    k_c = 1 + max(u for u, _ in count_cells)
    t_c = max(t for _, t in count_cells)
    if (k_w, t_w) != (k_c, t_c):
        raise DimensionMismatch(
            f"weather implies (K={k_w}, T={t_w}) but counts imply (K={k_c}, T={t_c})"
        )

    weather = np.full((k_w, t_w, n_vars), np.nan)
    for (unit, time, var), value in weather_cells.items():
        weather[unit, time - 1, var] = value
    missing = np.argwhere(np.isnan(weather))
    if missing.size:
        unit, t_idx, var = (int(x) for x in missing[0])
        raise MissingCell(f"weather cell (unit={unit}, time={t_idx + 1}, variable={var}) missing")

    counts = np.full((k_c, t_c), -1, dtype=np.int64)
    for (unit, time), value in count_cells.items():
        counts[unit, time - 1] = value
    missing_c = np.argwhere(counts < 0)
    if missing_c.size:
        unit, t_idx = (int(x) for x in missing_c[0])
        raise MissingCell(f"count cell (unit={unit}, time={t_idx + 1}) missing")

    return PanelDataset.build(weather, counts, time_step=time_step)


def write_panel(
    panel: PanelDataset,
    weather_file: "str | Path",
    counts_file: "str | Path",
) -> None:
    """Write the canonical long-format CSVs (rows sorted by unit, time, variable).

    Floats are emitted via repr, so write -> load -> write is a byte-level
    fixpoint.
    """
    with Path(weather_file).open("w", encoding="utf-8", newline="") as handle:
        handle.write("unit,time,variable,value\n")
        for unit in range(panel.n_nodes):
            for t_idx in range(panel.n_steps):
                for var in range(panel.n_vars):
                    value = float(panel.weather[unit, t_idx, var])
                    handle.write(f"{unit},{t_idx + 1},{var},{value!r}\n")
    with Path(counts_file).open("w", encoding="utf-8", newline="") as handle:
        handle.write("unit,time,count\n")
        for unit in range(panel.n_nodes):
            for t_idx in range(panel.n_steps):
                handle.write(f"{unit},{t_idx + 1},{int(panel.counts[unit, t_idx])}\n")
