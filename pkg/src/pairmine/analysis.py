"""Mining diagnostics: per-rank score curves across candidate-pool sizes and
threshold sensitivity measured by Kendall rank correlation of the mined
rankings."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError
from .mining import MiningConfig, MiningReport, mine_hpm
from .store import PairDataset


@dataclass(frozen=True)
class CriteriaCurve:
    """Mean selection score per rank over non-noise targets, for one report."""

    pool_label: str
    points: tuple[tuple[int, float], ...]


def criteria_curve(labeled_reports: list[tuple[str, MiningReport]]) -> list[CriteriaCurve]:
    """Per-rank mean of the hard-pair score across non-noise targets.

    All reports must cover the same target universe (labels typically name
    candidate-pool sizes).
    """
    if not labeled_reports:
        raise ConfigError("no reports given")
    universes = [frozenset(r.target_id for r in rep.results)
                 for _, rep in labeled_reports]
    if any(u != universes[0] for u in universes[1:]):
        raise DataError("reports do not share the same target universe")

    curves = []
    for label, report in labeled_reports:
        rows = [r.ranked for r in report.results if not r.noise]
        if not rows:
            raise DataError(f"report {label!r} has no non-noise targets")
        k = max(len(r) for r in rows)
        points = []
        for rank in range(k):
            vals = [r[rank][1] for r in rows if len(r) > rank]
            points.append((rank + 1, float(np.mean(vals))))
        curves.append(CriteriaCurve(label, tuple(points)))
    return curves


def kendall_tau(ranking_a: list, ranking_b: list) -> float:
    """Kendall tau-b between two ordered id lists.

    Ranks run over the union of ids; an id absent from one list gets the
    tied rank len(list)+1 there. Identical rankings return exactly 1.0.
    """
    a = [str(x) for x in ranking_a]
    b = [str(x) for x in ranking_b]
    if not a or not b:
        raise DataError("rankings must be nonempty")
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise DataError("duplicate ids within a ranking")
    union = sorted(set(a) | set(b))
    pos_a = {x: i + 1 for i, x in enumerate(a)}
    pos_b = {x: i + 1 for i, x in enumerate(b)}
    ranks_a = np.array([pos_a.get(x, len(a) + 1) for x in union], dtype=np.float64)
    ranks_b = np.array([pos_b.get(x, len(b) + 1) for x in union], dtype=np.float64)
    if np.array_equal(ranks_a, ranks_b):
        return 1.0
    # exact reversal of a tie-free common list: every rank pair sums to n+1
    n = len(union)
    if (np.array_equal(np.sort(ranks_a), np.arange(1, n + 1))
            and np.array_equal(ranks_a + ranks_b, np.full(n, n + 1.0))):
        return -1.0
    return float(stats.kendalltau(ranks_a, ranks_b, variant="b").statistic)


@dataclass(frozen=True)
class RankSimilarityMatrix:
    """Pairwise mean Kendall tau-b of mined rankings across a threshold grid."""

    grid: tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.grid), len(self.grid)):
            raise DataError("matrix shape does not match grid")
        object.__setattr__(self, "values", values)


def _rankings(report: MiningReport) -> list[list[int]]:
    return [[idx for idx, _ in r.ranked] for r in report.results]


def tau_sensitivity(dataset: PairDataset, grid: list[float], k: int,
                    seed: int = 0, worker_count: int = 1) -> RankSimilarityMatrix:
    """Mine with every threshold in the grid and compare the resulting
    per-target top-k rankings pairwise.

    Entry (a, b) is the mean Kendall tau over targets where both minings
    produced a ranking; identical minings (including the diagonal) are
    exactly 1.0.
    """
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise ConfigError("grid values must lie in [0,1]")
    if not grid:
        raise ConfigError("grid must be nonempty")

    rankings = []
    for tau in grid:
        config = MiningConfig(k=k, tau_image=tau, tau_text=tau, seed=seed,
                              worker_count=worker_count)
        rankings.append(_rankings(mine_hpm(dataset, config)))

    m = len(grid)
    values = np.ones((m, m))
    for ai in range(m):
        for bi in range(ai + 1, m):
            ra, rb = rankings[ai], rankings[bi]
            if ra == rb:
                values[ai, bi] = values[bi, ai] = 1.0
                continue
            taus = [kendall_tau(x, y) for x, y in zip(ra, rb) if x and y]
            if not taus:
                raise DataError(
                    f"no comparable targets between tau={grid[ai]} and tau={grid[bi]}"
                )
            values[ai, bi] = values[bi, ai] = float(np.mean(taus))
    return RankSimilarityMatrix(tuple(float(t) for t in grid), values)


# --- CSV emission ---

def write_curves_csv(curves: list[CriteriaCurve], path: str | Path) -> None:
    """Wide layout: one row per rank, one column per pool label."""
    labels = [c.pool_label for c in curves]
    by_rank: dict[int, dict[str, float]] = {}
    for curve in curves:
        for rank, mean in curve.points:
            by_rank.setdefault(rank, {})[curve.pool_label] = mean
    lines = ["rank," + ",".join(labels)]
    for rank in sorted(by_rank):
        cells = [("" if lbl not in by_rank[rank] else repr(by_rank[rank][lbl]))
                 for lbl in labels]
        lines.append(f"{rank}," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_curves_long_csv(curves: list[CriteriaCurve], path: str | Path) -> None:
    """Plot-ready long layout: rank, pool, mean."""
    lines = ["rank,pool,mean"]
    for curve in curves:
        for rank, mean in curve.points:
            lines.append(f"{rank},{curve.pool_label},{mean!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_matrix_csv(matrix: RankSimilarityMatrix, path: str | Path) -> None:
    header = "tau," + ",".join(repr(t) for t in matrix.grid)
    lines = [header]
    for i, tau in enumerate(matrix.grid):
        cells = ",".join(repr(float(v)) for v in matrix.values[i])
        lines.append(f"{tau!r},{cells}")
    Path(path).write_text("\n".join(lines) + "\n")
