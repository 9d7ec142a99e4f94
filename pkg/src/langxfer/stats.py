"""Rank statistics for the transfer analyses.

Spearman correlation is the Pearson correlation of average-tie ranks;
significance always comes from a seeded two-sided permutation test (the
observation counts here are far too small for asymptotics). Everything
runs in float64 and is reproducible: permutation i draws from its own
(seed, i) stream, so a parallel evaluation would give identical p-values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_PERMUTATIONS = 10_000
DISTANCE_MEASURES = ("syntactic", "geographic", "phonological",
                     "genetic", "inventory", "featural")


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    return float((xc * yc).sum() / denom)


def spearman_rho(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 observations")
    return _pearson(average_ranks(x), average_ranks(y))


def permutation_pvalue(x, y, n_permutations: int = DEFAULT_PERMUTATIONS,
                       seed: int = 0) -> float:
    """Two-sided permutation p-value for the Spearman correlation:
    p = (1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_permutations)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if n_permutations < 0:
        raise ValueError("n_permutations must be >= 0")
    rx = average_ranks(x)
    ry = average_ranks(y)
    obs = abs(_pearson(rx, ry))
    hits = 0
    for trial in range(n_permutations):
        rng = np.random.default_rng([seed, trial])
        perm = rng.permutation(len(ry))
        if abs(_pearson(rx, ry[perm])) >= obs:
            hits += 1
    return (1 + hits) / (1 + n_permutations)


@dataclass
class CorrelationResult:
    measure: str
    rho: float
    p_value: float
    n_observations: int
    n_permutations: int
    excluded_rungs: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"measure": self.measure, "rho": self.rho, "p_value": self.p_value,
                "n_observations": self.n_observations,
                "n_permutations": self.n_permutations,
                "excluded_rungs": self.excluded_rungs}


def correlate(dt_records: list[dict], covariate_name: str,
              covariate_values: dict[tuple[str, str], float],
              exclude_largest_rung: bool = True,
              n_permutations: int = DEFAULT_PERMUTATIONS,
              seed: int = 0) -> CorrelationResult:
    """Pair each transfer record's D_T with a per-(source, target) covariate
    and report Spearman rho plus its permutation p-value.

    ``dt_records`` rows need source, target, rung_bytes and dt_bytes keys.
    With ``exclude_largest_rung`` the records at the maximum rung present
    are dropped (the ossification regime distorts that point).
    """
    records = [r for r in dt_records if (r["source"], r["target"]) in covariate_values]
    excluded: list[int] = []
    if exclude_largest_rung and records:
        largest = max(r["rung_bytes"] for r in records)
        excluded = [largest]
        records = [r for r in records if r["rung_bytes"] != largest]
    if len(records) < 3:
        raise ValueError(
            f"only {len(records)} paired observations for {covariate_name!r}; need >= 3")
    dt = [r["dt_bytes"] for r in records]
    cov = [covariate_values[(r["source"], r["target"])] for r in records]
    rho = spearman_rho(dt, cov)
    p = permutation_pvalue(dt, cov, n_permutations=n_permutations, seed=seed)
    return CorrelationResult(measure=covariate_name, rho=rho, p_value=p,
                             n_observations=len(records),
                             n_permutations=n_permutations,
                             excluded_rungs=excluded)


@dataclass
class CommutativityReport:
    unit: str
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"unit": self.unit, "rows": self.rows}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def commutativity(dt_table: dict[tuple[str, str], float],
                  unit: str = "MiB") -> CommutativityReport:
    """Forward/reverse D_T and their absolute gap for every language pair
    present in both directions."""
    report = CommutativityReport(unit=unit)
    pairs = sorted({tuple(sorted(k)) for k in dt_table if (k[1], k[0]) in dt_table
                    and k[0] != k[1]})
    for l1, l2 in pairs:
        forward = dt_table[(l1, l2)]
        reverse = dt_table[(l2, l1)]
        report.rows.append({"l1": l1, "l2": l2, "forward": forward,
                            "reverse": reverse, "delta": abs(forward - reverse)})
    if not report.rows:
        raise ValueError("no language pair has transfer values in both directions")
    return report


class DistanceTable:
    """Pairwise language distances per measure, read from CSV rows
    (measure, lang1, lang2, value); symmetric with a zero diagonal."""

    def __init__(self, values: dict[tuple[str, str, str], float]):
        self._values = {}
        for (measure, l1, l2), v in values.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"distance {measure}({l1},{l2})={v} outside [0, 1]")
            if l1 == l2 and v != 0.0:
                raise ValueError(f"nonzero diagonal {measure}({l1},{l1})={v}")
            mirror = self._values.get((measure, l2, l1))
            if mirror is not None and mirror != v:
                raise ValueError(f"asymmetric distances for {measure}({l1},{l2})")
            self._values[(measure, l1, l2)] = v
            self._values[(measure, l2, l1)] = v

    @classmethod
    def load(cls, path) -> "DistanceTable":
        values = {}
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "measure":
                    continue
                measure, l1, l2, value = row[0], row[1], row[2], float(row[3])
                values[(measure, l1, l2)] = value
        if not values:
            raise ValueError(f"distance table {path} is empty")
        return cls(values)

    @property
    def measures(self) -> list[str]:
        return sorted({m for m, _, _ in self._values})

    def get(self, measure: str, lang1: str, lang2: str) -> float:
        if lang1 == lang2:
            return 0.0
        key = (measure, lang1, lang2)
        if key not in self._values:
            raise KeyError(f"no {measure} distance for ({lang1}, {lang2})")
        return self._values[key]

    def pair_values(self, measure: str,
                    pairs: list[tuple[str, str]]) -> dict[tuple[str, str], float]:
        out = {}
        for l1, l2 in pairs:
            try:
                out[(l1, l2)] = self.get(measure, l1, l2)
            except KeyError:
                pass
        return out
