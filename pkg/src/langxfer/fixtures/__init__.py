"""Bundled reference data: published perplexity-vs-size curves for three
target languages (Spanish, Arabic, Japanese) under scratch / en / ru / zh
initializations, plus the corresponding transfer matrix in MiB. They let
the whole transfer + analysis path run and be checked without training.
"""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

from ..transfer import PerplexityCurve, load_curve

_PKG = "langxfer.fixtures"


def fixtures_dir() -> Path:
    return Path(str(resources.files(_PKG)))


def curve_paths() -> list[Path]:
    return sorted(fixtures_dir().glob("curves/*.csv"))


def reference_curves() -> list[PerplexityCurve]:
    return [load_curve(p) for p in curve_paths()]


def reference_dt_mib() -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    with open(fixtures_dir() / "reference_dt_mib.csv", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "source":
                continue
            out[(row[0], row[1])] = float(row[2])
    return out
