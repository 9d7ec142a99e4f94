"""Result tables and figures.

Everything here is presentation: numbers are read from the curve CSVs and
transfer estimates on disk, reshaped into the standard report tables
(perplexity-vs-size series, a transfer dispersion table, per-source
distribution summaries, the source x target matrix in bytes/MB/MiB and
the commutativity table) and rendered as delimited files plus matplotlib
figures saved alongside them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .transfer import (SCRATCH_TAG, BYTES_PER_MB, BYTES_PER_MIB,
                       PerplexityCurve, TransferEstimate)

FIG_DPI = 150


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def curve_table(curves: list[PerplexityCurve]) -> list[list]:
    rows = []
    for c in sorted(curves, key=lambda c: (c.target, c.init)):
        for size, ppl in c.points:
            rows.append([c.target, c.init, int(size), repr(ppl)])
    return rows


def dispersion_table(estimates: list[TransferEstimate]) -> list[list]:
    rows = []
    for est in sorted(estimates, key=lambda e: (e.target, e.source)):
        for rung in est.rungs:
            rows.append([est.target, est.source, rung["size_bytes"],
                         repr(rung["dt_bytes"]),
                         f"{rung['dt_bytes'] / BYTES_PER_MB:.2f}",
                         f"{rung['dt_bytes'] / BYTES_PER_MIB:.2f}",
                         int(rung["clamped"])])
    return rows


def smallest_rung_dt(estimates: list[TransferEstimate]) -> dict[tuple[str, str], float]:
    """(source, target) -> D_T in bytes at each estimate's smallest rung."""
    return {(e.source, e.target): e.smallest_rung["dt_bytes"] for e in estimates}


def matrix_rows(dt: dict[tuple[str, str], float], divisor: float,
                decimals: int) -> tuple[list[str], list[list]]:
    sources = sorted({s for s, _ in dt})
    targets = sorted({t for _, t in dt})
    header = ["source"] + targets
    rows = []
    for s in sources:
        row = [s]
        for t in targets:
            value = dt.get((s, t))
            row.append("" if value is None else f"{value / divisor:.{decimals}f}")
        rows.append(row)
    return header, rows


def distribution_summaries(dt: dict[tuple[str, str], float]) -> list[list]:
    """Per-source five-number summary (MB) of D_T across targets; sources
    with a single value have no distribution to summarize."""
    rows = []
    for source in sorted({s for s, _ in dt}):
        values = np.array([v for (s, _), v in dt.items() if s == source]) / BYTES_PER_MB
        if len(values) < 2:
            continue
        q = np.percentile(values, [0, 25, 50, 75, 100])
        rows.append([source, len(values)] + [f"{x:.4f}" for x in q])
    return rows


def write_report(store, figures: bool = True) -> Path:
    """Emit every table (CSV + JSON bundle) and figure into the store's
    report directory. Needs at least one transfer estimate."""
    estimates = store.estimates()
    curves = store.curves()
    if not estimates:
        raise ValueError("results store holds no transfer estimates to report")
    out = store.report_dir()

    _write_csv(out / "curves.csv",
               ["target", "init", "size_bytes", "perplexity"], curve_table(curves))
    _write_csv(out / "dt_dispersion.csv",
               ["target", "source", "rung_bytes", "dt_bytes", "dt_mb", "dt_mib", "clamped"],
               dispersion_table(estimates))

    dt = smallest_rung_dt(estimates)
    for unit, divisor, decimals in (("bytes", 1.0, 0), ("mb", BYTES_PER_MB, 2),
                                    ("mib", BYTES_PER_MIB, 2)):
        header, rows = matrix_rows(dt, divisor, decimals)
        _write_csv(out / f"dt_matrix_{unit}.csv", header, rows)

    summary_rows = distribution_summaries(dt)
    _write_csv(out / "dt_distribution.csv",
               ["source", "n_targets", "min_mb", "q1_mb", "median_mb", "q3_mb", "max_mb"],
               summary_rows)

    commut = store.analysis_path("commutativity.json")
    if commut.exists():
        data = json.loads(commut.read_text())
        _write_csv(out / "commutativity.csv",
                   ["l1", "l2", "forward", "reverse", "delta", "unit"],
                   [[r["l1"], r["l2"], f"{r['forward']:.2f}", f"{r['reverse']:.2f}",
                     f"{r['delta']:.2f}", data["unit"]] for r in data["rows"]])

    bundle = {
        "dt_smallest_rung_bytes": {f"{s}->{t}": v for (s, t), v in sorted(dt.items())},
        "distribution_mb": {row[0]: dict(zip(("n", "min", "q1", "median", "q3", "max"),
                                             row[1:])) for row in summary_rows},
        "n_curves": len(curves),
        "n_estimates": len(estimates),
    }
    (out / "report.json").write_text(json.dumps(bundle, indent=2) + "\n")

    if figures:
        render_figures(curves, estimates, out)
    return out


def render_figures(curves: list[PerplexityCurve],
                   estimates: list[TransferEstimate], out: Path) -> list[Path]:
    paths = []
    targets = sorted({c.target for c in curves})
    for target in targets:
        fig, ax = plt.subplots(figsize=(6, 4))
        for c in sorted((c for c in curves if c.target == target),
                        key=lambda c: (c.init != SCRATCH_TAG, c.init)):
            style = dict(marker="o", color="black") if c.init == SCRATCH_TAG \
                else dict(marker="s")
            ax.plot(c.sizes, c.perplexities, label=c.init, **style)
        ax.set_xscale("log")
        ax.set_xlabel("finetuning dataset size (bytes)")
        ax.set_ylabel("test perplexity")
        ax.set_title(f"target: {target}")
        ax.legend()
        fig.tight_layout()
        p = out / f"curves_{target}.png"
        fig.savefig(p, dpi=FIG_DPI)
        plt.close(fig)
        paths.append(p)

    dt = smallest_rung_dt(estimates)
    targets = sorted({t for _, t in dt})
    sources = sorted({s for s, _ in dt})
    if targets and sources:
        fig, ax = plt.subplots(figsize=(7, 4))
        xpos = {t: i + 1 for i, t in enumerate(targets)}
        for source in sources:
            xs = [xpos[t] for (s, t) in dt if s == source]
            ys = [dt[(s, t)] / BYTES_PER_MB for (s, t) in dt if s == source]
            ax.scatter(xs, ys, label=source)
        ax.set_xticks(list(xpos.values()), list(xpos.keys()))
        ax.set_xlabel("target language")
        ax.set_ylabel("data transfer (MB)")
        ax.legend()
        fig.tight_layout()
        p = out / "dt_dispersion.png"
        fig.savefig(p, dpi=FIG_DPI)
        plt.close(fig)
        paths.append(p)

        groups = [(s, [dt[(s2, t)] / BYTES_PER_MB for (s2, t) in dt if s2 == s])
                  for s in sources]
        groups = [(s, vs) for s, vs in groups if len(vs) >= 2]
        if groups:
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.boxplot([vs for _, vs in groups], tick_labels=[s for s, _ in groups])
            ax.set_xlabel("source language")
            ax.set_ylabel("data transfer (MB)")
            fig.tight_layout()
            p = out / "dt_distribution.png"
            fig.savefig(p, dpi=FIG_DPI)
            plt.close(fig)
            paths.append(p)
    return paths
