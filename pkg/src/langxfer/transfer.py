"""Data-transfer estimation from perplexity-vs-data curves.

The scratch curve maps target-language dataset sizes (bytes) to the test
perplexity of models trained from random initialization. Inverting that
mapping at a finetuned model's perplexity gives the Data Effective size
D_E: how many target-language bytes a from-scratch model would need for
the same performance. Subtracting the bytes the finetuned model actually
saw (D_T = D_E - s) isolates the contribution of pretraining, in bytes.

Inverse lookup is piecewise linear in raw bytes. Queries outside the
curve's perplexity range clamp to the nearest endpoint size and are
flagged rather than extrapolated. All arithmetic is float64.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BYTES_PER_MB = 10 ** 6
BYTES_PER_MIB = 2 ** 20
SCRATCH_TAG = "scratch"


@dataclass
class PerplexityCurve:
    """Ordered (dataset_size_bytes, perplexity) points for one target
    language under one initialization ('scratch' or a source tag)."""

    target: str
    init: str  # SCRATCH_TAG or the source-language tag
    sizes: np.ndarray
    perplexities: np.ndarray
    source: str | None = None

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        self.perplexities = np.asarray(self.perplexities, dtype=np.float64)
        if self.sizes.shape != self.perplexities.shape or self.sizes.ndim != 1:
            raise ValueError("curve needs matching 1-D size and perplexity arrays")
        if len(self.sizes) and not (np.diff(self.sizes) > 0).all():
            raise ValueError("curve sizes must be strictly increasing")
        if (self.perplexities <= 0).any():
            raise ValueError("perplexities must be positive")
        if self.source is None and self.init != SCRATCH_TAG:
            self.source = self.init

    def __len__(self) -> int:
        return len(self.sizes)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.sizes.tolist(), self.perplexities.tolist()))


def save_curve(curve: PerplexityCurve, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    source = curve.source if curve.source is not None else "none"
    with open(tmp, "w", newline="") as fh:
        fh.write(f"# source={source} target={curve.target} init={curve.init}\n")
        writer = csv.writer(fh)
        writer.writerow(["size_bytes", "perplexity"])
        for size, ppl in curve.points:
            writer.writerow([int(size), repr(float(ppl))])
    tmp.replace(path)


def load_curve(path) -> PerplexityCurve:
    path = Path(path)
    meta = {"target": path.stem, "init": SCRATCH_TAG, "source": "none"}
    sizes: list[float] = []
    ppls: list[float] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if row[0].startswith("#"):
                for part in " ".join(row).lstrip("# ").split():
                    if "=" in part:
                        key, value = part.split("=", 1)
                        meta[key] = value
                continue
            if row[0] == "size_bytes":
                continue
            sizes.append(float(row[0]))
            ppls.append(float(row[1]))
    source = None if meta["source"] == "none" else meta["source"]
    return PerplexityCurve(meta["target"], meta["init"], np.array(sizes),
                           np.array(ppls), source=source)


def prune_non_monotone(curve: PerplexityCurve) -> tuple[PerplexityCurve, list[tuple[float, float]]]:
    """Drop points whose perplexity does not improve on the best seen at a
    smaller size (the ossification regime makes large-size points turn back
    up). Returns the strictly decreasing curve and the pruned points."""
    keep_sizes: list[float] = []
    keep_ppls: list[float] = []
    pruned: list[tuple[float, float]] = []
    for size, ppl in curve.points:
        if keep_ppls and ppl >= keep_ppls[-1]:
            pruned.append((size, ppl))
        else:
            keep_sizes.append(size)
            keep_ppls.append(ppl)
    kept = PerplexityCurve(curve.target, curve.init,
                           np.array(keep_sizes), np.array(keep_ppls))
    return kept, pruned


def interp_effective(p_query: float, scratch: PerplexityCurve) -> tuple[float, bool]:
    """Data Effective size for a perplexity value: piecewise-linear inverse
    lookup of the scratch curve, linear in raw bytes. Out-of-range queries
    clamp to the nearest endpoint size with clamped=True."""
    if p_query <= 0:
        raise ValueError("query perplexity must be positive")
    pruned_curve, _ = prune_non_monotone(scratch)
    if len(pruned_curve) < 2:
        raise ValueError(
            f"scratch curve for {scratch.target!r} has fewer than 2 usable points "
            "after monotonicity pruning")
    # strictly decreasing perplexity -> reverse into ascending order for interp
    xp = pruned_curve.perplexities[::-1]
    fp = pruned_curve.sizes[::-1]
    clamped = not (xp[0] <= p_query <= xp[-1])
    d_e = float(np.interp(p_query, xp, fp))
    return d_e, clamped


@dataclass
class TransferEstimate:
    """Per-rung Data Effective / Data Transfer values, in bytes."""

    source: str
    target: str
    rungs: list[dict] = field(default_factory=list)
    pruned_scratch_points: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target,
                "rungs": self.rungs,
                "pruned_scratch_points": self.pruned_scratch_points}

    def to_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        tmp.replace(path)

    @classmethod
    def from_json(cls, path) -> "TransferEstimate":
        d = json.loads(Path(path).read_text())
        return cls(source=d["source"], target=d["target"], rungs=d["rungs"],
                   pruned_scratch_points=[tuple(p) for p in d.get("pruned_scratch_points", [])])

    def dt_at(self, rung_bytes: int) -> float:
        for rung in self.rungs:
            if rung["size_bytes"] == rung_bytes:
                return rung["dt_bytes"]
        raise KeyError(f"no rung of {rung_bytes} bytes in estimate {self.source}->{self.target}")

    @property
    def smallest_rung(self) -> dict:
        return min(self.rungs, key=lambda r: r["size_bytes"])


def data_transfer(scratch: PerplexityCurve, finetuned: PerplexityCurve) -> TransferEstimate:
    """Data Transfer per finetuned point: D_T,i = D_E,i - s_i exactly, in
    bytes. Negative values (ossification) are reported and flagged, not
    clamped."""
    if scratch.target != finetuned.target:
        raise ValueError(
            f"curve targets differ: {scratch.target!r} vs {finetuned.target!r}")
    _, pruned = prune_non_monotone(scratch)
    est = TransferEstimate(source=finetuned.init, target=finetuned.target,
                           pruned_scratch_points=pruned)
    for size, ppl in finetuned.points:
        d_e, clamped = interp_effective(ppl, scratch)
        d_t = d_e - size
        est.rungs.append({
            "size_bytes": int(size),
            "perplexity": float(ppl),
            "de_bytes": d_e,
            "dt_bytes": d_t,
            "clamped": bool(clamped),
            "negative": bool(d_t < 0),
        })
    return est


def convert_units(byte_count: float, unit: str) -> float:
    """Exact division into decimal megabytes (MB = 10^6) or binary
    mebibytes (MiB = 2^20)."""
    if unit == "MB":
        return byte_count / BYTES_PER_MB
    if unit == "MiB":
        return byte_count / BYTES_PER_MIB
    if unit == "bytes":
        return float(byte_count)
    raise ValueError(f"unknown unit {unit!r} (expected MB, MiB or bytes)")
