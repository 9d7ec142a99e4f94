"""Byte n-gram Naive-Bayes language identification and contamination ratios.

This replaces an external language detector: additive-smoothed n-gram
models per language, a normalized posterior as the confidence score, and
line-level contamination ratios with the usual 0.6 confidence threshold.
Lines can also be labeled externally and imported from CSV.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus

MIN_TRAIN_BYTES = 10_000
DEFAULT_THRESHOLD = 0.6


def _line_grams(text: str, n: int) -> list[bytes] | None:
    """Byte n-grams of a stripped line; None if nothing is left. Lines
    shorter than n contribute themselves as a single gram."""
    raw = text.strip().encode("utf-8")
    if not raw:
        return None
    if len(raw) < n:
        return [raw]
    return [raw[i:i + n] for i in range(len(raw) - n + 1)]


@dataclass(eq=True)
class LangClassifier:
    n: int
    smoothing: float
    counts: dict[str, dict[bytes, int]] = field(repr=False)
    totals: dict[str, int]
    vocab_size: int

    @property
    def languages(self) -> list[str]:
        return sorted(self.counts)

    def posterior(self, line: str) -> dict[str, float]:
        """Normalized posterior over known languages (uniform prior)."""
        grams = _line_grams(line, self.n)
        if grams is None:
            raise ValueError("cannot classify an empty line")
        scores = {}
        alpha = self.smoothing
        for lang in self.languages:
            table = self.counts[lang]
            denom = math.log(self.totals[lang] + alpha * self.vocab_size)
            scores[lang] = sum(math.log(table.get(g, 0) + alpha) - denom
                               for g in grams)
        peak = max(scores.values())
        weights = {lang: math.exp(s - peak) for lang, s in scores.items()}
        z = sum(weights.values())
        return {lang: w / z for lang, w in weights.items()}


def train_langid(corpora: list[Corpus], n: int = 3,
                 smoothing: float = 1.0) -> LangClassifier:
    """Fit per-language n-gram counts (order-independent) from labeled
    corpora. Needs at least two languages with >= 10 kB of text each."""
    if len({c.language for c in corpora}) < 2:
        raise ValueError("language identification needs >= 2 distinct languages")
    counts: dict[str, Counter] = {}
    sizes: dict[str, int] = {}
    for corpus in corpora:
        bag = counts.setdefault(corpus.language, Counter())
        sizes[corpus.language] = sizes.get(corpus.language, 0) + corpus.total_bytes
        for doc in corpus.documents:
            grams = _line_grams(doc, n)
            if grams:
                bag.update(grams)
    for lang, size in sizes.items():
        if size < MIN_TRAIN_BYTES:
            raise ValueError(
                f"language {lang!r} has only {size} bytes of training text "
                f"(need >= {MIN_TRAIN_BYTES})")
    vocab = set()
    for bag in counts.values():
        vocab.update(bag)
    return LangClassifier(n=n, smoothing=smoothing,
                          counts={k: dict(v) for k, v in counts.items()},
                          totals={k: sum(v.values()) for k, v in counts.items()},
                          vocab_size=len(vocab) + 1)


def classify_line(classifier: LangClassifier, line: str) -> tuple[str, float]:
    """Most likely language and its posterior confidence in [0, 1]."""
    post = classifier.posterior(line)
    lang = max(post, key=post.get)
    return lang, post[lang]


@dataclass
class ContaminationReport:
    direction: str  # on_source | on_target
    host_language: str
    probe_language: str
    lines_total: int
    lines_matched: int
    threshold: float

    @property
    def ratio(self) -> float:
        return self.lines_matched / self.lines_total if self.lines_total else 0.0

    def to_dict(self) -> dict:
        return {"direction": self.direction, "host_language": self.host_language,
                "probe_language": self.probe_language, "lines_total": self.lines_total,
                "lines_matched": self.lines_matched, "ratio": self.ratio,
                "threshold": self.threshold}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def contamination_ratio(classifier: LangClassifier, corpus: Corpus,
                        probe_language: str, threshold: float = DEFAULT_THRESHOLD,
                        direction: str = "on_target") -> ContaminationReport:
    """Fraction of the corpus's non-empty lines confidently classified as
    the probe language (confidence strictly above the threshold)."""
    if probe_language not in classifier.counts:
        raise ValueError(f"classifier does not know language {probe_language!r}")
    total = 0
    matched = 0
    for line in corpus.documents:
        if not line.strip():
            continue  # skipped, not counted
        total += 1
        lang, conf = classify_line(classifier, line)
        if lang == probe_language and conf > threshold:
            matched += 1
    return ContaminationReport(direction=direction, host_language=corpus.language,
                               probe_language=probe_language, lines_total=total,
                               lines_matched=matched, threshold=threshold)


def load_line_labels(path) -> list[tuple[int, str, float]]:
    """External line labels as CSV rows (line_no, lang, confidence)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "line_no":
                continue
            rows.append((int(row[0]), row[1], float(row[2])))
    return rows


def contamination_from_labels(labels: list[tuple[int, str, float]],
                              probe_language: str, host_language: str,
                              threshold: float = DEFAULT_THRESHOLD,
                              direction: str = "on_target") -> ContaminationReport:
    """Contamination ratio computed from imported line labels instead of
    the built-in classifier."""
    total = len(labels)
    matched = sum(1 for _, lang, conf in labels
                  if lang == probe_language and conf > threshold)
    return ContaminationReport(direction=direction, host_language=host_language,
                               probe_language=probe_language, lines_total=total,
                               lines_matched=matched, threshold=threshold)
