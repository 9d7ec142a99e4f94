"""Parameterized synthetic languages for controlled transfer experiments.

Each language is a Zipfian lexicon over a window of ASCII byte values,
with optional bracketed clause nesting for hierarchical structure. A
child spec can share an exact fraction of its vocabulary with a parent
spec, which is the control knob for graded language similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import Corpus

OPEN_BRACKET = "("
CLOSE_BRACKET = ")"
NEST_PROB = 0.25  # chance that a word slot becomes a bracketed sub-clause


@dataclass
class SyntheticLangSpec:
    tag: str
    seed: int
    vocab_size: int
    zipf_exponent: float = 1.0
    word_length: tuple[int, int] = (3, 8)
    sentence_length: tuple[int, int] = (4, 12)
    byte_range: tuple[int, int] = (0x61, 0x7A)
    overlap_fraction: float = 0.0
    nesting_depth: int = 0
    parent: Optional["SyntheticLangSpec"] = None

    def validate(self) -> None:
        errors = []
        if self.vocab_size < 10:
            errors.append(f"vocab_size must be >= 10, got {self.vocab_size}")
        lo, hi = self.byte_range
        if not (1 <= lo <= hi <= 0x7E):
            errors.append(f"byte_range must lie within printable ASCII [0x01, 0x7E], got {self.byte_range}")
        if lo <= 0x0A <= hi:
            errors.append("byte_range must exclude the separator byte 0x0A")
        for name in ("word_length", "sentence_length"):
            a, b = getattr(self, name)
            if not (1 <= a <= b):
                errors.append(f"{name} must satisfy 1 <= lo <= hi, got {(a, b)}")
        if not (0.0 <= self.overlap_fraction <= 1.0):
            errors.append(f"overlap_fraction must be in [0, 1], got {self.overlap_fraction}")
        if self.overlap_fraction > 0 and self.parent is None:
            errors.append("overlap_fraction > 0 requires a parent spec")
        if self.zipf_exponent <= 0:
            errors.append(f"zipf_exponent must be positive, got {self.zipf_exponent}")
        if self.nesting_depth < 0:
            errors.append(f"nesting_depth must be >= 0, got {self.nesting_depth}")
        if not errors:
            n_bytes = hi - lo + 1
            capacity = sum(n_bytes ** l for l in
                           range(self.word_length[0], self.word_length[1] + 1))
            if capacity < self.vocab_size:
                errors.append(
                    f"byte range supports only {capacity} distinct words, "
                    f"fewer than vocab_size={self.vocab_size}")
        if errors:
            raise ValueError(f"invalid language spec {self.tag!r}: " + "; ".join(errors))

    def to_dict(self) -> dict:
        d = {"tag": self.tag, "seed": self.seed, "vocab_size": self.vocab_size,
             "zipf_exponent": self.zipf_exponent,
             "word_length": list(self.word_length),
             "sentence_length": list(self.sentence_length),
             "byte_range": list(self.byte_range),
             "overlap_fraction": self.overlap_fraction,
             "nesting_depth": self.nesting_depth}
        if self.parent is not None:
            d["parent"] = self.parent.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticLangSpec":
        parent = cls.from_dict(d["parent"]) if d.get("parent") else None
        spec = cls(tag=d["tag"], seed=int(d["seed"]), vocab_size=int(d["vocab_size"]),
                   zipf_exponent=float(d.get("zipf_exponent", 1.0)),
                   word_length=tuple(d.get("word_length", (3, 8))),
                   sentence_length=tuple(d.get("sentence_length", (4, 12))),
                   byte_range=tuple(d.get("byte_range", (0x61, 0x7A))),
                   overlap_fraction=float(d.get("overlap_fraction", 0.0)),
                   nesting_depth=int(d.get("nesting_depth", 0)),
                   parent=parent)
        spec.validate()
        return spec


def vocabulary(spec: SyntheticLangSpec) -> list[str]:
    """The spec's word list, rank-ordered. With a parent, exactly
    round(overlap_fraction * vocab_size) leading entries are copied
    verbatim from the parent's list (rank-aligned), the rest are drawn
    fresh from the spec's own byte window."""
    spec.validate()
    words: list[str] = []
    if spec.parent is not None and spec.overlap_fraction > 0:
        n_shared = int(round(spec.overlap_fraction * spec.vocab_size))
        parent_words = vocabulary(spec.parent)
        if n_shared > len(parent_words):
            raise ValueError(f"parent vocabulary too small for requested overlap of {spec.tag!r}")
        words = parent_words[:n_shared]
    rng = np.random.default_rng([spec.seed, 0xB0CA])
    seen = set(words)
    lo, hi = spec.byte_range
    wlo, whi = spec.word_length
    while len(words) < spec.vocab_size:
        length = int(rng.integers(wlo, whi + 1))
        word = bytes(rng.integers(lo, hi + 1, size=length).astype(np.uint8)).decode("ascii")
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _zipf_cdf(vocab_size: int, exponent: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    weights = ranks ** -exponent
    return np.cumsum(weights / weights.sum())


def gen_synthetic(spec: SyntheticLangSpec, budget_bytes: int, seed: int) -> Corpus:
    """Generate at least ``budget_bytes`` of language text (one sentence per
    document), reproducibly for a given (spec, seed)."""
    spec.validate()
    if budget_bytes < 1:
        raise ValueError("budget_bytes must be >= 1")
    vocab = np.array(vocabulary(spec), dtype=object)
    cdf = _zipf_cdf(spec.vocab_size, spec.zipf_exponent)
    rng = np.random.default_rng([seed, spec.seed, 0x5E17])
    slo, shi = spec.sentence_length

    def sentence(depth: int) -> str:
        n_words = int(rng.integers(slo, shi + 1))
        draws = vocab[np.searchsorted(cdf, rng.random(n_words))]
        if depth < spec.nesting_depth:
            nest_at = np.flatnonzero(rng.random(n_words) < NEST_PROB)
            parts = list(draws)
            for i in nest_at:
                parts[i] = OPEN_BRACKET + sentence(depth + 1) + CLOSE_BRACKET
            return " ".join(parts)
        return " ".join(draws)

    docs: list[str] = []
    total = 0
    while total < budget_bytes:
        doc = sentence(0)
        docs.append(doc)
        total += len(doc)  # ASCII: characters == bytes
    return Corpus(spec.tag, docs)
