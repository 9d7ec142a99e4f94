"""Experiment manifests: one JSON document describing a full source x
target grid (model, schedules, languages, ladder, analyses), validated
up front with every violation reported at once.

Schema (version 1):

    {
      "version": 1,
      "seed": 0,                      // mandatory, drives everything
      "output_dir": "runs/demo",
      "model": "desk" | {"d_model": ..., ...},
      "pretrain": {"total_steps": ..., "batch_sequences": ..., "seq_len": ...,
                   "peak_lr": ..., "final_lr": ..., "eval_interval": ...},
      "finetune": {"epochs": ..., "batch_sequences": ..., "seq_len": ...,
                   "peak_lr": ..., "final_lr": ..., "eval_interval": ...},
      "sources": [{"tag": "a", "spec": {...}} | {"tag": "b", "path": "b.jsonl"}],
      "targets": [...],
      "ladder": [60000, 200000, 600000],
      "pretrain_bytes": 10000000,
      "eval_bytes": 49152,
      "analysis": {"contamination_threshold": 0.6, "n_permutations": 10000,
                   "exclude_largest_rung": true, "distance_table": null},
      "curves": ["es_scratch.csv", ...]   // optional: analysis-only mode
    }

A synthetic spec may name another entry's tag as its "parent". Relative
paths are resolved against the manifest file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import PRESETS, ModelConfig
from .synthetic import SyntheticLangSpec

SCHEMA_VERSION = 1
DEFAULT_ANALYSIS = {
    "contamination": True,
    "contamination_threshold": 0.6,
    "n_permutations": 10_000,
    "exclude_largest_rung": True,
    "distance_table": None,
}


@dataclass
class LanguageEntry:
    tag: str
    spec: SyntheticLangSpec | None = None
    path: Path | None = None

    @property
    def is_synthetic(self) -> bool:
        return self.spec is not None


@dataclass
class ExperimentManifest:
    raw: dict
    base_dir: Path
    errors: list[str] = field(default_factory=list)
    sources: list[LanguageEntry] = field(default_factory=list)
    targets: list[LanguageEntry] = field(default_factory=list)
    model_config: ModelConfig | None = None
    curves: list[Path] = field(default_factory=list)

    # -- construction -----------------------------------------------------
    @classmethod
    def from_file(cls, path) -> "ExperimentManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"cannot parse manifest {path}: {e}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentManifest":
        m = cls(raw=raw, base_dir=Path(base_dir))
        m._parse()
        return m

    def resolve_path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def _parse(self) -> None:
        raw, errors = self.raw, self.errors
        if raw.get("version") != SCHEMA_VERSION:
            errors.append(f"version: expected {SCHEMA_VERSION}, got {raw.get('version')!r}")
        if not isinstance(raw.get("seed"), int):
            errors.append("seed: a mandatory integer seed is required")
        if not raw.get("output_dir"):
            errors.append("output_dir: required")

        model = raw.get("model", "desk")
        try:
            if isinstance(model, str):
                if model not in PRESETS:
                    raise ValueError(f"unknown preset {model!r} (have {sorted(PRESETS)})")
                self.model_config = PRESETS[model]
            else:
                self.model_config = ModelConfig.from_dict(model)
        except (ValueError, KeyError, TypeError) as e:
            errors.append(f"model: {e}")

        self.curves = [self.resolve_path(p) for p in raw.get("curves", [])]
        for c in self.curves:
            if not c.exists():
                errors.append(f"curves: file not found: {c}")

        known: dict[str, LanguageEntry] = {}
        for section in ("sources", "targets"):
            entries = raw.get(section, [])
            if not isinstance(entries, list):
                errors.append(f"{section}: must be a list")
                continue
            parsed = []
            for i, entry in enumerate(entries):
                where = f"{section}[{i}]"
                tag = entry.get("tag") if isinstance(entry, dict) else None
                if not tag:
                    errors.append(f"{where}.tag: required")
                    continue
                if tag in known:
                    parsed.append(known[tag])
                    continue
                lang = LanguageEntry(tag=tag)
                if "spec" in entry:
                    spec_dict = dict(entry["spec"])
                    spec_dict.setdefault("tag", tag)
                    parent = spec_dict.get("parent")
                    if isinstance(parent, str):
                        if parent in known and known[parent].spec is not None:
                            spec_dict["parent"] = known[parent].spec.to_dict()
                        else:
                            errors.append(f"{where}.spec.parent: unknown spec tag {parent!r}")
                            spec_dict["parent"] = None
                    try:
                        lang.spec = SyntheticLangSpec.from_dict(spec_dict)
                    except (ValueError, KeyError, TypeError) as e:
                        errors.append(f"{where}.spec: {e}")
                elif "path" in entry:
                    lang.path = self.resolve_path(entry["path"])
                    if not lang.path.exists():
                        errors.append(f"{where}.path: file not found: {lang.path}")
                else:
                    errors.append(f"{where}: needs either a 'spec' or a 'path'")
                known[tag] = lang
                parsed.append(lang)
            setattr(self, section, parsed)

        if not self.curves:
            if not self.sources:
                errors.append("sources: at least one source language is required")
            if not self.targets:
                errors.append("targets: at least one target language is required")
            ladder = raw.get("ladder")
            if not ladder or not isinstance(ladder, list):
                errors.append("ladder: a non-empty list of byte sizes is required")
            else:
                if sorted(set(int(r) for r in ladder)) != [int(r) for r in ladder]:
                    errors.append("ladder: rung sizes must be strictly increasing")
                if any(int(r) < 1 for r in ladder):
                    errors.append("ladder: rung sizes must be positive")
            if not isinstance(raw.get("pretrain_bytes"), int) or raw.get("pretrain_bytes", 0) < 1:
                errors.append("pretrain_bytes: a positive byte budget is required")
            for section in ("pretrain", "finetune"):
                cfg = raw.get(section, {})
                if not isinstance(cfg, dict):
                    errors.append(f"{section}: must be an object")

        analysis = {**DEFAULT_ANALYSIS, **raw.get("analysis", {})}
        if not (0.0 <= float(analysis["contamination_threshold"]) <= 1.01):
            errors.append("analysis.contamination_threshold: must be in [0, 1.01]")
        if int(analysis["n_permutations"]) < 0:
            errors.append("analysis.n_permutations: must be >= 0")
        if analysis.get("distance_table"):
            dt_path = self.resolve_path(analysis["distance_table"])
            if not dt_path.exists():
                errors.append(f"analysis.distance_table: file not found: {dt_path}")
        self.raw["analysis"] = analysis

        # cross-field: ladder must fit inside every target corpus
        ladder = self.ladder
        if ladder and self.targets:
            eval_bytes = int(raw.get("eval_bytes", 65_536))
            for lang in self.targets:
                if lang.path is not None and lang.path.exists():
                    size = lang.path.stat().st_size
                    if size < ladder[-1] + eval_bytes:
                        errors.append(
                            f"targets[{lang.tag}]: corpus file of ~{size} bytes cannot "
                            f"cover the largest rung {ladder[-1]} plus eval_bytes {eval_bytes}")

    # -- accessors ---------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def output_dir(self) -> Path:
        return self.resolve_path(self.raw.get("output_dir", "runs"))

    @property
    def ladder(self) -> list[int]:
        return [int(r) for r in self.raw.get("ladder", [])]

    @property
    def pretrain_bytes(self) -> int:
        return int(self.raw.get("pretrain_bytes", 0))

    @property
    def eval_bytes(self) -> int:
        return int(self.raw.get("eval_bytes", 65_536))

    @property
    def analysis(self) -> dict:
        return {**DEFAULT_ANALYSIS, **self.raw.get("analysis", {})}

    @property
    def analysis_only(self) -> bool:
        return bool(self.curves)

    def train_overrides(self, phase: str) -> dict:
        return dict(self.raw.get(phase, {}))

    def validate(self) -> list[str]:
        """All collected validation errors (empty means the manifest is ok)."""
        return list(self.errors)

    def require_valid(self) -> None:
        if self.errors:
            raise ValueError("invalid manifest:\n  " + "\n  ".join(self.errors))

    def section_hash(self, *keys: str) -> str:
        """Content hash of manifest sections plus the seed; used to decide
        whether a completed stage can be skipped."""
        payload = {k: self.raw.get(k) for k in keys}
        payload["seed"] = self.seed
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
