"""Manifest-driven pipeline: corpora -> pretraining -> finetune ladders ->
transfer estimates -> analyses, with persistent, stage-skippable artifacts.

Every stage writes into its own directory under the manifest's output_dir
together with a stamp recording a content hash of the manifest sections it
depends on (plus the seed). A rerun skips stages whose stamp matches and
whose outputs still exist, so deleting one artifact recomputes only that
stage. Failures are recorded and independent stages continue.
"""

from __future__ import annotations

import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus, load_corpus, save_corpus, split_budget
from .langid import contamination_ratio, train_langid
from .manifest import ExperimentManifest, LanguageEntry
from .optim import TrainConfig, finetune_config, pretrain_config
from .stats import DistanceTable, commutativity, correlate
from .synthetic import gen_synthetic
from .trainer import finetune, pretrain
from .transfer import (SCRATCH_TAG, PerplexityCurve, TransferEstimate,
                       data_transfer, load_curve, save_curve)

_SALT_PRETRAIN_SPLIT = 0xF00D
_SALT_CORPUS_GEN = 0xC0DE


@dataclass
class ResultsStore:
    """On-disk layout of one experiment run."""

    root: Path
    failures: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def corpus_path(self, tag: str) -> Path:
        return self.path("corpora", f"{tag}.jsonl")

    def pretrain_dir(self, tag: str) -> Path:
        return self.path("pretrain", tag)

    def ladder_dir(self, target: str, source: str | None) -> Path:
        leaf = SCRATCH_TAG if source is None else f"from_{source}"
        return self.path("ladders", target, leaf)

    def curve_path(self, target: str, source: str | None) -> Path:
        return self.ladder_dir(target, source) / "curve.csv"

    def transfer_path(self, source: str, target: str) -> Path:
        return self.path("transfer", f"{source}__{target}.json")

    def report_dir(self) -> Path:
        return self.path("report")

    def estimates(self) -> list[TransferEstimate]:
        out = []
        for p in sorted(self.root.glob("transfer/*.json")):
            out.append(TransferEstimate.from_json(p))
        return out

    def curves(self) -> list[PerplexityCurve]:
        out = []
        for p in sorted(self.root.glob("ladders/*/*/curve.csv")):
            out.append(load_curve(p))
        for p in sorted(self.root.glob("curves/*.csv")):
            out.append(load_curve(p))
        return out

    def analysis_path(self, name: str) -> Path:
        return self.path("analysis", name)

    def record_failure(self, stage: str, err: Exception) -> None:
        msg = f"{stage}: {err.__class__.__name__}: {err}"
        self.failures.append(msg)
        with open(self.path("errors.log"), "a") as fh:
            fh.write(msg + "\n" + traceback.format_exc() + "\n")


def _stamp_path(stage_dir: Path, name: str = "stage") -> Path:
    return stage_dir / f".stamp_{name}.json"


def _stage_current(stage_dir: Path, content_hash: str, outputs: list[Path],
                   name: str = "stage") -> bool:
    stamp = _stamp_path(stage_dir, name)
    if not stamp.exists():
        return False
    try:
        recorded = json.loads(stamp.read_text()).get("hash")
    except (OSError, json.JSONDecodeError):
        return False
    return recorded == content_hash and all(p.exists() for p in outputs)


def _write_stamp(stage_dir: Path, content_hash: str, name: str = "stage") -> None:
    stage_dir.mkdir(parents=True, exist_ok=True)
    _stamp_path(stage_dir, name).write_text(json.dumps({"hash": content_hash}) + "\n")


def _required_bytes(manifest: ExperimentManifest, tag: str) -> int:
    """Corpus size a synthetic language must be generated at: pretraining
    budget if it serves as a source, ladder + eval (with packing slack) if
    it serves as a target."""
    need = 0
    if any(s.tag == tag for s in manifest.sources):
        need += manifest.pretrain_bytes
    if any(t.tag == tag for t in manifest.targets):
        ladder = manifest.ladder
        need += int(ladder[-1] * 1.1) + manifest.eval_bytes + 4096
    return max(need, 65_536)


def _materialize_corpora(manifest: ExperimentManifest, store: ResultsStore,
                         force: bool) -> dict[str, Corpus]:
    corpora: dict[str, Corpus] = {}
    entries: dict[str, LanguageEntry] = {}
    for lang in list(manifest.sources) + list(manifest.targets):
        entries.setdefault(lang.tag, lang)
    for tag, lang in entries.items():
        if lang.is_synthetic:
            out = store.corpus_path(tag)
            stage_dir = out.parent
            content = manifest.section_hash("sources", "targets", "ladder",
                                            "pretrain_bytes", "eval_bytes") + f":{tag}"
            if force or not _stage_current(stage_dir, content, [out], name=tag):
                corpus = gen_synthetic(lang.spec, _required_bytes(manifest, tag),
                                       seed=[manifest.seed, _SALT_CORPUS_GEN])
                save_corpus(corpus, out, metadata={"spec": lang.spec.to_dict()})
                _write_stamp(stage_dir, content, name=tag)
                corpora[tag] = corpus
            else:
                corpora[tag] = load_corpus(out, language=tag)
        else:
            corpora[tag] = load_corpus(lang.path, language=tag)
    return corpora


def _pretrain_pool_split(manifest: ExperimentManifest, corpora: dict[str, Corpus],
                         tag: str) -> tuple[Corpus, Corpus]:
    """(pretraining part, finetuning pool) for one language. A language used
    as both source and target never shares text between the two roles."""
    corpus = corpora[tag]
    is_source = any(s.tag == tag for s in manifest.sources)
    is_target = any(t.tag == tag for t in manifest.targets)
    if is_source and is_target:
        return split_budget(corpus, manifest.pretrain_bytes,
                            [manifest.seed, _SALT_PRETRAIN_SPLIT])
    if is_source:
        pre, _ = split_budget(corpus, min(manifest.pretrain_bytes, corpus.total_bytes),
                              [manifest.seed, _SALT_PRETRAIN_SPLIT])
        return pre, Corpus(tag, [])
    return Corpus(tag, []), corpus


def _train_configs(manifest: ExperimentManifest) -> tuple[TrainConfig, TrainConfig]:
    seq_len = manifest.model_config.seq_len
    pre_over = manifest.train_overrides("pretrain")
    pre_cfg = pretrain_config(
        total_steps=int(pre_over.pop("total_steps", 2000)),
        batch_sequences=int(pre_over.pop("batch_sequences", 16)),
        seq_len=int(pre_over.pop("seq_len", seq_len)),
        seed=manifest.seed, **pre_over)
    ft_over = manifest.train_overrides("finetune")
    ft_cfg = finetune_config(
        rung_bytes=0, largest_rung=False,
        batch_sequences=int(ft_over.pop("batch_sequences", 16)),
        seq_len=int(ft_over.pop("seq_len", seq_len)),
        seed=manifest.seed,
        epochs=int(ft_over.pop("epochs", 10)), **ft_over)
    return pre_cfg, ft_cfg


def run(manifest: ExperimentManifest, force: bool = False,
        with_report: bool = True) -> ResultsStore:
    """Execute every stage of the manifest, skipping stages whose outputs
    are already current for this manifest + seed."""
    manifest.require_valid()
    store = ResultsStore(manifest.output_dir)
    store.root.mkdir(parents=True, exist_ok=True)
    snapshot = store.path("manifest.json")
    snapshot.write_text(json.dumps(manifest.raw, indent=2, default=str) + "\n")

    if manifest.analysis_only:
        _import_curves(manifest, store)
        _transfer_stage(manifest, store)
        _analysis_stage(manifest, store, corpora=None)
        if with_report:
            _report_stage(manifest, store)
        return store

    corpora = _materialize_corpora(manifest, store, force)
    pre_cfg, ft_cfg = _train_configs(manifest)
    train_hash = manifest.section_hash("model", "pretrain", "pretrain_bytes",
                                       "sources", "targets")

    # pretraining, one model per source
    for src in manifest.sources:
        stage_dir = store.pretrain_dir(src.tag)
        outputs = [stage_dir / "checkpoint.bin", stage_dir / "record.json",
                   stage_dir / "loss_curve.csv"]
        content = train_hash + f":pretrain:{src.tag}"
        if not force and _stage_current(stage_dir, content, outputs):
            continue
        try:
            pre_part, _ = _pretrain_pool_split(manifest, corpora, src.tag)
            pretrain(manifest.model_config, pre_cfg, pre_part, stage_dir,
                     run_id=f"pretrain_{src.tag}")
            _write_stamp(stage_dir, content)
        except Exception as e:  # stage isolation: later stages may still run
            store.record_failure(f"pretrain[{src.tag}]", e)

    ladder_hash = manifest.section_hash("model", "finetune", "ladder",
                                        "eval_bytes", "sources", "targets",
                                        "pretrain_bytes")
    # scratch ladder + one finetuned ladder per (source, target)
    for tgt in manifest.targets:
        _, pool = _pretrain_pool_split(manifest, corpora, tgt.tag)
        for src_tag in [None] + [s.tag for s in manifest.sources]:
            stage_dir = store.ladder_dir(tgt.tag, src_tag)
            curve_path = store.curve_path(tgt.tag, src_tag)
            content = ladder_hash + f":ladder:{src_tag}:{tgt.tag}"
            if not force and _stage_current(stage_dir, content, [curve_path]):
                continue
            try:
                if src_tag is None:
                    init = None
                else:
                    ckpt = store.pretrain_dir(src_tag) / "checkpoint.bin"
                    if not ckpt.exists():
                        raise FileNotFoundError(f"missing checkpoint {ckpt}")
                    init = str(ckpt)
                curve, _ = finetune(init, manifest.ladder, pool, ft_cfg,
                                    out_dir=stage_dir,
                                    model_config=manifest.model_config,
                                    eval_bytes=manifest.eval_bytes,
                                    source_tag=src_tag)
                save_curve(curve, curve_path)
                _write_stamp(stage_dir, content)
            except Exception as e:
                store.record_failure(f"ladder[{src_tag}->{tgt.tag}]", e)

    _transfer_stage(manifest, store)
    _analysis_stage(manifest, store, corpora)
    if with_report:
        _report_stage(manifest, store)
    return store


def _import_curves(manifest: ExperimentManifest, store: ResultsStore) -> None:
    for path in manifest.curves:
        curve = load_curve(path)
        dest = store.path("curves", f"{curve.target}_{curve.init}.csv")
        save_curve(curve, dest)


def _transfer_stage(manifest: ExperimentManifest, store: ResultsStore) -> None:
    curves = store.curves()
    scratch = {c.target: c for c in curves if c.init == SCRATCH_TAG}
    for curve in curves:
        if curve.init == SCRATCH_TAG:
            continue
        try:
            if curve.target not in scratch:
                raise ValueError(f"no scratch curve for target {curve.target!r}")
            est = data_transfer(scratch[curve.target], curve)
            est.to_json(store.transfer_path(curve.init, curve.target))
        except Exception as e:
            store.record_failure(f"transfer[{curve.init}->{curve.target}]", e)


def _dt_records(store: ResultsStore) -> list[dict]:
    records = []
    for est in store.estimates():
        for rung in est.rungs:
            records.append({"source": est.source, "target": est.target,
                            "rung_bytes": rung["size_bytes"],
                            "dt_bytes": rung["dt_bytes"],
                            "clamped": rung["clamped"]})
    return records


def _analysis_stage(manifest: ExperimentManifest, store: ResultsStore,
                    corpora: dict[str, Corpus] | None) -> None:
    options = manifest.analysis
    records = _dt_records(store)
    if records:
        with open(store.analysis_path("dt_records.jsonl"), "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")

    # commutativity over pairs measured in both directions (smallest rung)
    try:
        table = {}
        for est in store.estimates():
            table[(est.source, est.target)] = est.smallest_rung["dt_bytes"] / 1e6
        if any((b, a) in table for (a, b) in table if a != b):
            report = commutativity(table, unit="MB")
            report.to_json(store.analysis_path("commutativity.json"))
    except Exception as e:
        store.record_failure("commutativity", e)

    if corpora and options.get("contamination", True):
        _contamination_and_correlations(manifest, store, corpora, records, options)

    if options.get("distance_table") and records:
        try:
            dt_table = DistanceTable.load(
                manifest.resolve_path(options["distance_table"]))
            pairs = sorted({(r["source"], r["target"]) for r in records})
            results = []
            for measure in dt_table.measures:
                values = dt_table.pair_values(measure, pairs)
                try:
                    res = correlate(records, f"distance:{measure}", values,
                                    exclude_largest_rung=bool(options["exclude_largest_rung"]),
                                    n_permutations=int(options["n_permutations"]),
                                    seed=manifest.seed)
                    results.append(res.to_dict())
                except ValueError as e:
                    results.append({"measure": f"distance:{measure}", "error": str(e)})
            store.analysis_path("correlation_distance.json").write_text(
                json.dumps(results, indent=2) + "\n")
        except Exception as e:
            store.record_failure("distance-correlation", e)


def _contamination_and_correlations(manifest, store, corpora, records, options):
    try:
        classifier = train_langid([corpora[t] for t in sorted(corpora)])
    except Exception as e:
        store.record_failure("langid", e)
        return
    threshold = float(options["contamination_threshold"])
    pairs = sorted({(r["source"], r["target"]) for r in records
                    if r["source"] in corpora and r["target"] in corpora})
    on_source: dict[tuple[str, str], float] = {}
    on_target: dict[tuple[str, str], float] = {}
    reports = []
    for source, target in pairs:
        if source == target:
            continue
        try:
            rep_t = contamination_ratio(classifier, corpora[target], source,
                                        threshold, direction="on_target")
            rep_s = contamination_ratio(classifier, corpora[source], target,
                                        threshold, direction="on_source")
            on_target[(source, target)] = rep_t.ratio
            on_source[(source, target)] = rep_s.ratio
            reports += [rep_t.to_dict(), rep_s.to_dict()]
        except Exception as e:
            store.record_failure(f"contamination[{source},{target}]", e)
    if reports:
        store.analysis_path("contamination.json").write_text(
            json.dumps(reports, indent=2) + "\n")
    results = []
    for name, values in (("contamination_on_source", on_source),
                         ("contamination_on_target", on_target)):
        try:
            res = correlate(records, name, values,
                            exclude_largest_rung=bool(options["exclude_largest_rung"]),
                            n_permutations=int(options["n_permutations"]),
                            seed=manifest.seed)
            results.append(res.to_dict())
        except ValueError as e:
            results.append({"measure": name, "error": str(e)})
    if results:
        store.analysis_path("correlation_contamination.json").write_text(
            json.dumps(results, indent=2) + "\n")


def _report_stage(manifest: ExperimentManifest, store: ResultsStore) -> None:
    from .report import write_report
    try:
        write_report(store)
    except Exception as e:
        store.record_failure("report", e)
