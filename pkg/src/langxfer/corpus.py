"""Corpus handling: UTF-8 byte tokenization, budgeted document sampling,
and packing into fixed-length training sequences.

A corpus is a list of non-empty UTF-8 documents (one line/record each)
plus a language tag. Sizes are always measured in bytes of the UTF-8
encoding, including the newline separators only where stated (packing).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEPARATOR_BYTE = 0x0A  # documents are joined with "\n" when packed


@dataclass
class Corpus:
    language: str
    documents: list[str] = field(repr=False)

    def __post_init__(self):
        for i, doc in enumerate(self.documents):
            if not doc:
                raise ValueError(f"document {i} is empty")
            if "\n" in doc:
                raise ValueError(f"document {i} contains a newline; one record per line")

    @property
    def total_bytes(self) -> int:
        return sum(len(d.encode("utf-8")) for d in self.documents)

    def __len__(self) -> int:
        return len(self.documents)


def utf8_bytes(text: str) -> np.ndarray:
    """Identity byte tokenizer: UTF-8 bytes of ``text`` as ids in [0, 255]."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def decode_bytes(ids) -> str:
    """Inverse of utf8_bytes (raises on byte sequences that are not UTF-8)."""
    return bytes(np.asarray(ids, dtype=np.uint8)).decode("utf-8")


def load_corpus(path, language: str | None = None, fmt: str = "auto") -> Corpus:
    """Read a corpus file: JSON-lines records with a "text" field, or plain
    text with one document per line. Invalid UTF-8 is reported with its
    byte offset."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ValueError(f"{path}: invalid UTF-8 at byte offset {e.start}") from None
    lines = [ln for ln in text.split("\n") if ln.strip()]
    if fmt == "auto":
        fmt = "jsonl" if lines and lines[0].lstrip().startswith("{") else "text"
    docs: list[str] = []
    meta_language = None
    if fmt == "jsonl":
        for i, line in enumerate(lines):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{i + 1}: bad JSON record: {e}") from None
            if "_meta" in rec:
                meta_language = rec["_meta"].get("language", meta_language)
                continue
            if "text" not in rec:
                raise ValueError(f"{path}:{i + 1}: record has no 'text' field")
            if rec["text"]:
                docs.append(rec["text"])
    elif fmt == "text":
        docs = lines
    else:
        raise ValueError(f"unknown corpus format {fmt!r}")
    tag = language or meta_language or Path(path).stem
    return Corpus(tag, docs)


def save_corpus(corpus: Corpus, path, metadata: dict | None = None) -> None:
    """Write JSON-lines with a "text" field per document; optional metadata
    (e.g. the generating language spec) goes into a leading _meta record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        meta = {"language": corpus.language}
        if metadata:
            meta.update(metadata)
        fh.write(json.dumps({"_meta": meta}, ensure_ascii=False) + "\n")
        for doc in corpus.documents:
            fh.write(json.dumps({"text": doc}, ensure_ascii=False) + "\n")
    tmp.replace(path)


def _truncate_at_boundary(doc: str, need: int) -> str:
    """First ``need`` bytes of ``doc``, cut back to a UTF-8 boundary and
    padded with spaces so the result is exactly ``need`` bytes."""
    raw = doc.encode("utf-8")[:need]
    while raw:
        try:
            prefix = raw.decode("utf-8")
            break
        except UnicodeDecodeError as e:
            raw = raw[:e.start]
    else:
        prefix = ""
    return prefix + " " * (need - len(prefix.encode("utf-8")))


def sample_budget(corpus: Corpus, budget_bytes: int, seed) -> Corpus:
    """Uniform sampling of documents without replacement, in seed-determined
    order, stopping at the first document that reaches the budget; that
    document is truncated so the result is exactly ``budget_bytes``."""
    sampled, _ = split_budget(corpus, budget_bytes, seed)
    return sampled


def split_budget(corpus: Corpus, budget_bytes: int, seed) -> tuple[Corpus, Corpus]:
    """Like sample_budget but also returns the untouched remainder of the
    corpus (the truncated document's tail is dropped from both halves, so
    the two parts never share text)."""
    if budget_bytes < 0:
        raise ValueError("budget must be >= 0")
    if budget_bytes == 0:
        return Corpus(corpus.language, []), Corpus(corpus.language, list(corpus.documents))
    total = corpus.total_bytes
    if budget_bytes > total:
        raise ValueError(f"budget {budget_bytes} exceeds corpus size {total}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus.documents))
    selected: list[str] = []
    used = np.zeros(len(corpus.documents), dtype=bool)
    acc = 0
    for idx in order:
        doc = corpus.documents[idx]
        size = len(doc.encode("utf-8"))
        if acc + size < budget_bytes:
            selected.append(doc)
            used[idx] = True
            acc += size
        else:
            need = budget_bytes - acc
            selected.append(doc if need == size else _truncate_at_boundary(doc, need))
            used[idx] = True
            acc = budget_bytes
            break
    rest = [corpus.documents[i] for i in range(len(corpus.documents)) if not used[i]]
    return Corpus(corpus.language, selected), Corpus(corpus.language, rest)


def pack(corpus: Corpus, seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Join documents with the 0x0A separator, chunk the byte stream into
    ``seq_len``-token sequences and pair each with its shift-by-one targets.
    The final partial chunk is dropped. Returns (inputs, targets), each of
    shape (n_sequences, seq_len)."""
    if seq_len < 2:
        raise ValueError("seq_len must be >= 2")
    if not corpus.documents:
        return (np.zeros((0, seq_len), dtype=np.int64),) * 2
    stream = np.frombuffer("\n".join(corpus.documents).encode("utf-8"), dtype=np.uint8)
    n = (len(stream) - 1) // seq_len
    if n <= 0:
        return (np.zeros((0, seq_len), dtype=np.int64),) * 2
    inputs = stream[:n * seq_len].reshape(n, seq_len).astype(np.int64)
    targets = stream[1:n * seq_len + 1].reshape(n, seq_len).astype(np.int64)
    return inputs, targets
