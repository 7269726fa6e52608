"""Reference alignments and precision / recall / F-score."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, NamedTuple

from .ontology import ParseError

EQUIVALENCE = "="


@dataclass(frozen=True)
class ReferenceSet:
    pairs: frozenset[tuple[str, str]]
    skipped: int = 0  # lines whose relation is not equivalence
    duplicates: int = 0

    @classmethod
    def of(cls, pairs: Iterable[tuple[str, str]]) -> ReferenceSet:
        return cls(frozenset(pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return pair in self.pairs

    def __iter__(self):
        return iter(sorted(self.pairs))


def _check_id(value, line: int) -> str:
    if not isinstance(value, str) or not value or any(ch.isspace() for ch in value):
        raise ParseError(f"malformed concept id {value!r}", line)
    return value


def _collect(rows: Iterable[tuple[int, str, str, str]]) -> ReferenceSet:
    pairs: set[tuple[str, str]] = set()
    skipped = duplicates = 0
    for line, src, tgt, rel in rows:
        pair = (_check_id(src, line), _check_id(tgt, line))
        if rel != EQUIVALENCE:
            skipped += 1
            continue
        if pair in pairs:
            duplicates += 1
        pairs.add(pair)
    return ReferenceSet(frozenset(pairs), skipped, duplicates)


def parse_reference_tsv(text: str) -> ReferenceSet:
    """``source<TAB>target<TAB>relation`` per line; extra columns are ignored, ``#`` lines skipped."""

    def rows():
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise ParseError("expected at least source and target columns", n)
            rel = cols[2].strip() if len(cols) > 2 else EQUIVALENCE
            yield n, cols[0].strip(), cols[1].strip(), rel

    return _collect(rows())


def parse_reference_json(text: str) -> ReferenceSet:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno) from None
    if isinstance(data, dict) and "mappings" in data:
        data = data["mappings"]
    if not isinstance(data, list):
        raise ParseError("expected a JSON array of {source, target} objects")

    def rows():
        for n, item in enumerate(data, 1):
            if not isinstance(item, dict) or "source" not in item or "target" not in item:
                raise ParseError(f"entry {n} lacks source/target")
            yield n, item["source"], item["target"], item.get("relation", EQUIVALENCE)

    return _collect(rows())


def load_reference(path: str | FsPath, format: str | None = None) -> ReferenceSet:
    path = FsPath(path)
    fmt = (format or ("json" if path.suffix.lower() == ".json" else "tsv")).lower()
    text = path.read_text(encoding="utf-8")
    if fmt == "json":
        return parse_reference_json(text)
    if fmt == "tsv":
        return parse_reference_tsv(text)
    raise ValueError(f"unknown reference format {format!r}")


def dumps_reference(ref: ReferenceSet) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerows((s, t, EQUIVALENCE) for s, t in sorted(ref.pairs))
    return buf.getvalue()


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    prf: PRF
    n_predicted: int
    n_reference: int
    n_correct: int
    extras: dict = field(default_factory=dict)

    def line(self) -> str:
        p, r, f, _ = self.prf
        return f"P={p:.4g} R={r:.4g} F={f:.4g}"


def _pairs(mappings) -> set[tuple[str, str]]:
    out = set()
    for m in mappings:
        if isinstance(m, tuple):
            out.add((m[0], m[1]))
        else:
            out.add((m.source, m.target))
    return out


def compute_prf(predicted, reference) -> PRF:
    """Set-based precision, recall and their harmonic mean over (source, target) pairs.

    ``predicted`` may be an AlignmentSet, Mapping objects or plain pairs;
    scores and flags are ignored.
    """
    m = _pairs(getattr(predicted, "mappings", predicted))
    ref = reference.pairs if isinstance(reference, ReferenceSet) else _pairs(reference)
    hit = len(m & ref)
    flags = []
    if not m:
        flags.append("empty_prediction")
    if not ref:
        flags.append("empty_reference")
    p = hit / len(m) if m else 0.0
    r = hit / len(ref) if ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, tuple(flags))


def evaluate(predicted, reference: ReferenceSet) -> EvalReport:
    m = _pairs(getattr(predicted, "mappings", predicted))
    return EvalReport(compute_prf(m, reference), len(m), len(reference), len(m & reference.pairs))
