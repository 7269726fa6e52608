"""Tokenization, vocabularies, and verbalization of triplets and paths."""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import TYPE_CHECKING, Iterable, NamedTuple

from .ontology import Ontology, Path, Relation

if TYPE_CHECKING:
    from .corpus import Corpus, MaskedPath, MaskedTriplet

PAD, UNK, CLS, SEP, MASK_TOKEN = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK_TOKEN)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
RELATION_TOKENS = {r: f"[{r.value}]" for r in Relation}
VOCAB_SCHEMA = "ontomatch.vocab"
TRIPLET_MAX_LEN = 64
PATH_MAX_LEN = 160

_SPLIT = re.compile(r"[^\w]+|_+", re.UNICODE)


class EmptyCorpus(ValueError):
    pass


class SequenceTooLong(UserWarning):
    pass


class UnknownConcept(KeyError):
    pass


def tokenize(label: str) -> list[str]:
    """Case-fold and split on whitespace/punctuation, dropping the punctuation."""
    return [tok for tok in _SPLIT.split(label.casefold()) if tok]


def _digest(items: Iterable[str]) -> str:
    h = hashlib.sha256()
    for item in items:
        h.update(item.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


class Vocab:
    """Word-level token vocabulary: specials, one token per relation, then words."""

    def __init__(self, words: Iterable[str] = (), min_freq: int = 1):
        self.tokens: list[str] = list(SPECIALS) + [RELATION_TOKENS[r] for r in Relation] + list(words)
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, label: str) -> list[int]:
        return [self[tok] for tok in tokenize(label)] or [UNK_ID]

    def relation_id(self, relation: Relation) -> int:
        return self.token_to_id[RELATION_TOKENS[relation]]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def digest(self) -> str:
        return _digest(self.tokens)

    def dumps(self) -> str:
        header = {
            "schema": VOCAB_SCHEMA,
            "version": 1,
            "kind": "tokens",
            "specials": {tok: i for i, tok in enumerate(SPECIALS)},
            "relations": {r.value: self.relation_id(r) for r in Relation},
            "min_freq": self.min_freq,
        }
        return "\n".join([json.dumps(header, sort_keys=True)] + self.tokens) + "\n"

    @classmethod
    def loads(cls, text: str) -> Vocab:
        header, tokens = _split_vocab_file(text, "tokens")
        fixed = len(SPECIALS) + len(Relation)
        vocab = cls(tokens[fixed:], header.get("min_freq", 1))
        if vocab.tokens != tokens:
            raise ValueError("vocabulary file has misplaced special or relation tokens")
        return vocab


class ConceptVocab:
    """Dense indices over globally qualified concept ids."""

    def __init__(self, concept_ids: Iterable[str]):
        self.ids: list[str] = list(concept_ids)
        self.concept_to_id = {c: i for i, c in enumerate(self.ids)}
        if len(self.concept_to_id) != len(self.ids):
            raise ValueError("duplicate concept in concept vocabulary")

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.concept_to_id

    def __getitem__(self, concept_id: str) -> int:
        try:
            return self.concept_to_id[concept_id]
        except KeyError:
            raise UnknownConcept(concept_id) from None

    @property
    def digest(self) -> str:
        return _digest(self.ids)

    def dumps(self) -> str:
        header = {"schema": VOCAB_SCHEMA, "version": 1, "kind": "concepts"}
        return "\n".join([json.dumps(header, sort_keys=True)] + self.ids) + "\n"

    @classmethod
    def loads(cls, text: str) -> ConceptVocab:
        return cls(_split_vocab_file(text, "concepts")[1])


def _split_vocab_file(text: str, kind: str) -> tuple[dict, list[str]]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError("empty vocabulary file")
    header = json.loads(lines[0])
    if header.get("schema") != VOCAB_SCHEMA or header.get("kind") != kind:
        raise ValueError(f"not a {kind} vocabulary file")
    return header, lines[1:]


def save_vocab(vocab: Vocab | ConceptVocab, path: str | FsPath) -> None:
    FsPath(path).write_text(vocab.dumps(), encoding="utf-8")


def load_vocab(path: str | FsPath) -> Vocab:
    return Vocab.loads(FsPath(path).read_text(encoding="utf-8"))


def load_concept_vocab(path: str | FsPath) -> ConceptVocab:
    return ConceptVocab.loads(FsPath(path).read_text(encoding="utf-8"))


def _corpus_labels(corpus: Corpus) -> Iterable[str]:
    for t in corpus.positive_triplets + corpus.negative_triplets:
        yield t.head_text
        yield t.tail_text
    for p in corpus.positive_paths + corpus.negative_paths:
        for node in p.concepts:
            yield node.label


def build_vocabs(corpus: Corpus, ontologies: list[Ontology], min_freq: int = 1) -> tuple[Vocab, ConceptVocab]:
    """Token vocab ordered by (frequency desc, token); concept vocab in ontology order.

    Concept labels from ``ontologies`` are counted alongside the corpus so
    concepts without any edge still verbalize without [UNK].
    """
    if len(corpus) == 0:
        raise EmptyCorpus("cannot build vocabularies from an empty corpus")
    counts: Counter[str] = Counter()
    for label in _corpus_labels(corpus):
        counts.update(tokenize(label))
    for o in ontologies:
        for c in o.concepts.values():
            for label in c.labels:
                counts.update(tokenize(label))
    reserved = set(SPECIALS) | set(RELATION_TOKENS.values())
    words = sorted((w for w, n in counts.items() if n >= min_freq and w not in reserved), key=lambda w: (-counts[w], w))
    concepts = [gid for o in ontologies for gid in o.global_ids()]
    return Vocab(words, min_freq), ConceptVocab(concepts)


# ---------------------------------------------------------------- sequences


class MaskSlot(NamedTuple):
    position: int
    target: int | None
    space: str  # "concept" (ConceptVocab index) or "token" (Vocab index)


@dataclass
class TokenSeq:
    ids: list[int]
    mask_slots: list[MaskSlot] = field(default_factory=list)
    max_len: int = TRIPLET_MAX_LEN
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)


def _trim_segments(segments: list[list[int]], fixed: int, max_len: int, keep: set[int] = frozenset()) -> bool:
    """Shorten the longest trimmable segment from its end until everything fits."""
    trimmed = False
    while fixed + sum(map(len, segments)) > max_len:
        candidates = [i for i, s in enumerate(segments) if len(s) > 1 and i not in keep]
        if not candidates:
            raise ValueError(f"sequence cannot fit in {max_len} positions without dropping structure")
        longest = max(candidates, key=lambda i: (len(segments[i]), i))
        segments[longest].pop()
        trimmed = True
    return trimmed


def _concept_target(concept_vocab: ConceptVocab | None, concept_id: str) -> int | None:
    if concept_vocab is None:
        return None
    return concept_vocab[concept_id]


def verbalize_triplet(
    mt: MaskedTriplet,
    view: str,
    vocab: Vocab,
    concept_vocab: ConceptVocab | None = None,
    max_len: int = TRIPLET_MAX_LEN,
) -> TokenSeq:
    """Render one masked view as ``[CLS] head [SEP] rel [SEP] tail [SEP]``.

    ``view`` is ``"A"`` (tail masked), ``"B"`` (head and relation masked) or
    ``"RelMasked"``.
    """
    t = mt.base
    head = [MASK_ID] if view == "B" else vocab.encode(t.head_text)
    tail = [MASK_ID] if view == "A" else vocab.encode(t.tail_text)
    rel = MASK_ID if view in ("B", "RelMasked") else vocab.relation_id(t.relation)
    if view not in ("A", "B", "RelMasked"):
        raise ValueError(f"unknown view {view!r}")
    segs = [head, tail]
    keep = {0} if view == "B" else {1} if view == "A" else set()
    truncated = _trim_segments(segs, 5, max_len, keep)
    if truncated:
        warnings.warn(f"triplet {t.head_id} -> {t.tail_id} truncated to {max_len}", SequenceTooLong)
    head, tail = segs
    ids = [CLS_ID, *head, SEP_ID, rel, SEP_ID, *tail, SEP_ID]
    rel_pos = 2 + len(head)
    tail_pos = rel_pos + 2
    if view == "A":
        slots = [MaskSlot(tail_pos, _concept_target(concept_vocab, t.tail_id), "concept")]
    elif view == "B":
        slots = [
            MaskSlot(1, _concept_target(concept_vocab, t.head_id), "concept"),
            MaskSlot(rel_pos, vocab.relation_id(t.relation), "token"),
        ]
    else:
        slots = [MaskSlot(rel_pos, vocab.relation_id(mt.relation_label), "token")]
    return TokenSeq(ids, slots, max_len, truncated)


def verbalize_query(label: str, vocab: Vocab, max_len: int = TRIPLET_MAX_LEN) -> TokenSeq:
    """``[CLS] label [SEP] [Synonym] [SEP] [MASK] [SEP]``: a synonym triplet with its tail masked."""
    tokens = vocab.encode(label)[: max_len - 5]
    ids = [CLS_ID, *tokens, SEP_ID, vocab.relation_id(Relation.Synonym), SEP_ID, MASK_ID, SEP_ID]
    return TokenSeq(ids, [MaskSlot(len(ids) - 2, None, "concept")], max_len)


def verbalize_path(
    p: Path | MaskedPath,
    vocab: Vocab,
    concept_vocab: ConceptVocab | None = None,
    max_len: int = PATH_MAX_LEN,
) -> TokenSeq:
    """``[CLS] c0 [SEP] rel0 [SEP] c1 [SEP] ...``; masked concepts collapse to one [MASK]."""
    if isinstance(p, Path):
        path, masked = p, ()
    else:
        path, masked = p.base, p.masked_positions
    masked = set(masked)
    segs = [[MASK_ID] if i in masked else vocab.encode(n.label) for i, n in enumerate(path.concepts)]
    rels = [vocab.relation_id(r) for r in path.relations]

    def size() -> int:
        return 1 + sum(len(s) + 1 for s in segs) + 2 * len(rels)

    truncated = False
    while size() > max_len and len(segs) > 2 and (len(segs) - 1) not in masked:
        segs.pop()
        rels.pop()
        truncated = True
    fixed = 1 + len(segs) + 2 * len(rels)
    truncated |= _trim_segments(segs, fixed, max_len, masked)
    if truncated:
        warnings.warn(f"path from {path.concepts[0].id} truncated to {max_len}", SequenceTooLong)

    ids, slots = [CLS_ID], []
    for i, seg in enumerate(segs):
        if i:
            ids += [rels[i - 1], SEP_ID]
        if i in masked:
            slots.append(MaskSlot(len(ids), _concept_target(concept_vocab, path.concepts[i].id), "concept"))
        ids += seg + [SEP_ID]
    return TokenSeq(ids, slots, max_len, truncated)
