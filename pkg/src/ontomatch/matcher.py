"""Zero-shot mapping inference: masked-concept candidates, fused scoring, one-to-one selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .encoder import ModelParams, collate, concept_logits, encode_batch, gather_slots
from .kge import TransEEmbeddings, embed_concept
from .ontology import Ontology, split_qualified
from .text import ConceptVocab, UnknownConcept, Vocab, tokenize, verbalize_query

FLAG_LEXICAL = "lexical_fallback"


class UntrainedModel(RuntimeError):
    pass


class CandidateSet(NamedTuple):
    source: str
    candidates: list[tuple[str, float]]


@dataclass(frozen=True)
class Mapping:
    source: str
    target: str
    score: float
    flags: tuple[str, ...] = ()
    relation: str = "="

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"mapping score {self.score} outside [0, 1]")


@dataclass
class AlignmentSet:
    mappings: list[Mapping]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sources = {m.source for m in self.mappings}
        targets = {m.target for m in self.mappings}
        if len(sources) != len(self.mappings) or len(targets) != len(self.mappings):
            raise ValueError("alignment is not one-to-one")

    def __len__(self) -> int:
        return len(self.mappings)

    def __iter__(self):
        return iter(self.mappings)

    def pairs(self) -> set[tuple[str, str]]:
        return {(m.source, m.target) for m in self.mappings}

    def to_tsv(self) -> str:
        return "".join(
            f"{m.source}\t{m.target}\t{m.relation}\t{m.score:.6f}\t{','.join(m.flags)}\n" for m in self.mappings
        )

    def to_json(self) -> str:
        body = {
            "metadata": self.metadata,
            "mappings": [
                {"source": m.source, "target": m.target, "relation": m.relation, "score": round(m.score, 6), "flags": list(m.flags)}
                for m in self.mappings
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def parse_alignment_tsv(text: str) -> AlignmentSet:
    mappings = []
    for line in text.splitlines():
        if not line.strip():
            continue
        cols = line.split("\t")
        flags = tuple(f for f in (cols[4].split(",") if len(cols) > 4 else []) if f)
        mappings.append(Mapping(cols[0], cols[1], float(cols[3]), flags, cols[2]))
    return AlignmentSet(mappings)


# ---------------------------------------------------------------- candidates


def _require_trained(params: ModelParams) -> None:
    if params.steps == 0:
        raise UntrainedModel("parameters have not been trained; refusing to predict")


def concept_probabilities(labels: Sequence[str], params: ModelParams, vocab: Vocab) -> np.ndarray:
    """Concept-head softmax at the query mask, one row per label."""
    _require_trained(params)
    batch = collate([verbalize_query(label, vocab) for label in labels])
    hidden, _ = encode_batch(batch, params)
    rows, cols, _ = gather_slots(batch, "concept")
    logits = concept_logits(hidden, rows, cols, params).data
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def top_k(source: str, probs: np.ndarray, concept_vocab: ConceptVocab, k: int) -> CandidateSet:
    # descending probability, ties broken by concept id
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], concept_vocab.ids[i]))[:k]
    return CandidateSet(source, [(concept_vocab.ids[i], float(probs[i])) for i in order])


def predict_candidates(
    source_id: str,
    label: str,
    params: ModelParams,
    vocab: Vocab,
    concept_vocab: ConceptVocab,
    k: int = 5,
) -> CandidateSet:
    if k < 1:
        raise ValueError("k must be >= 1")
    return top_k(source_id, concept_probabilities([label], params, vocab)[0], concept_vocab, k)


def predict_candidates_batch(
    items: Sequence[tuple[str, str]],
    params: ModelParams,
    vocab: Vocab,
    concept_vocab: ConceptVocab,
    k: int = 5,
    chunk: int = 64,
) -> list[CandidateSet]:
    """``predict_candidates`` over (source id, label) pairs, encoded in chunks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for start in range(0, len(items), chunk):
        part = items[start : start + chunk]
        probs = concept_probabilities([label for _, label in part], params, vocab)
        out.extend(top_k(sid, row, concept_vocab, k) for (sid, _), row in zip(part, probs))
    return out


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 0.0


def lexical_candidates(label: str, target: Ontology, k: int) -> list[str]:
    toks = tokenize(label)
    scored = []
    for gid in target.global_ids():
        c = target.concepts[split_qualified(gid)[1]]
        scored.append((-max(jaccard(toks, tokenize(lab)) for lab in c.labels), gid))
    return [gid for neg, gid in sorted(scored)[:k] if neg < 0]


def ground_candidates(cs: CandidateSet, target: Ontology, source_label: str | None = None) -> tuple[list[str], bool]:
    """Candidates owned by ``target``; (grounded ids, used_fallback).

    When none survive and ``source_label`` is given, the best target concepts
    by token Jaccard stand in and the fallback flag is raised.
    """
    grounded = [cid for cid, _ in cs.candidates if target.owns(cid)]
    if grounded or source_label is None:
        return grounded, False
    return lexical_candidates(source_label, target, max(1, len(cs.candidates))), True


# ---------------------------------------------------------------- scoring


def concept_features(labels: Sequence[str], params: ModelParams, vocab: Vocab, chunk: int = 64) -> np.ndarray:
    """f(c): the [CLS] feature of each concept's query verbalization."""
    feats = []
    for start in range(0, len(labels), chunk):
        batch = collate([verbalize_query(label, vocab) for label in labels[start : start + chunk]])
        feats.append(encode_batch(batch, params)[1].data)
    return np.concatenate(feats) if feats else np.zeros((0, params.config.dim))


def fused_vector(feature: np.ndarray, concept_id: str, transe: TransEEmbeddings | None, concept_vocab: ConceptVocab) -> np.ndarray:
    if transe is None:
        if concept_id not in concept_vocab:
            raise UnknownConcept(concept_id)
        return np.asarray(feature, dtype=float)
    return np.concatenate([feature, embed_concept(concept_id, transe, concept_vocab)])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def fuse_score(f_c: np.ndarray, e_c: np.ndarray, f_t: np.ndarray, e_t: np.ndarray) -> float:
    """cos(concat(f(c), e(c)), concat(f(c'), e(c')))."""
    return cosine(np.concatenate([f_c, e_c]), np.concatenate([f_t, e_t]))


class ScoredPair(NamedTuple):
    source: str
    target: str
    score: float
    flags: tuple[str, ...] = ()


def select_mappings(pairs: Iterable[ScoredPair], threshold: float = 0.0, one_to_one: bool = True) -> AlignmentSet:
    """Global greedy: highest clamped score first, ties by (source, target)."""
    ranked = sorted(
        (ScoredPair(p.source, p.target, min(max(p.score, 0.0), 1.0), tuple(p.flags)) for p in pairs),
        key=lambda p: (-p.score, p.source, p.target),
    )
    used_s: set[str] = set()
    used_t: set[str] = set()
    chosen = []
    for p in ranked:
        if p.score < threshold or p.source in used_s or p.target in used_t:
            continue
        chosen.append(Mapping(p.source, p.target, p.score, p.flags))
        used_s.add(p.source)
        if one_to_one:
            used_t.add(p.target)
    if not one_to_one:
        return _many(chosen)
    return AlignmentSet(sorted(chosen, key=lambda m: (m.source, m.target)))


def _many(chosen: list[Mapping]) -> AlignmentSet:
    out = AlignmentSet.__new__(AlignmentSet)
    out.mappings = sorted(chosen, key=lambda m: (m.source, m.target))
    out.metadata = {}
    return out


# ---------------------------------------------------------------- end to end


@dataclass(frozen=True)
class MatchConfig:
    k: int = 5
    threshold: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


def match(
    source: Ontology,
    target: Ontology,
    params: ModelParams,
    vocab: Vocab,
    concept_vocab: ConceptVocab,
    transe: TransEEmbeddings | None,
    cfg: MatchConfig = MatchConfig(),
) -> AlignmentSet:
    _require_trained(params)
    src_items = [(gid, source.concepts[split_qualified(gid)[1]].label) for gid in source.global_ids()]
    cands = predict_candidates_batch(src_items, params, vocab, concept_vocab, cfg.k)
    grounded = {}
    needed: set[str] = set()
    for (gid, label), cs in zip(src_items, cands):
        ids, fallback = ground_candidates(cs, target, label)
        grounded[gid] = (ids, (FLAG_LEXICAL,) if fallback else ())
        needed.update(ids)
    tgt_ids = sorted(needed)
    tgt_labels = [target.concepts[split_qualified(g)[1]].label for g in tgt_ids]
    f_src = concept_features([label for _, label in src_items], params, vocab)
    f_tgt = dict(zip(tgt_ids, concept_features(tgt_labels, params, vocab)))
    scored = []
    for (gid, _), f in zip(src_items, f_src):
        u = fused_vector(f, gid, transe, concept_vocab)
        ids, flags = grounded[gid]
        for t in ids:
            scored.append(ScoredPair(gid, t, cosine(u, fused_vector(f_tgt[t], t, transe, concept_vocab)), flags))
    out = select_mappings(scored, cfg.threshold)
    out.metadata = {"k": cfg.k, "threshold": cfg.threshold, "n_scored": len(scored)}
    return out
