"""Training corpus: negative sampling, masking, and newline-delimited persistence."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .ontology import (
    Ontology,
    Path,
    PathNode,
    Polarity,
    Relation,
    Triplet,
    extract_paths,
    extract_triplets,
    split_qualified,
)
from .text import tokenize

MASK = "[MASK]"
CORPUS_SCHEMA = "ontomatch.corpus"
CORPUS_VERSION = 1


class InsufficientCandidates(RuntimeError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    neg_per_pos: int = 2
    syn_candidate_pool: int = 16
    mask_count_path: int = 2
    short_path_threshold: int = 5
    long_path_replace_frac: float = 0.2
    max_path_len: int = 8
    max_paths_per_concept: int = 4
    p_syn: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.neg_per_pos < 1:
            raise ValueError("neg_per_pos must be >= 1")
        if not 0 < self.long_path_replace_frac < 1:
            raise ValueError("long_path_replace_frac must lie in (0, 1)")
        if self.mask_count_path < 1:
            raise ValueError("mask_count_path must be >= 1")
        if self.syn_candidate_pool < 1:
            raise ValueError("syn_candidate_pool must be >= 1")


@dataclass(frozen=True)
class MaskedTriplet:
    base: Triplet

    @property
    def view_a(self) -> tuple[str, Relation, str]:
        return (self.base.head_text, self.base.relation, MASK)

    @property
    def view_b(self) -> tuple[str, str, str]:
        return (MASK, MASK, self.base.tail_text)

    @property
    def relation_masked_view(self) -> tuple[str, str, str]:
        return (self.base.head_text, MASK, self.base.tail_text)

    @property
    def relation_label(self) -> Relation:
        return self.base.relation if self.base.polarity is Polarity.Positive else Relation.NoRelation


@dataclass(frozen=True)
class MaskedPath:
    base: Path
    masked_positions: tuple[int, ...]

    @property
    def target_concepts(self) -> tuple[str, ...]:
        return tuple(self.base.concepts[i].id for i in self.masked_positions)

    @property
    def polarity(self) -> Polarity:
        return self.base.polarity


def mask_triplet(t: Triplet) -> MaskedTriplet:
    return MaskedTriplet(t)


# ---------------------------------------------------------------- triplet negatives


def _sample(rng: np.random.Generator, pool: list[str], n: int) -> list[str]:
    if len(pool) <= n:
        return list(rng.permutation(pool)) if pool else []
    return [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]


def _no_overlap(o: Ontology, local: str, head_tokens: set[str]) -> bool:
    return not head_tokens.intersection(tokenize(o.concepts[local].label))


def gen_negative_triplets(t: Triplet, o: Ontology, cfg: CorpusConfig, rng: np.random.Generator) -> list[Triplet]:
    """Up to ``cfg.neg_per_pos`` negatives sharing head and relation with ``t``.

    Returns fewer when the ontology has too few eligible tails; the caller
    reads the shortfall from the length.
    """
    if t.polarity is not Polarity.Positive:
        raise ValueError("negatives are generated from positive triplets only")
    n = cfg.neg_per_pos
    head = split_qualified(t.head_id)[1]
    everyone = sorted(o.concepts)

    if t.relation is Relation.Synonym:
        head_tokens = set(tokenize(t.head_text))
        kids = o.children
        hood = set(kids[head])
        for parent in o.concepts[head].subclass_of:
            hood.update(kids[parent])
        hood.discard(head)
        drawn = _sample(rng, sorted(hood), cfg.syn_candidate_pool)
        chosen = _sample(rng, [c for c in drawn if _no_overlap(o, c, head_tokens)], n)
        if len(chosen) < n:
            taken = set(chosen) | {head}
            rest = [c for c in everyone if c not in taken and _no_overlap(o, c, head_tokens)]
            chosen += _sample(rng, rest, n - len(chosen))
    else:
        if t.relation is Relation.SubClassOf:
            excluded = o.ancestors(head)
        elif t.relation is Relation.DisjointWith:
            excluded = set(o.concepts[head].disjoint_with)
        else:
            raise ValueError(f"no negative strategy for {t.relation}")
        excluded = excluded | {head}
        chosen = _sample(rng, [c for c in everyone if c not in excluded], n)

    return [
        Triplet(t.head_text, t.relation, o.concepts[c].label, t.head_id, o.qualify(c), Polarity.Negative)
        for c in chosen
    ]


# ---------------------------------------------------------------- path negatives and masks


def replacement_count(length: int, cfg: CorpusConfig) -> int:
    if length < cfg.short_path_threshold:
        return 1
    return max(1, math.ceil(cfg.long_path_replace_frac * length))


def gen_negative_path(p: Path, o: Ontology, cfg: CorpusConfig, rng: np.random.Generator) -> Path:
    """Corrupt a positive path by swapping concepts for off-path ones; relations stay."""
    if p.polarity is not Polarity.Positive:
        raise ValueError("negatives are generated from positive paths only")
    k = replacement_count(p.length, cfg)
    on_path = {node.id for node in p.concepts}
    pool = [c for c in sorted(o.concepts) if o.qualify(c) not in on_path]
    if len(pool) < k:
        raise InsufficientCandidates(f"{o.id}: {len(pool)} off-path concepts, need {k}")
    positions = rng.choice(p.length, size=k, replace=False)
    picks = rng.choice(len(pool), size=k, replace=False)
    nodes = list(p.concepts)
    for pos, pick in zip(positions, picks):
        c = o.concepts[pool[pick]]
        nodes[pos] = PathNode(o.qualify(c.id), c.label)
    return Path(tuple(nodes), p.relations, Polarity.Negative)


def mask_count(length: int, cfg: CorpusConfig) -> int:
    return max(1, min(cfg.mask_count_path, (length - 1) // 2, length - 1))


def mask_path(p: Path, cfg: CorpusConfig, rng: np.random.Generator) -> MaskedPath:
    """Mask concept positions uniformly; position 0 is spared when the path has > 2 concepts."""
    if p.polarity is not Polarity.Positive:
        raise ValueError("only positive paths are masked")
    k = mask_count(p.length, cfg)
    first = 1 if p.length > 2 else 0
    positions = first + rng.choice(p.length - first, size=k, replace=False)
    return MaskedPath(p, tuple(sorted(int(i) for i in positions)))


# ---------------------------------------------------------------- corpus


@dataclass
class Corpus:
    positive_triplets: list[Triplet] = field(default_factory=list)
    negative_triplets: list[Triplet] = field(default_factory=list)
    positive_paths: list[Path] = field(default_factory=list)
    negative_paths: list[Path] = field(default_factory=list)
    masked_paths: list[MaskedPath] = field(default_factory=list)
    triplet_shortfall: int = 0
    path_shortfall: int = 0
    ontology_ids: list[str] = field(default_factory=list)
    config: CorpusConfig = field(default_factory=CorpusConfig)

    @property
    def masked_triplets(self) -> list[MaskedTriplet]:
        return [mask_triplet(t) for t in self.positive_triplets + self.negative_triplets]

    @property
    def positive_masked_triplets(self) -> list[MaskedTriplet]:
        return [mask_triplet(t) for t in self.positive_triplets]

    def __len__(self) -> int:
        return (
            len(self.positive_triplets)
            + len(self.negative_triplets)
            + len(self.positive_paths)
            + len(self.negative_paths)
        )


def build_corpus(ontologies: list[Ontology], cfg: CorpusConfig | None = None) -> Corpus:
    cfg = cfg or CorpusConfig()
    if not ontologies:
        raise ValueError("build_corpus needs at least one ontology")
    corpus = Corpus(ontology_ids=[o.id for o in ontologies], config=cfg)
    for oi, o in enumerate(ontologies):
        for i, t in enumerate(extract_triplets(o)):
            negs = gen_negative_triplets(t, o, cfg, np.random.default_rng([cfg.seed, oi, 0, i]))
            corpus.positive_triplets.append(t)
            corpus.negative_triplets.extend(negs)
            corpus.triplet_shortfall += cfg.neg_per_pos - len(negs)
        paths = extract_paths(o, cfg.max_path_len, cfg.max_paths_per_concept, cfg.p_syn, cfg.seed + oi)
        for j, p in enumerate(paths):
            corpus.positive_paths.append(p)
            for r in range(cfg.neg_per_pos):
                try:
                    corpus.negative_paths.append(
                        gen_negative_path(p, o, cfg, np.random.default_rng([cfg.seed, oi, 1, j, r]))
                    )
                except InsufficientCandidates:
                    corpus.path_shortfall += 1
            corpus.masked_paths.append(mask_path(p, cfg, np.random.default_rng([cfg.seed, oi, 2, j])))
    return corpus


# ---------------------------------------------------------------- persistence


def _triplet_record(t: Triplet) -> dict:
    return {
        "kind": "triplet",
        "polarity": t.polarity.value,
        "tokens": [t.head_text, t.relation.value, t.tail_text],
        "ids": [t.head_id, t.tail_id],
        "mask_positions": [],
        "targets": [],
    }


def _path_record(p: Path, kind: str = "path", masked: tuple[int, ...] = ()) -> dict:
    tokens: list[str] = [p.concepts[0].label]
    for rel, node in zip(p.relations, p.concepts[1:]):
        tokens += [rel.value, node.label]
    return {
        "kind": kind,
        "polarity": p.polarity.value,
        "tokens": tokens,
        "ids": [n.id for n in p.concepts],
        "mask_positions": list(masked),
        "targets": [p.concepts[i].id for i in masked],
    }


def corpus_records(corpus: Corpus) -> list[dict]:
    records = [_triplet_record(t) for t in corpus.positive_triplets + corpus.negative_triplets]
    records += [_path_record(p) for p in corpus.positive_paths + corpus.negative_paths]
    records += [_path_record(m.base, "masked_path", m.masked_positions) for m in corpus.masked_paths]
    return records


def dumps_corpus(corpus: Corpus) -> str:
    header = {
        "schema": CORPUS_SCHEMA,
        "version": CORPUS_VERSION,
        "ontologies": corpus.ontology_ids,
        "config": asdict(corpus.config),
        "shortfall": {"triplets": corpus.triplet_shortfall, "paths": corpus.path_shortfall},
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(r, sort_keys=True, ensure_ascii=False) for r in corpus_records(corpus)]
    return "\n".join(lines) + "\n"


def write_corpus(corpus: Corpus, path: str | FsPath) -> None:
    FsPath(path).write_text(dumps_corpus(corpus), encoding="utf-8")


def _path_from_record(rec: dict) -> Path:
    tokens, ids = rec["tokens"], rec["ids"]
    nodes = tuple(PathNode(i, lab) for i, lab in zip(ids, tokens[0::2]))
    rels = tuple(Relation(r) for r in tokens[1::2])
    return Path(nodes, rels, Polarity(rec["polarity"]))


def read_corpus(path: str | FsPath) -> Corpus:
    lines = FsPath(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty corpus file")
    header = json.loads(lines[0])
    if header.get("schema") != CORPUS_SCHEMA or header.get("version") != CORPUS_VERSION:
        raise ValueError(f"{path}: not a v{CORPUS_VERSION} corpus file")
    corpus = Corpus(
        ontology_ids=header["ontologies"],
        config=CorpusConfig(**header["config"]),
        triplet_shortfall=header["shortfall"]["triplets"],
        path_shortfall=header["shortfall"]["paths"],
    )
    for line in lines[1:]:
        rec = json.loads(line)
        pol = Polarity(rec["polarity"])
        if rec["kind"] == "triplet":
            h, r, t = rec["tokens"]
            trip = Triplet(h, Relation(r), t, rec["ids"][0], rec["ids"][1], pol)
            (corpus.positive_triplets if pol is Polarity.Positive else corpus.negative_triplets).append(trip)
        elif rec["kind"] == "path":
            p = _path_from_record(rec)
            (corpus.positive_paths if pol is Polarity.Positive else corpus.negative_paths).append(p)
        elif rec["kind"] == "masked_path":
            corpus.masked_paths.append(MaskedPath(_path_from_record(rec), tuple(rec["mask_positions"])))
        else:
            raise ValueError(f"{path}: unknown record kind {rec['kind']!r}")
    return corpus
