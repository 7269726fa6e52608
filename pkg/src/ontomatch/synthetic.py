"""Synthetic ontology pairs with a known gold alignment, for desk-scale runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import ReferenceSet
from .ontology import Concept, Ontology, build_ontology

_ONSETS = ("b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "cl", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u", "ia", "eo")
_CODAS = ("", "n", "r", "s", "l", "x", "m")


@dataclass(frozen=True)
class PerturbationConfig:
    """Per-concept rates applied when deriving the target ontology."""

    synonym_swap: float = 0.0  # primary label exchanged with one of its synonyms
    reorder: float = 0.0  # tokens of the primary label shuffled
    drop: float = 0.0  # one token dropped from a multi-word primary label
    delete: float = 0.0  # fraction of concepts absent from the target

    def __post_init__(self):
        for name in ("synonym_swap", "reorder", "drop", "delete"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


MODERATE = PerturbationConfig(synonym_swap=0.2, reorder=0.2, drop=0.1, delete=0.1)
NONE = PerturbationConfig()


def _word_pool(rng: np.random.Generator, n: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < n:
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(int(rng.integers(2, 4)))
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _source(n: int, rng: np.random.Generator, onto_id: str) -> Ontology:
    words = iter(_word_pool(rng, 8 * n))
    parents: list[list[int]] = [[]]
    for i in range(1, n):
        first = int(rng.integers(i))
        ps = [first]
        if i > 3 and rng.random() < 0.1:
            extra = int(rng.integers(i))
            if extra != first:
                ps.append(extra)
        parents.append(ps)
    heads = [next(words) for _ in range(n)]
    labels: list[tuple[str, ...]] = []
    for i in range(n):
        # children inherit the head noun of their (first) parent
        tail = heads[parents[i][0]] if parents[i] else next(words)
        primary = " ".join([heads[i]] + ([next(words)] if rng.random() < 0.5 else []) + [tail])
        syns = tuple(f"{next(words)} {next(words)}" for _ in range(int(rng.integers(1, 3))))
        labels.append((primary, *syns))
    disjoint: dict[int, list[int]] = {i: [] for i in range(n)}
    by_parent: dict[int, list[int]] = {}
    for i in range(1, n):
        by_parent.setdefault(parents[i][0], []).append(i)
    for sibs in by_parent.values():
        if len(sibs) >= 2 and rng.random() < 0.5:
            a, b = sorted(rng.choice(sibs, size=2, replace=False).tolist())
            disjoint[a].append(b)
    ids = [f"C{i:04d}" for i in range(n)]
    concepts = [
        Concept(ids[i], labels[i], None, tuple(ids[p] for p in parents[i]), tuple(ids[d] for d in disjoint[i]))
        for i in range(n)
    ]
    return build_ontology(onto_id, concepts)


def _perturb_label(labels: tuple[str, ...], cfg: PerturbationConfig, rng: np.random.Generator) -> tuple[str, ...]:
    primary, syns = labels[0], list(labels[1:])
    if syns and rng.random() < cfg.synonym_swap:
        i = int(rng.integers(len(syns)))
        primary, syns[i] = syns[i], primary
    tokens = primary.split()
    if len(tokens) > 1 and rng.random() < cfg.reorder:
        tokens = [tokens[i] for i in rng.permutation(len(tokens))]
    if len(tokens) > 1 and rng.random() < cfg.drop:
        del tokens[int(rng.integers(len(tokens)))]
    return (" ".join(tokens), *[s for s in syns if s != " ".join(tokens)])


def gen_synthetic_pair(
    n_concepts: int,
    perturbation: PerturbationConfig = MODERATE,
    seed: int = 0,
    source_id: str = "src",
    target_id: str = "tgt",
) -> tuple[Ontology, Ontology, ReferenceSet]:
    """Random subclass DAG plus a perturbed, re-identified copy and the surviving identity pairs.

    Exactly ``round(delete * n_concepts)`` non-root concepts are removed from
    the target; their children are re-attached to the removed concept's parents.
    """
    if n_concepts < 10:
        raise ValueError("n_concepts must be >= 10")
    rng = np.random.default_rng(seed)
    src = _source(n_concepts, rng, source_id)
    local = sorted(src.concepts)
    non_roots = [c for c in local if c not in src.roots]
    n_del = min(int(round(perturbation.delete * n_concepts)), len(non_roots))
    deleted = set(rng.choice(non_roots, size=n_del, replace=False).tolist()) if n_del else set()
    kept = [c for c in local if c not in deleted]
    fresh = {c: f"T{k:04d}" for k, c in zip(rng.permutation(len(kept)), kept)}

    def surviving_parents(cid: str) -> list[str]:
        out: list[str] = []
        for p in src.concepts[cid].subclass_of:
            for q in [p] if p not in deleted else surviving_parents(p):
                if q not in out:
                    out.append(q)
        return out

    concepts = []
    for cid in kept:
        c = src.concepts[cid]
        concepts.append(
            Concept(
                fresh[cid],
                _perturb_label(c.labels, perturbation, rng),
                c.description,
                tuple(fresh[p] for p in surviving_parents(cid)),
                tuple(fresh[d] for d in c.disjoint_with if d not in deleted),
            )
        )
    tgt = build_ontology(target_id, concepts)
    gold = ReferenceSet.of((src.qualify(c), tgt.qualify(fresh[c])) for c in kept)
    return src, tgt, gold
