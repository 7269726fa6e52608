"""TransE relation embeddings used as a regularizer at matching time."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .ontology import EDGE_RELATIONS, Relation, Triplet
from .text import ConceptVocab, UnknownConcept

log = logging.getLogger(__name__)


class EmptyGraph(ValueError):
    pass


@dataclass(frozen=True)
class TransEConfig:
    dim: int = 32
    margin: float = 1.0
    lr: float = 0.01
    epochs: int = 100
    negatives: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")


@dataclass
class TransEEmbeddings:
    entities: np.ndarray  # (|ConceptVocab|, dim)
    relations: np.ndarray  # (len(EDGE_RELATIONS), dim)
    losses: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.entities.shape[1]


def relation_index(r: Relation) -> int:
    return EDGE_RELATIONS.index(r)


def id_triplets(triplets: list[Triplet], concept_vocab: ConceptVocab) -> np.ndarray:
    """Index-level (head, relation, tail) rows; identity edges (synonyms of one concept) are dropped."""
    rows = [
        (concept_vocab[t.head_id], relation_index(t.relation), concept_vocab[t.tail_id])
        for t in triplets
        if t.head_id != t.tail_id
    ]
    return np.array(sorted(set(rows)), dtype=np.intp).reshape(-1, 3)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def corrupt(triplets: np.ndarray, n_entities: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Replace head or tail (coin flip) with a uniform random entity, ``k`` times per triplet."""
    pos = np.repeat(triplets, k, axis=0)
    neg = pos.copy()
    swap_head = rng.random(len(neg)) < 0.5
    draws = rng.integers(n_entities, size=len(neg))
    neg[swap_head, 0] = draws[swap_head]
    neg[~swap_head, 2] = draws[~swap_head]
    return neg


def distances(ent: np.ndarray, rel: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    return np.linalg.norm(ent[triplets[:, 0]] + rel[triplets[:, 1]] - ent[triplets[:, 2]], axis=1)


def _loss_tensor(ent: ag.Tensor, rel: ag.Tensor, pos: np.ndarray, neg: np.ndarray, margin: float) -> ag.Tensor:
    def dist(tr: np.ndarray) -> ag.Tensor:
        h = ag.gather_rows(ent, tr[:, 0])
        r = ag.gather_rows(rel, tr[:, 1])
        t = ag.gather_rows(ent, tr[:, 2])
        return ag.l2_norm(ag.sub(ag.add(h, r), t))

    return ag.relu(ag.sub(ag.add(dist(pos), margin), dist(neg))).sum()


def init_embeddings(n_entities: int, n_relations: int, cfg: TransEConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(n_entities, cfg.dim))
    rel = _normalize_rows(rng.uniform(-bound, bound, size=(n_relations, cfg.dim)))
    return _normalize_rows(ent), rel


EXHAUSTIVE_GUARD_LIMIT = 200_000


def guard_pairs(triplets: np.ndarray, n_entities: int, seed: int, probe_k: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Positive/negative rows used to judge progress.

    Small graphs get every head and tail corruption; larger ones a fixed
    seeded sample of ``probe_k`` corruptions per triplet.
    """
    if len(triplets) * n_entities * 2 <= EXHAUSTIVE_GUARD_LIMIT:
        pos, neg = [], []
        for h, r, t in triplets:
            for x in range(n_entities):
                if x != t:
                    pos.append((h, r, t))
                    neg.append((h, r, x))
                if x != h:
                    pos.append((h, r, t))
                    neg.append((x, r, t))
        return np.array(pos, dtype=np.intp), np.array(neg, dtype=np.intp)
    neg = corrupt(triplets, n_entities, probe_k, np.random.default_rng([seed, 2]))
    return np.repeat(triplets, probe_k, axis=0), neg


def _mean_margin(ent: np.ndarray, rel: np.ndarray, pos: np.ndarray, neg: np.ndarray, margin: float) -> float:
    return float(np.maximum(0.0, margin + distances(ent, rel, pos) - distances(ent, rel, neg)).mean())


def train_transe(
    triplets: np.ndarray,
    n_entities: int,
    cfg: TransEConfig | None = None,
    n_relations: int = len(EDGE_RELATIONS),
) -> TransEEmbeddings:
    """Full-batch SGD on the margin ranking loss with uniform head/tail corruption.

    Entity rows are renormalized after every epoch. Progress is judged on a
    fixed guard set (see ``guard_pairs``); an epoch that raises the guard
    loss is rolled back and the learning rate halved, so the recorded loss
    never increases.
    """
    cfg = cfg or TransEConfig()
    triplets = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    if len(triplets) == 0:
        raise EmptyGraph("TransE needs at least one triplet")
    ent_np, rel_np = init_embeddings(n_entities, n_relations, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    g_pos, g_neg = guard_pairs(triplets, n_entities, cfg.seed)
    losses = [_mean_margin(ent_np, rel_np, g_pos, g_neg, cfg.margin)]
    lr = cfg.lr
    pos = np.repeat(triplets, cfg.negatives, axis=0)
    for _ in range(cfg.epochs):
        ent, rel = ag.parameter(ent_np), ag.parameter(rel_np)
        neg = corrupt(triplets, n_entities, cfg.negatives, rng)
        _loss_tensor(ent, rel, pos, neg, cfg.margin).backward()
        scale = lr / cfg.negatives
        new_ent = ent_np if ent.grad is None else ent_np - scale * ent.grad
        new_rel = rel_np if rel.grad is None else rel_np - scale * rel.grad
        new_ent = _normalize_rows(new_ent)
        value = _mean_margin(new_ent, new_rel, g_pos, g_neg, cfg.margin)
        if value > losses[-1]:
            lr /= 2
            losses.append(losses[-1])
            continue
        ent_np, rel_np = new_ent, new_rel
        losses.append(value)
    log.debug("transe: loss %.4f -> %.4f, final lr %.2e", losses[0], losses[-1], lr)
    return TransEEmbeddings(ent_np, rel_np, losses)


def train_transe_on(triplets: list[Triplet], concept_vocab: ConceptVocab, cfg: TransEConfig | None = None) -> TransEEmbeddings:
    """Train over positive triplets, typically the union of source and target graphs."""
    return train_transe(id_triplets(triplets, concept_vocab), len(concept_vocab), cfg)


def embed_concept(concept_id: str, emb: TransEEmbeddings, concept_vocab: ConceptVocab) -> np.ndarray:
    if concept_id not in concept_vocab:
        raise UnknownConcept(concept_id)
    return emb.entities[concept_vocab[concept_id]]


def tail_ranks(ent: np.ndarray, rel: np.ndarray, triplets: np.ndarray) -> np.ndarray:
    """Raw rank (1 = best) of the true tail among all entities, by distance to h + r."""
    ranks = np.empty(len(triplets), dtype=int)
    for n, (h, r, t) in enumerate(triplets):
        d = np.linalg.norm(ent[h] + rel[r] - ent, axis=1)
        ranks[n] = 1 + int((d < d[t]).sum())
    return ranks


def hits_at(ent: np.ndarray, rel: np.ndarray, triplets: np.ndarray, k: int = 1) -> float:
    return float((tail_ranks(ent, rel, triplets) <= k).mean())
