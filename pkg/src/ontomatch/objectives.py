"""The four self-supervised losses and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .corpus import Corpus, MaskedPath, MaskedTriplet
from .encoder import ModelParams, collate, concept_logits, encode_batch, gather_slots, path_logits, relation_logits
from .ontology import Path, Polarity
from .text import PATH_MAX_LEN, SPECIALS, TRIPLET_MAX_LEN, ConceptVocab, TokenSeq, Vocab, verbalize_path, verbalize_triplet

log = logging.getLogger(__name__)

OBJECTIVES = ("c2c", "c2r", "cpath", "mpath")


class BatchTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    lr: float = 5e-5
    temperature: float = 2.0
    seed: int = 0
    steps: int | None = None
    objectives: tuple[str, ...] = OBJECTIVES
    w_c2c: float = 1.0
    w_c2r: float = 1.0
    w_cpath: float = 1.0
    w_mpath: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.batch_size < 2 and "c2c" in self.objectives:
            raise ValueError("c2c needs batch_size >= 2 for in-batch negatives")
        unknown = set(self.objectives) - set(OBJECTIVES)
        if unknown or not self.objectives:
            raise ValueError(f"objectives must be a non-empty subset of {OBJECTIVES}, got {self.objectives}")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be non-negative")

    def weight(self, name: str) -> float:
        return getattr(self, f"w_{name}")


@dataclass
class LossReport:
    step: int
    c2c: float | None = None
    c2r: float | None = None
    cpath: float | None = None
    mpath: float | None = None
    total: float = 0.0

    def as_row(self) -> list[str]:
        return [str(self.step)] + ["" if v is None else f"{v:.6f}" for v in (self.c2c, self.c2r, self.cpath, self.mpath, self.total)]


LOSS_CSV_HEADER = ["step", "c2c", "c2r", "cpath", "mpath", "total"]


def loss_csv(reports: Sequence[LossReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_CSV_HEADER)
    writer.writerows(r.as_row() for r in reports)
    return buf.getvalue()


# ---------------------------------------------------------------- losses on pre-verbalized sequences


def c2c_from_seqs(view_a: Sequence[TokenSeq], view_b: Sequence[TokenSeq], params: ModelParams, tau: float) -> Tensor:
    b = len(view_a)
    if b < 2 or len(view_b) != b:
        raise BatchTooSmall(f"c2c needs >= 2 paired views, got {b}")
    _, feats = encode_batch(collate(list(view_a) + list(view_b)), params)
    return info_nce(ag.index(feats, slice(0, b)), ag.index(feats, slice(b, 2 * b)), tau)


def info_nce(a: Tensor, b: Tensor, tau: float) -> Tensor:
    """Mean over rows i of -log softmax_j(cos(a_i, b_j) / tau)[i]."""
    sims = ag.scale(ag.matmul(ag.normalize(a), ag.transpose(ag.normalize(b))), 1.0 / tau)
    return ag.cross_entropy(sims, np.arange(a.shape[0]))


def c2r_from_seqs(seqs: Sequence[TokenSeq], params: ModelParams) -> Tensor:
    batch = collate(seqs)
    _, feats = encode_batch(batch, params)
    _, _, targets = gather_slots(batch, "token")
    labels = [_relation_index(t) for t in targets]
    return ag.cross_entropy(relation_logits(feats, params), labels)


def cpath_from_seqs(seqs: Sequence[TokenSeq], labels: Sequence[float], params: ModelParams) -> Tensor:
    _, feats = encode_batch(collate(seqs), params)
    return ag.bce(path_logits(feats, params), np.asarray(labels, dtype=float))


def mpath_from_seqs(seqs: Sequence[TokenSeq], params: ModelParams) -> Tensor:
    batch = collate(seqs)
    hidden, _ = encode_batch(batch, params)
    rows, cols, targets = gather_slots(batch, "concept")
    return ag.cross_entropy(concept_logits(hidden, rows, cols, params), targets)


_REL_TOKEN_BASE = len(SPECIALS)  # relation tokens follow the specials, in Relation order


def _relation_index(token_id: int) -> int:
    return token_id - _REL_TOKEN_BASE


# ---------------------------------------------------------------- public loss API


def loss_c2c(batch: Sequence[MaskedTriplet], params: ModelParams, vocab: Vocab, tau: float = 2.0) -> Tensor:
    """Contrastive loss between tail-masked and head+relation-masked views, in-batch negatives."""
    if len(batch) < 2:
        raise BatchTooSmall("c2c needs at least two triplets")
    a = [verbalize_triplet(mt, "A", vocab) for mt in batch]
    b = [verbalize_triplet(mt, "B", vocab) for mt in batch]
    return c2c_from_seqs(a, b, params, tau)


def loss_c2r(batch: Sequence[MaskedTriplet], params: ModelParams, vocab: Vocab) -> Tensor:
    return c2r_from_seqs([verbalize_triplet(mt, "RelMasked", vocab) for mt in batch], params)


def loss_cpath(batch: Sequence[Path], params: ModelParams, vocab: Vocab) -> Tensor:
    labels = [1.0 if p.polarity is Polarity.Positive else 0.0 for p in batch]
    return cpath_from_seqs([verbalize_path(p, vocab) for p in batch], labels, params)


def loss_mpath(batch: Sequence[MaskedPath], params: ModelParams, vocab: Vocab, concept_vocab: ConceptVocab) -> Tensor:
    return mpath_from_seqs([verbalize_path(m, vocab, concept_vocab) for m in batch], params)


# ---------------------------------------------------------------- training


@dataclass
class TrainingData:
    """The corpus verbalized once, one list per loss stream.

    The masked-concept stream holds every masked path followed by the
    tail-masked view of every positive triplet.
    """

    c2c: list[tuple[TokenSeq, TokenSeq]] = field(default_factory=list)
    c2r: list[TokenSeq] = field(default_factory=list)
    cpath: list[tuple[TokenSeq, float]] = field(default_factory=list)
    mpath: list[TokenSeq] = field(default_factory=list)

    @classmethod
    def from_corpus(
        cls,
        corpus: Corpus,
        vocab: Vocab,
        concept_vocab: ConceptVocab,
        triplet_max_len: int = TRIPLET_MAX_LEN,
        path_max_len: int = PATH_MAX_LEN,
    ) -> TrainingData:
        data = cls()
        for mt in corpus.positive_masked_triplets:
            data.c2c.append(
                (
                    verbalize_triplet(mt, "A", vocab, concept_vocab, triplet_max_len),
                    verbalize_triplet(mt, "B", vocab, concept_vocab, triplet_max_len),
                )
            )
        data.c2r = [verbalize_triplet(mt, "RelMasked", vocab, None, triplet_max_len) for mt in corpus.masked_triplets]
        for p in corpus.positive_paths + corpus.negative_paths:
            label = 1.0 if p.polarity is Polarity.Positive else 0.0
            data.cpath.append((verbalize_path(p, vocab, None, path_max_len), label))
        data.mpath = [verbalize_path(m, vocab, concept_vocab, path_max_len) for m in corpus.masked_paths]
        # a positive triplet is a two-concept path; its tail-masked view feeds the same concept head
        data.mpath += [a for a, _ in data.c2c]
        return data

    def stream(self, name: str) -> list:
        return getattr(self, name)


class _Stream:
    """Endless shuffled batches over one list; reshuffles per pass."""

    def __init__(self, items: list, batch_size: int, seed: int, index: int):
        self.items, self.batch_size = items, batch_size
        self.seed, self.index = seed, index
        self.epoch, self.cursor = 0, 0
        self.order = self._shuffle()

    def _shuffle(self) -> np.ndarray:
        return np.random.default_rng([self.seed, self.index, self.epoch]).permutation(len(self.items))

    def next(self) -> list:
        take = min(self.batch_size, len(self.items))
        if self.cursor + take > len(self.items):
            self.epoch += 1
            self.cursor = 0
            self.order = self._shuffle()
        picked = [self.items[i] for i in self.order[self.cursor : self.cursor + take]]
        self.cursor += take
        return picked


def step_losses(batches: dict[str, list], params: ModelParams, cfg: TrainConfig) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    if "c2c" in batches:
        pairs = batches["c2c"]
        out["c2c"] = c2c_from_seqs([a for a, _ in pairs], [b for _, b in pairs], params, cfg.temperature)
    if "c2r" in batches:
        out["c2r"] = c2r_from_seqs(batches["c2r"], params)
    if "cpath" in batches:
        items = batches["cpath"]
        out["cpath"] = cpath_from_seqs([s for s, _ in items], [y for _, y in items], params)
    if "mpath" in batches:
        out["mpath"] = mpath_from_seqs(batches["mpath"], params)
    return out


def total_loss(losses: dict[str, Tensor], cfg: TrainConfig) -> Tensor:
    total: Tensor | None = None
    for name in OBJECTIVES:
        if name in losses:
            term = ag.scale(losses[name], cfg.weight(name))
            total = term if total is None else ag.add(total, term)
    if total is None:
        raise ValueError("no active objective")
    return total


def planned_steps(data: TrainingData, cfg: TrainConfig) -> int:
    if cfg.steps is not None:
        return cfg.steps
    longest = max(len(data.stream(name)) for name in cfg.objectives)
    return cfg.epochs * math.ceil(longest / cfg.batch_size)


def train(
    data: TrainingData,
    params: ModelParams,
    cfg: TrainConfig,
    on_step: Callable[[LossReport], None] | None = None,
) -> list[LossReport]:
    """Round-robin one batch per active stream per step; Adam on the weighted sum."""
    streams = {}
    for i, name in enumerate(OBJECTIVES):
        if name not in cfg.objectives:
            continue
        items = data.stream(name)
        if not items:
            raise ValueError(f"objective {name} has an empty stream")
        if name == "c2c" and len(items) < 2:
            raise BatchTooSmall("c2c needs at least two positive triplets in the corpus")
        streams[name] = _Stream(items, cfg.batch_size, cfg.seed, i)

    opt = ag.Adam(list(params), cfg.lr)
    reports = []
    for step in range(planned_steps(data, cfg)):
        losses = step_losses({name: s.next() for name, s in streams.items()}, params, cfg)
        total = total_loss(losses, cfg)
        opt.zero_grad()
        total.backward()
        opt.step()
        params.steps += 1
        report = LossReport(step, total=total.item(), **{k: v.item() for k, v in losses.items()})
        reports.append(report)
        if on_step:
            on_step(report)
        if step % 50 == 0:
            log.debug("step %d total %.4f", step, report.total)
    return reports


def smoothed(values: Sequence[float], window: int = 25) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def train_config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
