"""Stage composition: corpus -> vocabularies -> encoder training -> TransE -> matching."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

from .checkpoint import Checkpoint, round_to_payload
from .config import RunConfig
from .corpus import Corpus, build_corpus
from .encoder import ModelParams, init_params
from .evaluation import PRF, ReferenceSet, compute_prf
from .kge import TransEEmbeddings, train_transe_on
from .matcher import AlignmentSet, match
from .objectives import LossReport, TrainingData, train
from .ontology import Ontology, extract_triplets
from .text import ConceptVocab, Vocab, build_vocabs

log = logging.getLogger(__name__)

THREADS_ENV = "LAKER_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Parallel workers allowed, capped by the LAKER_THREADS environment variable."""
    cap = os.environ.get(THREADS_ENV)
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


class Timer:
    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start
            log.info("stage %s: %.2fs", name, self.seconds[name])


@dataclass
class Trained:
    params: ModelParams
    vocab: Vocab
    concept_vocab: ConceptVocab
    reports: list[LossReport]
    corpus: Corpus


@dataclass
class PipelineResult:
    alignment: AlignmentSet
    trained: Trained
    transe: TransEEmbeddings
    timings: dict[str, float] = field(default_factory=dict)
    prf: PRF | None = None

    def checkpoint(self, cfg: RunConfig) -> Checkpoint:
        t = self.trained
        return Checkpoint(t.params, t.vocab, t.concept_vocab, self.transe, cfg.snapshot(), created=0.0)


def train_stage(
    ontologies: list[Ontology],
    cfg: RunConfig,
    timer: Timer | None = None,
    on_step: Callable[[LossReport], None] | None = None,
    corpus: Corpus | None = None,
) -> Trained:
    timer = timer or Timer()
    with timer.stage("corpus"):
        corpus = corpus or build_corpus(ontologies, cfg.corpus)
        vocab, concept_vocab = build_vocabs(corpus, ontologies)
        data = TrainingData.from_corpus(corpus, vocab, concept_vocab)
    with timer.stage("train"):
        params = init_params(cfg.encoder, len(vocab), len(concept_vocab), cfg.seed)
        reports = train(data, params, cfg.train, on_step)
        round_to_payload(params)
    return Trained(params, vocab, concept_vocab, reports, corpus)


def kge_stage(ontologies: list[Ontology], concept_vocab: ConceptVocab, cfg: RunConfig) -> TransEEmbeddings:
    triplets = [t for o in ontologies for t in extract_triplets(o)]
    emb = train_transe_on(triplets, concept_vocab, cfg.transe)
    # same float32 snapping as the encoder so a reloaded checkpoint matches identically
    emb.entities = emb.entities.astype("<f4").astype(float)
    emb.relations = emb.relations.astype("<f4").astype(float)
    return emb


def run_pipeline(
    source: Ontology,
    target: Ontology,
    cfg: RunConfig,
    reference: ReferenceSet | None = None,
    on_step: Callable[[LossReport], None] | None = None,
) -> PipelineResult:
    timer = Timer()
    trained = train_stage([source, target], cfg, timer, on_step)
    with timer.stage("kge"):
        transe = kge_stage([source, target], trained.concept_vocab, cfg)
    with timer.stage("match"):
        alignment = match(source, target, trained.params, trained.vocab, trained.concept_vocab, transe, cfg.match)
    alignment.metadata.update({"seed": cfg.seed, "elapsed_seconds": {k: round(v, 3) for k, v in timer.seconds.items()}})
    prf = None
    if reference is not None:
        with timer.stage("eval"):
            prf = compute_prf(alignment, reference)
    return PipelineResult(alignment, trained, transe, timer.seconds, prf)


# ---------------------------------------------------------------- experiment axes

ABLATIONS: tuple[tuple[str, ...], ...] = (
    ("c2c",),
    ("c2r",),
    ("cpath",),
    ("mpath",),
    ("c2c", "c2r"),
    ("cpath", "mpath"),
    ("c2c", "c2r", "cpath", "mpath"),
)


@dataclass(frozen=True)
class AxisPoint:
    axis: str
    value: str
    precision: float
    recall: float
    f1: float
    n_mappings: int
    seconds: float


def _point(axis: str, value: str, source: Ontology, target: Ontology, reference: ReferenceSet, cfg: RunConfig) -> AxisPoint:
    res = run_pipeline(source, target, cfg, reference)
    p, r, f, _ = res.prf
    return AxisPoint(axis, value, p, r, f, len(res.alignment), sum(res.timings.values()))


def _run_all(jobs: list[tuple], workers: int) -> list[AxisPoint]:
    if workers <= 1 or len(jobs) <= 1:
        return [_point(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_point, *zip(*jobs)))


def ablation_jobs(source, target, reference, cfg: RunConfig, subsets=ABLATIONS) -> list[tuple]:
    return [("objectives", "+".join(s), source, target, reference, replace(cfg, train=replace(cfg.train, objectives=s))) for s in subsets]


def neg_ratio_jobs(source, target, reference, cfg: RunConfig, ratios=(1, 2, 3, 4)) -> list[tuple]:
    return [("neg_ratio", str(n), source, target, reference, replace(cfg, corpus=replace(cfg.corpus, neg_per_pos=n))) for n in ratios]


def mask_jobs(source, target, reference, cfg: RunConfig, counts=(1, 2, 3, 4)) -> list[tuple]:
    return [("masks", str(n), source, target, reference, replace(cfg, corpus=replace(cfg.corpus, mask_count_path=n))) for n in counts]


def k_points(source, target, reference, cfg: RunConfig, ks=(1, 3, 5, 10)) -> list[AxisPoint]:
    """Candidate-count sweep; the model is trained once and only matching is repeated."""
    timer = Timer()
    trained = train_stage([source, target], cfg, timer)
    transe = kge_stage([source, target], trained.concept_vocab, cfg)
    out = []
    for k in ks:
        start = time.perf_counter()
        m = match(source, target, trained.params, trained.vocab, trained.concept_vocab, transe, replace(cfg.match, k=k))
        p, r, f, _ = compute_prf(m, reference)
        out.append(AxisPoint("k", str(k), p, r, f, len(m), time.perf_counter() - start))
    return out


def run_axes(
    axes: list[str],
    source: Ontology,
    target: Ontology,
    reference: ReferenceSet,
    cfg: RunConfig,
    workers: int | None = None,
) -> list[AxisPoint]:
    builders = {"objectives": ablation_jobs, "neg_ratio": neg_ratio_jobs, "masks": mask_jobs}
    jobs = []
    for axis in axes:
        if axis in builders:
            jobs.extend(builders[axis](source, target, reference, cfg))
        elif axis != "k":
            raise ValueError(f"unknown axis {axis!r}")
    points = _run_all(jobs, worker_count(workers))
    if "k" in axes:
        points.extend(k_points(source, target, reference, cfg))
    return points


AXIS_HEADER = ("axis", "value", "precision", "recall", "f1", "n_mappings", "seconds")


def axis_rows(points: list[AxisPoint]) -> list[list[str]]:
    return [
        [p.axis, p.value, f"{p.precision:.6f}", f"{p.recall:.6f}", f"{p.f1:.6f}", str(p.n_mappings), f"{p.seconds:.2f}"]
        for p in points
    ]
