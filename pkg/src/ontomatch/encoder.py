"""Post-norm transformer encoder shared by triplet and path inputs, plus its heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .ontology import Relation
from .text import MASK_ID, PAD_ID, TokenSeq

N_RELATIONS = len(Relation)
INIT_STD = 0.02


class BadSlot(IndexError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 2
    dim: int = 64
    ffn_dim: int = 256
    max_positions: int = 160
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if min(self.layers, self.heads, self.dim, self.ffn_dim, self.max_positions) < 1:
            raise ValueError("encoder sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


LAYER_PARAMS = ("wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g", "ln2_b")


class ModelParams:
    """Every trainable tensor of the encoder and its three heads, by name.

    Query/key/value matrices are stored as (dim, dim) with head ``h`` owning
    columns ``h*head_dim:(h+1)*head_dim``.
    """

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors
        self.steps = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    @property
    def vocab_size(self) -> int:
        return self.tensors["tok_emb"].shape[0]

    @property
    def n_concepts(self) -> int:
        return self.tensors["concept.w"].shape[1]

    def layer(self, i: int) -> dict[str, Tensor]:
        return {k: self.tensors[f"layer{i}.{k}"] for k in LAYER_PARAMS}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())


def param_shapes(cfg: EncoderConfig, vocab_size: int, n_concepts: int) -> dict[str, tuple[int, ...]]:
    d, f = cfg.dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (vocab_size, d), "pos_emb": (cfg.max_positions, d)}
    for i in range(cfg.layers):
        shapes.update(
            {
                f"layer{i}.wq": (d, d),
                f"layer{i}.wk": (d, d),
                f"layer{i}.wv": (d, d),
                f"layer{i}.wo": (d, d),
                f"layer{i}.ln1_g": (d,),
                f"layer{i}.ln1_b": (d,),
                f"layer{i}.ff1_w": (d, f),
                f"layer{i}.ff1_b": (f,),
                f"layer{i}.ff2_w": (f, d),
                f"layer{i}.ff2_b": (d,),
                f"layer{i}.ln2_g": (d,),
                f"layer{i}.ln2_b": (d,),
            }
        )
    shapes.update(
        {
            "rel.w1": (d, d),
            "rel.b1": (d,),
            "rel.w2": (d, N_RELATIONS),
            "rel.b2": (N_RELATIONS,),
            "path.w": (d, 1),
            "path.b": (1,),
            "concept.w": (d, n_concepts),
            "concept.b": (n_concepts,),
        }
    )
    return shapes


def init_params(cfg: EncoderConfig, vocab_size: int, n_concepts: int, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg, vocab_size, n_concepts).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            data = np.ones(shape)
        elif leaf.endswith("_b") or leaf in ("b", "b1", "b2"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, INIT_STD, size=shape)
        tensors[name] = ag.parameter(data)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    ids: np.ndarray  # (B, N) int
    pad: np.ndarray  # (B, N) bool, True at padding
    seqs: list[TokenSeq]

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(seqs: Sequence[TokenSeq]) -> Batch:
    n = max(len(s) for s in seqs)
    ids = np.full((len(seqs), n), PAD_ID, dtype=np.intp)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s.ids
    return Batch(ids, ids == PAD_ID, list(seqs))


# ---------------------------------------------------------------- forward


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ag.mul(x, Tensor(keep))


def attention(x: Tensor, p: dict[str, Tensor], pad: np.ndarray, heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head self-attention. Returns (concat(heads) @ W_0, attention probabilities (B, H, N, N))."""
    b, n, d = x.shape
    dq = d // heads

    def split(t: Tensor) -> Tensor:
        return ag.transpose(ag.reshape(t, (b, n, heads, dq)), (0, 2, 1, 3))

    q = split(ag.matmul(x, p["wq"]))
    k = split(ag.matmul(x, p["wk"]))
    v = split(ag.matmul(x, p["wv"]))
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dq))
    bias = np.where(pad, -np.inf, 0.0)[:, None, None, :]
    probs = ag.softmax(ag.add(scores, Tensor(bias)))
    z = ag.reshape(ag.transpose(ag.matmul(probs, v), (0, 2, 1, 3)), (b, n, d))
    return ag.matmul(z, p["wo"]), probs


def _affine_norm(x: Tensor, g: Tensor, bias: Tensor) -> Tensor:
    return ag.add(ag.mul(ag.layer_norm(x, 1e-5), g), bias)


def mha_layer(
    x: Tensor,
    p: dict[str, Tensor],
    pad: np.ndarray,
    heads: int,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    attn, _ = attention(x, p, pad, heads)
    x = _affine_norm(ag.add(x, _dropout(attn, dropout, rng)), p["ln1_g"], p["ln1_b"])
    hidden = ag.relu(ag.add(ag.matmul(x, p["ff1_w"]), p["ff1_b"]))
    ff = ag.add(ag.matmul(hidden, p["ff2_w"]), p["ff2_b"])
    return _affine_norm(ag.add(x, _dropout(ff, dropout, rng)), p["ln2_g"], p["ln2_b"])


def encode_batch(batch: Batch, params: ModelParams, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """Final-layer states (B, N, d) and the [CLS] feature (B, d)."""
    cfg = params.config
    n = batch.ids.shape[1]
    if n > cfg.max_positions:
        raise ag.ShapeMismatch(f"sequence length {n} exceeds {cfg.max_positions} positions")
    x = ag.add(ag.gather_rows(params["tok_emb"], batch.ids), ag.index(params["pos_emb"], slice(0, n)))
    for i in range(cfg.layers):
        x = mha_layer(x, params.layer(i), batch.pad, cfg.heads, cfg.dropout, rng)
    return x, ag.index(x, (slice(None), 0))


def encode(seq: TokenSeq, params: ModelParams) -> tuple[Tensor, Tensor]:
    hidden, feature = encode_batch(collate([seq]), params)
    return ag.index(hidden, 0), ag.index(feature, 0)


# ---------------------------------------------------------------- heads


def gather_slots(batch: Batch, space: str = "concept") -> tuple[np.ndarray, np.ndarray, list[int | None]]:
    rows, cols, targets = [], [], []
    for i, seq in enumerate(batch.seqs):
        for slot in seq.mask_slots:
            if slot.space != space:
                continue
            if not 0 <= slot.position < len(seq) or seq.ids[slot.position] != MASK_ID:
                raise BadSlot(f"slot {slot.position} of sequence {i} does not hold [MASK]")
            rows.append(i)
            cols.append(slot.position)
            targets.append(slot.target)
    return np.array(rows, dtype=np.intp), np.array(cols, dtype=np.intp), targets


def concept_logits(hidden: Tensor, rows: np.ndarray, cols: np.ndarray, params: ModelParams) -> Tensor:
    """ConceptHead logits (#slots, |ConceptVocab|) from the states at the mask positions."""
    if rows.size and (cols.max() >= hidden.shape[1] or rows.max() >= hidden.shape[0]):
        raise BadSlot("mask slot outside the encoded batch")
    states = ag.index(hidden, (rows, cols))
    return ag.add(ag.matmul(states, params["concept.w"]), params["concept.b"])


def relation_logits(features: Tensor, params: ModelParams) -> Tensor:
    """Two-layer MLP over the [CLS] feature -> (B, |Relation|)."""
    h = ag.relu(ag.add(ag.matmul(features, params["rel.w1"]), params["rel.b1"]))
    return ag.add(ag.matmul(h, params["rel.w2"]), params["rel.b2"])


def path_logits(features: Tensor, params: ModelParams) -> Tensor:
    """One logit per sequence, positive = real path."""
    out = ag.add(ag.matmul(features, params["path.w"]), params["path.b"])
    return ag.reshape(out, (features.shape[0],))


def predict_masked(hidden: Tensor, features: Tensor, batch: Batch, params: ModelParams, head: str) -> Tensor:
    if head == "concept":
        rows, cols, _ = gather_slots(batch, "concept")
        return concept_logits(hidden, rows, cols, params)
    if head == "relation":
        return relation_logits(features, params)
    raise ValueError(f"unknown head {head!r}")
