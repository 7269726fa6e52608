"""Binary checkpoints: a length-prefixed JSON header followed by float32 tensors.

Layout::

    b"OMCK" | uint64 LE header length | UTF-8 JSON header | payload

The payload is every tensor, little-endian float32, row-major, in header
order. The header records each tensor's section, shape and byte offset,
the vocabulary digests and a sha256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import autograd as ag
from .encoder import EncoderConfig, ModelParams
from .kge import TransEEmbeddings
from .text import ConceptVocab, Vocab

MAGIC = b"OMCK"
SCHEMA_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


class VocabMismatch(CheckpointError):
    pass


def section_of(name: str) -> str:
    return "heads" if name.split(".", 1)[0] in ("rel", "path", "concept") else "encoder"


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: Vocab
    concept_vocab: ConceptVocab
    transe: TransEEmbeddings | None = None
    config: dict = field(default_factory=dict)
    created: float | None = None


def round_to_payload(params: ModelParams) -> None:
    """Snap parameters to float32 precision so in-memory and reloaded models agree exactly."""
    for t in params:
        t.data = t.data.astype(_DTYPE).astype(np.float64)


def _tensors(ck: Checkpoint) -> list[tuple[str, str, np.ndarray]]:
    out = [(section_of(name), name, t.data) for name, t in ck.params.named()]
    if ck.transe is not None:
        out.append(("transe", "entities", ck.transe.entities))
        out.append(("transe", "relations", ck.transe.relations))
    return out


def dumps_checkpoint(ck: Checkpoint) -> bytes:
    entries, chunks, offset = [], [], 0
    for section, name, arr in _tensors(ck):
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"section": section, "name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    enc = ck.params.config
    header = {
        "schema_version": SCHEMA_VERSION,
        "created": ck.created if ck.created is not None else time.time(),
        "config": ck.config,
        "encoder": {k: getattr(enc, k) for k in ("layers", "heads", "dim", "ffn_dim", "max_positions", "dropout")},
        "steps": ck.params.steps,
        "vocab_digest": ck.vocab.digest,
        "concept_vocab_digest": ck.concept_vocab.digest,
        "vocab": ck.vocab.dumps(),
        "concept_vocab": ck.concept_vocab.dumps(),
        "transe_losses": ck.transe.losses if ck.transe is not None else None,
        "tensors": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + payload


def loads_checkpoint(
    blob: bytes,
    vocab: Vocab | None = None,
    concept_vocab: ConceptVocab | None = None,
) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (n,) = struct.unpack("<Q", blob[4:12])
    try:
        header = json.loads(blob[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported schema version {header.get('schema_version')}")
    payload = blob[12 + n :]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError("payload does not match its header hash")
    if vocab is not None and vocab.digest != header["vocab_digest"]:
        raise VocabMismatch("token vocabulary differs from the one the checkpoint was trained with")
    if concept_vocab is not None and concept_vocab.digest != header["concept_vocab_digest"]:
        raise VocabMismatch("concept vocabulary differs from the one the checkpoint was trained with")

    arrays: dict[tuple[str, str], np.ndarray] = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=e["offset"])
        arrays[(e["section"], e["name"])] = arr.reshape(e["shape"]).astype(np.float64)
    tensors = {name: ag.parameter(a) for (section, name), a in arrays.items() if section != "transe"}
    params = ModelParams(EncoderConfig(**header["encoder"]), tensors)
    params.steps = header["steps"]
    transe = None
    if ("transe", "entities") in arrays:
        transe = TransEEmbeddings(
            arrays[("transe", "entities")], arrays[("transe", "relations")], list(header["transe_losses"] or [])
        )
    return Checkpoint(
        params,
        vocab or Vocab.loads(header["vocab"]),
        concept_vocab or ConceptVocab.loads(header["concept_vocab"]),
        transe,
        header["config"],
        header["created"],
    )


def save_checkpoint(ck: Checkpoint, path: str | FsPath) -> str:
    """Write ``ck`` and return the sha256 of the file."""
    blob = dumps_checkpoint(ck)
    FsPath(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path: str | FsPath, vocab: Vocab | None = None, concept_vocab: ConceptVocab | None = None) -> Checkpoint:
    return loads_checkpoint(FsPath(path).read_bytes(), vocab, concept_vocab)


def file_digest(path: str | FsPath) -> str:
    return hashlib.sha256(FsPath(path).read_bytes()).hexdigest()
