"""Ontology data model, on-disk formats, and triplet/path extraction."""

from __future__ import annotations

import enum
import json
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path as FsPath
from typing import Iterable, Iterator

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", offset {offset}" if offset is not None else "") + ")"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class ValidationError(ValueError):
    pass


class CycleWarning(UserWarning):
    pass


class Relation(enum.Enum):
    SubClassOf = "SubClassOf"
    DisjointWith = "DisjointWith"
    Synonym = "Synonym"
    NoRelation = "NoRelation"

    @property
    def order(self) -> int:
        return list(Relation).index(self)


EDGE_RELATIONS = (Relation.SubClassOf, Relation.DisjointWith, Relation.Synonym)


class Polarity(enum.Enum):
    Positive = "positive"
    Negative = "negative"


_WS = re.compile(r"\s")


def qualify(ontology_id: str, local_id: str) -> str:
    return f"{ontology_id}#{local_id}"


def split_qualified(concept_id: str) -> tuple[str, str]:
    onto, _, local = concept_id.partition("#")
    return onto, local


@dataclass(frozen=True)
class Concept:
    id: str
    labels: tuple[str, ...]
    description: str | None = None
    subclass_of: tuple[str, ...] = ()
    disjoint_with: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return self.labels[0]


@dataclass(frozen=True, eq=False)
class Ontology:
    """A validated, immutable ontology. Concepts are keyed by local id."""

    id: str
    concepts: dict[str, Concept]
    roots: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        _validate(self.id, self.concepts)
        object.__setattr__(self, "roots", tuple(sorted(c.id for c in self.concepts.values() if not c.subclass_of)))

    def __len__(self) -> int:
        return len(self.concepts)

    def __contains__(self, local_id: str) -> bool:
        return local_id in self.concepts

    def qualify(self, local_id: str) -> str:
        return qualify(self.id, local_id)

    def global_ids(self) -> list[str]:
        return [self.qualify(cid) for cid in sorted(self.concepts)]

    def owns(self, concept_id: str) -> bool:
        onto, local = split_qualified(concept_id)
        return onto == self.id and local in self.concepts

    @cached_property
    def children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {cid: [] for cid in self.concepts}
        for c in self.concepts.values():
            for parent in c.subclass_of:
                kids[parent].append(c.id)
        return {k: sorted(v) for k, v in kids.items()}

    def ancestors(self, local_id: str) -> set[str]:
        """Transitive superclass closure (excludes the concept unless on a cycle)."""
        seen: set[str] = set()
        stack = list(self.concepts[local_id].subclass_of)
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self.concepts[cur].subclass_of)
        return seen

    @property
    def n_subclass_edges(self) -> int:
        return sum(len(c.subclass_of) for c in self.concepts.values())

    @property
    def n_disjoint_edges(self) -> int:
        return sum(len(c.disjoint_with) for c in self.concepts.values())


def _validate(onto_id: str, concepts: dict[str, Concept]) -> None:
    if not onto_id or _WS.search(onto_id) or "#" in onto_id:
        raise ValidationError(f"bad ontology id {onto_id!r}")
    for key, c in concepts.items():
        if key != c.id:
            raise ValidationError(f"concept keyed as {key!r} has id {c.id!r}")
        if not c.id or _WS.search(c.id):
            raise ValidationError(f"bad concept id {c.id!r}")
        if not c.labels:
            raise ValidationError(f"concept {c.id} has no label")
        if any(not lab.strip() for lab in c.labels):
            raise ValidationError(f"concept {c.id} has an empty label")
        if len(set(c.labels)) != len(c.labels):
            raise ValidationError(f"concept {c.id} has duplicate labels")
        for kind, targets in (("subclass_of", c.subclass_of), ("disjoint_with", c.disjoint_with)):
            if len(set(targets)) != len(targets):
                raise ValidationError(f"concept {c.id} repeats a {kind} target")
            for t in targets:
                if t == c.id:
                    raise ValidationError(f"concept {c.id} has a {kind} self-loop")
                if t not in concepts:
                    raise ValidationError(f"concept {c.id} references undeclared concept {t}")


def build_ontology(onto_id: str, concepts: Iterable[Concept]) -> Ontology:
    table: dict[str, Concept] = {}
    for c in concepts:
        if c.id in table:
            raise ValidationError(f"duplicate concept id {c.id}")
        table[c.id] = c
    return Ontology(onto_id, table)


# ---------------------------------------------------------------- formats

_TOP_KEYS = {"ontology_id", "concepts"}
_CONCEPT_KEYS = {"id", "labels", "description", "subclass_of", "disjoint_with"}


def parse_canonical_json(text: str) -> Ontology:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ParseError(f"unknown keys {sorted(unknown)}")
    if "ontology_id" not in raw or not isinstance(raw["ontology_id"], str):
        raise ParseError("missing string 'ontology_id'")
    items = raw.get("concepts", [])
    if not isinstance(items, list):
        raise ParseError("'concepts' must be a list")
    concepts = []
    for n, item in enumerate(items):
        if not isinstance(item, dict):
            raise ParseError(f"concept #{n} is not an object")
        unknown = set(item) - _CONCEPT_KEYS
        if unknown:
            raise ParseError(f"concept #{n}: unknown keys {sorted(unknown)}")
        if not isinstance(item.get("id"), str) or not isinstance(item.get("labels"), list):
            raise ParseError(f"concept #{n}: 'id' and 'labels' are required")
        desc = item.get("description")
        if desc is not None and not isinstance(desc, str):
            raise ParseError(f"concept #{n}: 'description' must be a string")
        lists = [item.get(k, []) for k in ("labels", "subclass_of", "disjoint_with")]
        if not all(isinstance(lst, list) and all(isinstance(x, str) for x in lst) for lst in lists):
            raise ParseError(f"concept #{n}: list fields must hold strings")
        concepts.append(Concept(item["id"], tuple(lists[0]), desc, tuple(lists[1]), tuple(lists[2])))
    return build_ontology(raw["ontology_id"], concepts)


def dump_canonical_json(o: Ontology) -> str:
    """Serialize in canonical form: concepts and edge lists sorted, label order kept."""
    items = []
    for cid in sorted(o.concepts):
        c = o.concepts[cid]
        item = {"id": c.id, "labels": list(c.labels)}
        if c.description is not None:
            item["description"] = c.description
        item["subclass_of"] = sorted(c.subclass_of)
        item["disjoint_with"] = sorted(c.disjoint_with)
        items.append(item)
    return json.dumps({"ontology_id": o.id, "concepts": items}, indent=2, ensure_ascii=False) + "\n"


_QUOTED = re.compile(r'^"((?:[^"\\]|\\.)*)"')


def _obo_value(value: str) -> str:
    m = _QUOTED.match(value)
    if m:
        return m.group(1).replace('\\"', '"')
    return value.split(" !", 1)[0].strip()


def parse_obo_flat(text: str, default_id: str = "ontology") -> Ontology:
    onto_id = default_id
    concepts: list[Concept] = []
    current: dict | None = None
    in_term = False

    def flush():
        if current is not None:
            if "id" not in current:
                raise ParseError("[Term] stanza without id", current["_line"])
            concepts.append(
                Concept(
                    current["id"],
                    tuple(current["labels"]),
                    current.get("description"),
                    tuple(current["is_a"]),
                    tuple(current["disjoint_from"]),
                )
            )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed stanza header {line!r}", lineno, 0)
            flush()
            in_term = line == "[Term]"
            current = {"_line": lineno, "labels": [], "is_a": [], "disjoint_from": []} if in_term else None
            continue
        tag, sep, value = line.partition(":")
        if not sep:
            raise ParseError(f"expected 'tag: value', got {line!r}", lineno, 0)
        tag, value = tag.strip(), value.strip()
        if current is None:
            if not in_term and tag == "ontology" and not concepts:
                onto_id = value
            continue
        if tag == "id":
            current["id"] = value
        elif tag == "name":
            current["labels"].insert(0, _obo_value(value))
        elif tag == "synonym":
            current["labels"].append(_obo_value(value))
        elif tag == "def":
            current["description"] = _obo_value(value)
        elif tag == "is_a":
            current["is_a"].append(_obo_value(value))
        elif tag == "disjoint_from":
            current["disjoint_from"].append(_obo_value(value))
    flush()
    return build_ontology(onto_id, concepts)


def load_ontology(path: str | FsPath, format: str | None = None) -> Ontology:
    """Load ``CanonicalJson`` (``.json``) or ``OboFlat`` (``.obo``) files."""
    path = FsPath(path)
    text = path.read_text(encoding="utf-8")
    fmt = (format or ("OboFlat" if path.suffix == ".obo" else "CanonicalJson")).lower()
    if fmt in ("canonicaljson", "json"):
        return parse_canonical_json(text)
    if fmt in ("oboflat", "obo"):
        return parse_obo_flat(text, default_id=path.stem)
    raise ValueError(f"unknown ontology format {format!r}")


def save_ontology(o: Ontology, path: str | FsPath) -> None:
    FsPath(path).write_text(dump_canonical_json(o), encoding="utf-8")


# ---------------------------------------------------------------- triplets


@dataclass(frozen=True)
class Triplet:
    head_text: str
    relation: Relation
    tail_text: str
    head_id: str
    tail_id: str
    polarity: Polarity = Polarity.Positive

    def sort_key(self):
        return (self.head_id, self.relation.order, self.tail_id, self.tail_text)


def extract_triplets(o: Ontology) -> list[Triplet]:
    out = []
    for c in o.concepts.values():
        head = o.qualify(c.id)
        for parent in c.subclass_of:
            out.append(Triplet(c.label, Relation.SubClassOf, o.concepts[parent].label, head, o.qualify(parent)))
        for other in c.disjoint_with:
            out.append(Triplet(c.label, Relation.DisjointWith, o.concepts[other].label, head, o.qualify(other)))
        for alt in c.labels[1:]:
            out.append(Triplet(c.label, Relation.Synonym, alt, head, head))
    return sorted(out, key=Triplet.sort_key)


# ---------------------------------------------------------------- paths


@dataclass(frozen=True)
class PathNode:
    id: str
    label: str


@dataclass(frozen=True)
class Path:
    """Alternating concept/relation sequence; ``concepts[i]`` links to ``concepts[i+1]`` by ``relations[i]``."""

    concepts: tuple[PathNode, ...]
    relations: tuple[Relation, ...]
    polarity: Polarity = Polarity.Positive

    def __post_init__(self):
        if len(self.concepts) < 2 or len(self.relations) != len(self.concepts) - 1:
            raise ValueError("a path needs >= 2 concepts and one relation between each pair")

    @property
    def length(self) -> int:
        return len(self.concepts)

    def elements(self) -> list[PathNode | Relation]:
        out: list[PathNode | Relation] = [self.concepts[0]]
        for rel, node in zip(self.relations, self.concepts[1:]):
            out.extend((rel, node))
        return out


def _structural_chains(o: Ontology, start: str, max_len: int, limit: int) -> Iterator[tuple[list[str], bool]]:
    """DFS upward from ``start``; yields (chain, hit_cycle). Chains stop at roots, max_len, or a revisit."""
    stack: list[list[str]] = [[start]]
    emitted = 0
    while stack and emitted < limit:
        chain = stack.pop()
        parents = o.concepts[chain[-1]].subclass_of
        if not parents or len(chain) >= max_len:
            emitted += 1
            yield chain, False
            continue
        if any(p in chain for p in parents):
            emitted += 1
            yield chain, True
        for p in sorted(parents, reverse=True):
            if p not in chain:
                stack.append(chain + [p])


def extract_paths(
    o: Ontology,
    max_len: int = 8,
    max_per_concept: int = 4,
    p_syn: float = 0.5,
    seed: int = 0,
) -> list[Path]:
    """Enumerate concept-to-root paths along subclass edges, sprinkled with synonym hops.

    Position 0 is the terminal concept, the last position its farthest
    ancestor. After each subclass hop a synonym hop (same concept, an
    alternate label) follows with probability ``p_syn``.
    """
    if max_len < 2 or max_per_concept < 1:
        raise ValueError("max_len must be >= 2 and max_per_concept >= 1")
    ordered = sorted(o.concepts)
    paths: list[Path] = []
    for n, cid in enumerate(ordered):
        rng = np.random.default_rng([seed, n])
        for chain, cyclic in _structural_chains(o, cid, max_len, max_per_concept):
            if cyclic:
                warnings.warn(f"{o.id}: subclass cycle above {chain[-1]}; path truncated", CycleWarning)
            if len(chain) < 2:
                continue
            first = o.concepts[chain[0]]
            nodes = [PathNode(o.qualify(first.id), first.label)]
            rels: list[Relation] = []
            for local in chain[1:]:
                c = o.concepts[local]
                nodes.append(PathNode(o.qualify(local), c.label))
                rels.append(Relation.SubClassOf)
                if len(c.labels) > 1 and rng.random() < p_syn:
                    alt = c.labels[1 + int(rng.integers(len(c.labels) - 1))]
                    nodes.append(PathNode(o.qualify(local), alt))
                    rels.append(Relation.Synonym)
            nodes, rels = nodes[:max_len], rels[: max_len - 1]
            paths.append(Path(tuple(nodes), tuple(rels)))
    return paths


# ---------------------------------------------------------------- statistics


@dataclass(frozen=True)
class CorpusStats:
    n_concepts: int
    n_subclass: int
    n_synonym: int
    n_disjoint: int
    n_paths: int
    avg_path_length: float | None


def stats(o: Ontology, triplets: list[Triplet], paths: list[Path]) -> CorpusStats:
    counts = {r: 0 for r in Relation}
    for t in triplets:
        if t.polarity is Polarity.Positive:
            counts[t.relation] += 1
    avg = float(np.mean([p.length for p in paths])) if paths else None
    return CorpusStats(
        len(o), counts[Relation.SubClassOf], counts[Relation.Synonym], counts[Relation.DisjointWith], len(paths), avg
    )


STATS_HEADER = ("Ontology", "#Concepts", "subclass", "synonym", "#Paths", "Avg. length")


def format_stats_table(rows: list[tuple[str, CorpusStats]], delimiter: str = "\t") -> str:
    lines = [delimiter.join(STATS_HEADER)]
    for name, s in rows:
        avg = "-" if s.avg_path_length is None else f"{s.avg_path_length:.2f}"
        paths = "-" if s.n_paths == 0 else str(s.n_paths)
        lines.append(delimiter.join([name, str(s.n_concepts), str(s.n_subclass), str(s.n_synonym), paths, avg]))
    return "\n".join(lines) + "\n"
