"""Embedded property graph: entities, typed relations, and in-graph text chunks.

The store keeps the original text segments as first-class nodes linked to the
entities extracted from them, so retrieval can always hand natural-language
passages (not bare triples) to a language model. Persistence is a bit-exact
JSON-Lines format; embeddings are recomputed from the deterministic provider
rather than serialized.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

from . import errors
from .embedding import Vector, provider_from_header
from .metapath import MetaPathConfig, MetaPathIndex, Posting

FORMAT_VERSION = 1

_SEP = "\x1f"


def _hash_id(prefix: str, *parts: str) -> str:
    digest = hashlib.blake2b(_SEP.join(parts).encode("utf-8"), digest_size=8)
    return prefix + digest.hexdigest()


def chunk_id_for(doc_id: str, span: tuple[int, int], text: str) -> str:
    """Content-derived chunk id; stable across rebuilds."""
    return _hash_id("c", doc_id, str(span[0]), str(span[1]), text)


def entity_id_for(normalized_name: str, entity_type: str) -> str:
    return _hash_id("e", normalized_name, entity_type)


def edge_id_for(src: str, dst: str, relation_type: str) -> str:
    return _hash_id("r", src, dst, relation_type)


def normalize_name(name: str) -> str:
    """Case-folded, whitespace-collapsed entity key."""
    return " ".join(name.casefold().split())


@dataclass
class TextChunkNode:
    id: str
    doc_id: str
    span: tuple[int, int]
    text: str
    embedding_ref: int | None = None


@dataclass
class EntityNode:
    id: str
    name: str
    normalized_name: str
    entity_type: str
    description: str
    source_chunk_ids: set[str]
    embedding_ref: int | None = None


@dataclass
class RelationEdge:
    id: str
    src: str
    dst: str
    relation_type: str
    description: str
    weight: float
    provenance_chunk_ids: set[str]
    temporal: str | None = None


@dataclass(frozen=True)
class Violation:
    record_id: str
    rule: str
    detail: str


@dataclass
class Subgraph:
    entities: list[EntityNode]
    edges: list[RelationEdge]
    chunks: list[TextChunkNode]


def _merge_description(existing: str, incoming: str) -> str:
    """Append a new description component; identical components are kept once
    so repeated upserts stay idempotent."""
    if not incoming:
        return existing
    if not existing:
        return incoming
    if incoming in existing.split(" | "):
        return existing
    return existing + " | " + incoming


class Pkg:
    """The graph container. Single-writer while building; freeze() before
    concurrent reads."""

    def __init__(self, embed_dim: int = 256, embed_provider: str = "hash-v1",
                 metapath_max_len: int = 4):
        self.embed_dim = embed_dim
        self.embed_provider = embed_provider
        self.metapath_max_len = metapath_max_len
        self.chunks: dict[str, TextChunkNode] = {}
        self.entities: dict[str, EntityNode] = {}
        self.edges: dict[str, RelationEdge] = {}
        self.out_edges: dict[str, list[str]] = {}
        self.in_edges: dict[str, list[str]] = {}
        self.chunk_entities: dict[str, set[str]] = {}
        self.metapath_index: MetaPathIndex | None = None
        self.frozen = False
        self.provider = None
        self._by_key: dict[tuple[str, str], str] = {}
        self._by_name: dict[str, list[str]] = {}
        self._vec_matrix: np.ndarray | None = None
        self._vec_rows: dict[str, int] = {}
        self._vec_ids: list[str] = []

    # -- mutation ----------------------------------------------------------

    def _check_mutable(self):
        if self.frozen:
            raise errors.FrozenGraph("graph is frozen; rebuild to modify")

    def add_chunk(self, doc_id: str, span: tuple[int, int], text: str) -> str:
        self._check_mutable()
        start, end = int(span[0]), int(span[1])
        if start < 0 or start >= end:
            raise errors.InvalidSpan(f"bad span ({start}, {end})")
        if end - start != len(text):
            raise errors.InvalidSpan(
                f"span length {end - start} does not match text length {len(text)}")
        if not text.strip():
            raise errors.EmptyChunk(f"blank chunk for {doc_id!r}")
        cid = chunk_id_for(doc_id, (start, end), text)
        if cid not in self.chunks:
            self.chunks[cid] = TextChunkNode(cid, doc_id, (start, end), text)
            self.chunk_entities[cid] = set()
        return cid

    def add_entity(self, name: str, entity_type: str, description: str,
                   source_chunk_ids: Iterable[str]) -> str:
        self._check_mutable()
        chunk_ids = set(source_chunk_ids)
        if not chunk_ids:
            raise errors.UngroundedEntity(f"entity {name!r} has no source chunks")
        for cid in chunk_ids:
            if cid not in self.chunks:
                raise errors.DanglingChunk(f"unknown chunk {cid!r}")
        norm = normalize_name(name)
        key = (norm, entity_type)
        eid = self._by_key.get(key)
        if eid is None:
            eid = entity_id_for(norm, entity_type)
            self.entities[eid] = EntityNode(eid, name, norm, entity_type,
                                            description, set(chunk_ids))
            self._by_key[key] = eid
            self._by_name.setdefault(norm, []).append(eid)
            self.out_edges[eid] = []
            self.in_edges[eid] = []
        else:
            node = self.entities[eid]
            node.description = _merge_description(node.description, description)
            node.source_chunk_ids |= chunk_ids
        for cid in chunk_ids:
            self.chunk_entities[cid].add(eid)
        return eid

    def add_relation(self, src: str, dst: str, relation_type: str, description: str,
                     weight: float, provenance_chunk_ids: Iterable[str],
                     temporal: str | None = None) -> str:
        self._check_mutable()
        if src not in self.entities:
            raise errors.DanglingEntity(f"unknown source entity {src!r}")
        if dst not in self.entities:
            raise errors.DanglingEntity(f"unknown target entity {dst!r}")
        if not (0.0 <= weight <= 1.0):
            raise errors.BadWeight(f"weight {weight} outside [0, 1]")
        prov = set(provenance_chunk_ids)
        if not prov:
            raise errors.UngroundedRelation(
                f"relation {src}->{dst} has no provenance chunks")
        for cid in prov:
            if cid not in self.chunks:
                raise errors.DanglingChunk(f"unknown chunk {cid!r}")
        rid = edge_id_for(src, dst, relation_type)
        existing = self.edges.get(rid)
        if existing is None:
            self.edges[rid] = RelationEdge(rid, src, dst, relation_type, description,
                                           float(weight), prov, temporal)
            self.out_edges[src].append(rid)
            self.in_edges[dst].append(rid)
        else:
            existing.weight = max(existing.weight, float(weight))
            existing.provenance_chunk_ids |= prov
            existing.description = _merge_description(existing.description, description)
            if existing.temporal is None:
                existing.temporal = temporal
        return rid

    def freeze(self):
        self.frozen = True

    # -- lookups -----------------------------------------------------------

    def entities_by_name(self, normalized: str) -> list[str]:
        return sorted(self._by_name.get(normalized, []))

    def neighbors(self, entity_id: str) -> list[str]:
        """Sorted neighbor entity ids, both edge directions, self excluded."""
        out = set()
        for rid in self.out_edges.get(entity_id, ()):
            out.add(self.edges[rid].dst)
        for rid in self.in_edges.get(entity_id, ()):
            out.add(self.edges[rid].src)
        out.discard(entity_id)
        return sorted(out)

    def edges_between(self, a: str, b: str) -> list[str]:
        """Sorted ids of every edge connecting a and b, either direction."""
        found = set()
        for rid in self.out_edges.get(a, ()):
            if self.edges[rid].dst == b:
                found.add(rid)
        for rid in self.in_edges.get(a, ()):
            if self.edges[rid].src == b:
                found.add(rid)
        return sorted(found)

    def neighborhood(self, node_id: str, hops: int) -> Subgraph:
        """BFS over entity-entity edges up to ``hops``, plus every chunk linked
        to a reached entity. Deterministic: all id lists sorted."""
        if node_id not in self.entities:
            raise errors.UnknownNode(f"unknown entity {node_id!r}")
        if hops < 0:
            raise ValueError("hops must be >= 0")
        visited = {node_id}
        frontier = [node_id]
        for _ in range(hops):
            nxt = []
            for eid in frontier:
                for nb in self.neighbors(eid):
                    if nb not in visited:
                        visited.add(nb)
                        nxt.append(nb)
            if not nxt:
                break
            frontier = nxt
        ent_ids = sorted(visited)
        edge_ids = sorted(
            rid for rid, e in self.edges.items()
            if e.src in visited and e.dst in visited)
        chunk_ids = sorted({cid for eid in ent_ids
                            for cid in self.entities[eid].source_chunk_ids})
        return Subgraph(
            entities=[self.entities[i] for i in ent_ids],
            edges=[self.edges[i] for i in edge_ids],
            chunks=[self.chunks[i] for i in chunk_ids],
        )

    # -- validation --------------------------------------------------------

    def validate(self) -> list[Violation]:
        """Report every invariant violation; never raises."""
        out: list[Violation] = []
        for cid in sorted(self.chunks):
            chunk = self.chunks[cid]
            if chunk.span[0] < 0 or chunk.span[0] >= chunk.span[1]:
                out.append(Violation(cid, "InvalidSpan", f"span {chunk.span}"))
            if not chunk.text.strip():
                out.append(Violation(cid, "EmptyChunk", "blank text"))
        seen_keys: dict[tuple[str, str], str] = {}
        for eid in sorted(self.entities):
            ent = self.entities[eid]
            if not ent.source_chunk_ids:
                out.append(Violation(eid, "UngroundedEntity",
                                     "entity has no source chunks"))
            for cid in sorted(ent.source_chunk_ids):
                if cid not in self.chunks:
                    out.append(Violation(eid, "DanglingChunk",
                                         f"source chunk {cid} missing"))
            key = (ent.normalized_name, ent.entity_type)
            if key in seen_keys:
                out.append(Violation(eid, "DuplicateEntityKey",
                                     f"same key as {seen_keys[key]}"))
            else:
                seen_keys[key] = eid
        seen_edges: dict[tuple[str, str, str], str] = {}
        for rid in sorted(self.edges):
            edge = self.edges[rid]
            if edge.src not in self.entities:
                out.append(Violation(rid, "DanglingEntity",
                                     f"source {edge.src} missing"))
            if edge.dst not in self.entities:
                out.append(Violation(rid, "DanglingEntity",
                                     f"target {edge.dst} missing"))
            if not (0.0 <= edge.weight <= 1.0):
                out.append(Violation(rid, "BadWeight", f"weight {edge.weight}"))
            if not edge.provenance_chunk_ids:
                out.append(Violation(rid, "UngroundedRelation", "no provenance"))
            for cid in sorted(edge.provenance_chunk_ids):
                if cid not in self.chunks:
                    out.append(Violation(rid, "DanglingChunk",
                                         f"provenance chunk {cid} missing"))
            ekey = (edge.src, edge.dst, edge.relation_type)
            if ekey in seen_edges:
                out.append(Violation(rid, "DuplicateEdge",
                                     f"same endpoints/type as {seen_edges[ekey]}"))
            else:
                seen_edges[ekey] = rid
        out.extend(self._validate_adjacency())
        if self.metapath_index is not None:
            for node_id in sorted(self.metapath_index.postings):
                if node_id not in self.entities:
                    out.append(Violation(node_id, "DanglingPosting",
                                         "posting for unknown entity"))
        return out

    def _validate_adjacency(self) -> list[Violation]:
        out = []
        want_out: dict[str, set[str]] = {e: set() for e in self.entities}
        want_in: dict[str, set[str]] = {e: set() for e in self.entities}
        for rid, edge in self.edges.items():
            if edge.src in want_out:
                want_out[edge.src].add(rid)
            if edge.dst in want_in:
                want_in[edge.dst].add(rid)
        for eid in sorted(self.entities):
            if set(self.out_edges.get(eid, ())) != want_out[eid] or \
               set(self.in_edges.get(eid, ())) != want_in[eid]:
                out.append(Violation(eid, "AdjacencyInconsistent",
                                     "adjacency does not match edge set"))
        return out

    # -- embeddings --------------------------------------------------------

    def ensure_vectors(self, provider=None):
        """Embed every chunk and entity once; lazy, idempotent."""
        if self._vec_matrix is not None:
            return
        provider = provider or self.provider
        if provider is None:
            provider = provider_from_header(self.embed_provider, self.embed_dim)
        self.provider = provider
        ids: list[str] = []
        rows: list[np.ndarray] = []
        for cid in sorted(self.chunks):
            ids.append(cid)
            rows.append(provider.embed(self.chunks[cid].text).unit())
        for eid in sorted(self.entities):
            ent = self.entities[eid]
            ids.append(eid)
            rows.append(provider.embed(ent.name + " " + ent.description).unit())
        self._vec_ids = ids
        self._vec_rows = {nid: i for i, nid in enumerate(ids)}
        self._vec_matrix = (np.vstack(rows) if rows
                            else np.zeros((0, self.embed_dim)))
        for nid, row in self._vec_rows.items():
            if nid in self.chunks:
                self.chunks[nid].embedding_ref = row
            else:
                self.entities[nid].embedding_ref = row

    def vector_for(self, node_id: str) -> Vector:
        self.ensure_vectors()
        row = self._vec_rows.get(node_id)
        if row is None:
            raise errors.UnknownNode(f"no vector for {node_id!r}")
        return Vector(self._vec_matrix[row])

    @property
    def vector_ids(self) -> list[str]:
        self.ensure_vectors()
        return self._vec_ids

    @property
    def vector_matrix(self) -> np.ndarray:
        self.ensure_vectors()
        return self._vec_matrix

    # -- persistence -------------------------------------------------------

    def _records(self):
        yield {"embed_dim": self.embed_dim, "embed_provider": self.embed_provider,
               "kind": "header", "metapath_max_len": self.metapath_max_len,
               "version": FORMAT_VERSION}
        for cid in sorted(self.chunks):
            c = self.chunks[cid]
            yield {"doc_id": c.doc_id, "id": c.id, "kind": "chunk",
                   "span": [c.span[0], c.span[1]], "text": c.text}
        for eid in sorted(self.entities):
            e = self.entities[eid]
            yield {"description": e.description, "entity_type": e.entity_type,
                   "id": e.id, "kind": "entity", "name": e.name,
                   "normalized_name": e.normalized_name,
                   "source_chunk_ids": sorted(e.source_chunk_ids)}
        for rid in sorted(self.edges):
            r = self.edges[rid]
            rec = {"description": r.description, "dst": r.dst, "id": r.id,
                   "kind": "edge", "provenance_chunk_ids": sorted(r.provenance_chunk_ids),
                   "relation_type": r.relation_type, "src": r.src, "weight": r.weight}
            if r.temporal is not None:
                rec["temporal"] = r.temporal
            yield rec
        if self.metapath_index is not None:
            yield from self.metapath_index.records()

    def save(self, path) -> int:
        data = "".join(
            json.dumps(rec, sort_keys=True, ensure_ascii=False,
                       separators=(",", ":")) + "\n"
            for rec in self._records()
        ).encode("utf-8")
        try:
            with open(path, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise errors.IoError(str(exc)) from exc
        return len(data)

    @classmethod
    def load(cls, path, provider=None) -> "Pkg":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise errors.IoError(str(exc)) from exc
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise errors.FormatError(f"file is not UTF-8: {exc}") from exc
        lines = text.splitlines()
        if not lines:
            raise errors.FormatError("empty file")
        records = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                raise errors.FormatError(f"blank line {lineno}")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise errors.FormatError(f"malformed line {lineno}: {exc}") from exc
            if not isinstance(rec, dict) or "kind" not in rec:
                raise errors.FormatError(f"line {lineno}: not a keyed record")
            records.append((lineno, rec))

        header = records[0][1]
        if header.get("kind") != "header":
            raise errors.FormatError("first record is not the header")
        if header.get("version") != FORMAT_VERSION:
            raise errors.FormatError(f"unsupported version {header.get('version')!r}")
        try:
            pkg = cls(embed_dim=int(header["embed_dim"]),
                      embed_provider=str(header["embed_provider"]),
                      metapath_max_len=int(header["metapath_max_len"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise errors.FormatError(f"bad header: {exc}") from exc

        if provider is not None:
            if provider.provider_id != pkg.embed_provider:
                raise errors.ProviderMismatch(
                    f"graph embedded with {pkg.embed_provider!r}, "
                    f"active provider is {provider.provider_id!r}")
            if provider.dim != pkg.embed_dim:
                raise errors.ProviderMismatch(
                    f"graph dim {pkg.embed_dim}, provider dim {provider.dim}")
            pkg.provider = provider

        postings: dict[str, dict[str, Posting]] = {}
        for lineno, rec in records[1:]:
            kind = rec.get("kind")
            try:
                if kind == "header":
                    raise errors.FormatError(f"line {lineno}: duplicate header")
                elif kind == "chunk":
                    cid = rec["id"]
                    if cid in pkg.chunks:
                        raise errors.FormatError(f"line {lineno}: duplicate id {cid}")
                    span = (int(rec["span"][0]), int(rec["span"][1]))
                    pkg.chunks[cid] = TextChunkNode(cid, rec["doc_id"], span, rec["text"])
                    pkg.chunk_entities[cid] = set()
                elif kind == "entity":
                    eid = rec["id"]
                    if eid in pkg.entities:
                        raise errors.FormatError(f"line {lineno}: duplicate id {eid}")
                    pkg.entities[eid] = EntityNode(
                        eid, rec["name"], rec["normalized_name"], rec["entity_type"],
                        rec["description"], set(rec["source_chunk_ids"]))
                elif kind == "edge":
                    rid = rec["id"]
                    if rid in pkg.edges:
                        raise errors.FormatError(f"line {lineno}: duplicate id {rid}")
                    pkg.edges[rid] = RelationEdge(
                        rid, rec["src"], rec["dst"], rec["relation_type"],
                        rec["description"], float(rec["weight"]),
                        set(rec["provenance_chunk_ids"]), rec.get("temporal"))
                elif kind == "mp_posting":
                    node = rec["node"]
                    per_node = postings.setdefault(node, {})
                    label = rec["template"]
                    if label in per_node:
                        raise errors.FormatError(
                            f"line {lineno}: duplicate posting ({node}, {label})")
                    per_node[label] = Posting(
                        [tuple(chain) for chain in rec["instances"]],
                        bool(rec["truncated"]))
                else:
                    raise errors.FormatError(f"line {lineno}: unknown kind {kind!r}")
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise errors.FormatError(f"line {lineno}: bad record: {exc}") from exc

        # Adjacency and links are rebuilt, never trusted from the file.
        for eid, ent in pkg.entities.items():
            pkg.out_edges[eid] = []
            pkg.in_edges[eid] = []
            pkg._by_key[(ent.normalized_name, ent.entity_type)] = eid
            pkg._by_name.setdefault(ent.normalized_name, []).append(eid)
            for cid in ent.source_chunk_ids:
                if cid in pkg.chunk_entities:
                    pkg.chunk_entities[cid].add(eid)
        for rid in sorted(pkg.edges):
            edge = pkg.edges[rid]
            if edge.src in pkg.out_edges:
                pkg.out_edges[edge.src].append(rid)
            if edge.dst in pkg.in_edges:
                pkg.in_edges[edge.dst].append(rid)
        if postings:
            pkg.metapath_index = MetaPathIndex.from_postings(
                postings, MetaPathConfig(n=pkg.metapath_max_len))

        violations = pkg.validate()
        if violations:
            first = violations[0]
            raise errors.IntegrityError(
                f"{len(violations)} violations, first: "
                f"{first.rule} on {first.record_id}: {first.detail}")
        pkg.freeze()
        return pkg

    # -- comparison --------------------------------------------------------

    def structurally_equal(self, other: "Pkg") -> bool:
        """Content equality ignoring derived state (vectors, adjacency order)."""
        if (self.embed_dim, self.embed_provider, self.metapath_max_len) != \
           (other.embed_dim, other.embed_provider, other.metapath_max_len):
            return False
        if set(self.chunks) != set(other.chunks):
            return False
        for cid, c in self.chunks.items():
            o = other.chunks[cid]
            if (c.doc_id, c.span, c.text) != (o.doc_id, o.span, o.text):
                return False
        if set(self.entities) != set(other.entities):
            return False
        for eid, e in self.entities.items():
            o = other.entities[eid]
            if (e.name, e.normalized_name, e.entity_type, e.description,
                    e.source_chunk_ids) != \
               (o.name, o.normalized_name, o.entity_type, o.description,
                    o.source_chunk_ids):
                return False
        if set(self.edges) != set(other.edges):
            return False
        for rid, r in self.edges.items():
            o = other.edges[rid]
            if (r.src, r.dst, r.relation_type, r.description, r.weight,
                    r.provenance_chunk_ids, r.temporal) != \
               (o.src, o.dst, o.relation_type, o.description, o.weight,
                    o.provenance_chunk_ids, o.temporal):
                return False
        mine = self.metapath_index.as_dict() if self.metapath_index else {}
        theirs = other.metapath_index.as_dict() if other.metapath_index else {}
        return mine == theirs

    def stats(self) -> dict:
        templates = len(self.metapath_index.catalog) if self.metapath_index else 0
        return {"chunks": len(self.chunks), "entities": len(self.entities),
                "edges": len(self.edges), "templates": templates,
                "embed_dim": self.embed_dim, "embed_provider": self.embed_provider,
                "metapath_max_len": self.metapath_max_len}
