"""Query analysis, the three retrieval channels, and rank fusion.

Every channel returns chunk-level hits: pattern matches and entity hits are
always mapped back to the text chunks that ground them, so the final context
package is natural language, never bare triples. Channels are fused with
weighted reciprocal-rank fusion, which depends only on per-channel ranks and
is therefore stable under any monotone rescaling of raw channel scores.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .builder import load_prompt, _fill
from .embedding import Vector
from .graph import Pkg, normalize_name
from .llm import LlmClient
from .metapath import MetaPathIndex, MetaPathInstance, select_templates, instances

logger = logging.getLogger(__name__)

CHANNELS = ("regex", "vector", "metapath")

_HYPO_PROMPT = ("Write up to 2 short hypothetical answers to the question, "
                "one per line, no numbering.\nQuestion: {query}")


@dataclass
class QueryBundle:
    raw_text: str
    query_vector: Vector
    query_entities: list[tuple[str, tuple[str, ...]]]
    relation_hints: list[str]
    hypothetical_answers: list[tuple[str, Vector]]
    entity_types: frozenset[str] = frozenset()

    def entity_ids(self) -> list[str]:
        return sorted({eid for _, ids in self.query_entities for eid in ids})


@dataclass
class ChannelHit:
    chunk_id: str
    raw_score: float
    entities: tuple[str, ...] = ()
    paths: tuple[MetaPathInstance, ...] = ()


@dataclass
class ChannelResult:
    channel: str
    hits: list[ChannelHit]
    flag: str | None = None


@dataclass
class FusionConfig:
    rrf_k: int = 60
    w_regex: float = 1.0
    w_vector: float = 1.0
    w_metapath: float = 1.2
    output_k: int = 10
    channel_depth: int = 50
    llm_rerank: bool = False

    def __post_init__(self):
        if self.rrf_k < 1:
            raise ValueError("rrf_k must be >= 1")
        if min(self.w_regex, self.w_vector, self.w_metapath) < 0:
            raise ValueError("channel weights must be >= 0")

    def weight(self, channel: str) -> float:
        return {"regex": self.w_regex, "vector": self.w_vector,
                "metapath": self.w_metapath}[channel]


@dataclass
class ContextItem:
    chunk_id: str
    doc_id: str
    text: str
    fused_score: float
    per_channel_scores: dict[str, float]
    entities: tuple[str, ...]
    edges: tuple[str, ...]
    paths: tuple[tuple[str, ...], ...]

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "fused_score": self.fused_score,
            "per_channel_scores": dict(sorted(self.per_channel_scores.items())),
            "provenance": {
                "edges": list(self.edges),
                "entities": list(self.entities),
                "paths": [list(p) for p in self.paths],
            },
            "text": self.text,
        }


@dataclass
class ContextPackage:
    items: list[ContextItem]
    blocks: list[str]

    @property
    def text(self) -> str:
        return "\n\n".join(self.blocks)


# ---------------------------------------------------------------------------
# query analysis
# ---------------------------------------------------------------------------

def _query_tokens(text: str) -> list[str]:
    return re.findall(r"[^\W_]+", text.casefold(), re.UNICODE)


def analyze_query(text: str, pkg: Pkg,
                  llm_client: LlmClient | None = None) -> QueryBundle:
    """Derive everything the channels need from a raw query.

    Entity mentions are found by longest-match of query token n-grams against
    normalized entity names; relation hints are query tokens that occur in the
    graph's relation-type vocabulary. With a model client, up to two
    hypothetical answers are generated and embedded alongside the query.
    """
    if not text or not text.strip():
        raise errors.EmptyQuery("query is empty")
    pkg.ensure_vectors()
    provider = pkg.provider
    query_vector = provider.embed(text)

    name_map: dict[str, list[str]] = {}
    max_len = 1
    for eid in sorted(pkg.entities):
        norm = pkg.entities[eid].normalized_name
        name_map.setdefault(norm, []).append(eid)
        max_len = max(max_len, len(norm.split()))
    max_len = min(max_len, 8)

    tokens = _query_tokens(text)
    query_entities: list[tuple[str, tuple[str, ...]]] = []
    i = 0
    while i < len(tokens):
        matched = False
        for length in range(min(max_len, len(tokens) - i), 0, -1):
            surface = " ".join(tokens[i:i + length])
            ids = name_map.get(surface)
            if ids:
                query_entities.append((surface, tuple(sorted(ids))))
                i += length
                matched = True
                break
        if not matched:
            i += 1

    vocab: dict[str, set[str]] = {}
    for edge in pkg.edges.values():
        rt = edge.relation_type
        parts = set(re.findall(r"[a-z0-9]+", rt.lower()))
        parts.add(rt.lower())
        for part in parts:
            vocab.setdefault(part, set()).add(rt)
    hints: set[str] = set()
    for tok in tokens:
        hints.update(vocab.get(tok, ()))

    hypothetical: list[tuple[str, Vector]] = []
    if llm_client is not None:
        reply = llm_client.complete(_fill(_HYPO_PROMPT, query=text))
        for line in reply.splitlines():
            line = line.strip()
            if line:
                hypothetical.append((line, provider.embed(line)))
            if len(hypothetical) == 2:
                break

    types = frozenset(pkg.entities[eid].entity_type
                      for _, ids in query_entities for eid in ids)
    return QueryBundle(text, query_vector, query_entities, sorted(hints),
                       hypothetical, types)


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def regex_retrieve(pkg: Pkg, patterns: list[str] | None = None,
                   bundle: QueryBundle | None = None) -> ChannelResult:
    """Pattern channel: match entity names and chunk texts.

    A matched entity contributes every chunk of its 1-hop neighborhood at 2
    points per name match; a matching chunk text contributes itself at 1 point
    per occurrence. Without explicit patterns, word-boundary-escaped query
    entity surfaces are used.
    """
    compiled = []
    if patterns:
        for pat in patterns:
            try:
                compiled.append(re.compile(pat))
            except re.error as exc:
                raise errors.BadPattern(f"{pat!r}: {exc}") from exc
    elif bundle is not None and bundle.query_entities:
        for surface, _ in bundle.query_entities:
            compiled.append(re.compile(r"\b" + re.escape(surface) + r"\b",
                                       re.IGNORECASE))
    if not compiled:
        return ChannelResult("regex", [], flag="no_patterns")

    scores: dict[str, float] = {}
    supporting: dict[str, set[str]] = {}
    for pat in compiled:
        for eid in sorted(pkg.entities):
            occurrences = len(pat.findall(pkg.entities[eid].name))
            if not occurrences:
                continue
            cluster = pkg.neighborhood(eid, 1)
            for chunk in cluster.chunks:
                scores[chunk.id] = scores.get(chunk.id, 0.0) + 2.0 * occurrences
                supporting.setdefault(chunk.id, set()).add(eid)
        for cid in sorted(pkg.chunks):
            occurrences = len(pat.findall(pkg.chunks[cid].text))
            if occurrences:
                scores[cid] = scores.get(cid, 0.0) + 1.0 * occurrences
    hits = [ChannelHit(cid, score, tuple(sorted(supporting.get(cid, ()))))
            for cid, score in scores.items()]
    hits.sort(key=lambda h: (-h.raw_score, h.chunk_id))
    return ChannelResult("regex", hits)


def vector_retrieve(pkg: Pkg, bundle: QueryBundle, k: int) -> ChannelResult:
    """Semantic channel: exact cosine scan over chunk and entity embeddings,
    max-pooled over the query vector and any hypothetical-answer vectors;
    entity hits inherit down to their source chunks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pkg.ensure_vectors()
    matrix = pkg.vector_matrix
    ids = pkg.vector_ids
    if not ids:
        return ChannelResult("vector", [], flag="empty_graph")
    queries = [bundle.query_vector] + [vec for _, vec in bundle.hypothetical_answers]
    pooled = np.full(len(ids), -np.inf)
    for qv in queries:
        pooled = np.maximum(pooled, matrix @ qv.unit())

    scores: dict[str, float] = {}
    supporting: dict[str, set[str]] = {}
    for idx, nid in enumerate(ids):
        score = float(pooled[idx])
        if nid in pkg.chunks:
            if score > scores.get(nid, -np.inf):
                scores[nid] = score
        else:
            for cid in pkg.entities[nid].source_chunk_ids:
                if score > scores.get(cid, -np.inf):
                    scores[cid] = score
                    supporting.setdefault(cid, set()).add(nid)
                elif score == scores.get(cid):
                    supporting.setdefault(cid, set()).add(nid)
    hits = [ChannelHit(cid, score, tuple(sorted(supporting.get(cid, ()))))
            for cid, score in scores.items()]
    hits.sort(key=lambda h: (-h.raw_score, h.chunk_id))
    return ChannelResult("vector", hits[:k])


def metapath_retrieve(pkg: Pkg, bundle: QueryBundle, index: MetaPathIndex | None,
                      selection_top_k: int | None = None) -> ChannelResult:
    """Structural channel: walk selected meta-path templates from the query's
    entities; every node's source chunks and every traversed edge's provenance
    chunks score template_score / path_edge_count per instance."""
    start_ids = bundle.entity_ids()
    if not start_ids:
        return ChannelResult("metapath", [], flag="no_entities")
    if index is None or not index.catalog:
        return ChannelResult("metapath", [], flag="no_templates")
    pkg.ensure_vectors()
    top_k = selection_top_k if selection_top_k is not None \
        else index.config.selection_top_k
    try:
        templates = select_templates(bundle, index, top_k, pkg.provider)
    except errors.EmptyIndex:
        return ChannelResult("metapath", [], flag="no_templates")

    scores: dict[str, float] = {}
    supporting: dict[str, set[str]] = {}
    path_support: dict[str, list[MetaPathInstance]] = {}
    any_compatible = False
    for template, template_score in templates:
        starts = [eid for eid in start_ids
                  if pkg.entities[eid].entity_type == template.node_types[0]]
        if not starts:
            continue
        any_compatible = True
        for inst in instances(starts, template, index, pkg):
            contributed: set[str] = set()
            for node_id in inst.node_ids:
                contributed.update(pkg.entities[node_id].source_chunk_ids)
            for edge_id in inst.edge_ids:
                contributed.update(pkg.edges[edge_id].provenance_chunk_ids)
            per_chunk = template_score / template.edge_count
            for cid in contributed:
                scores[cid] = scores.get(cid, 0.0) + per_chunk
                supporting.setdefault(cid, set()).update(inst.node_ids)
                path_support.setdefault(cid, []).append(inst)
    if not any_compatible:
        return ChannelResult("metapath", [], flag="no_templates")
    hits = [ChannelHit(cid, score, tuple(sorted(supporting.get(cid, ()))),
                       tuple(path_support.get(cid, ())))
            for cid, score in scores.items()]
    hits.sort(key=lambda h: (-h.raw_score, h.chunk_id))
    return ChannelResult("metapath", hits)


# ---------------------------------------------------------------------------
# fusion and context assembly
# ---------------------------------------------------------------------------

def fuse_rerank(pkg: Pkg, channel_results: list[ChannelResult],
                fusion_config: FusionConfig,
                llm_client: LlmClient | None = None,
                query_text: str = "") -> list[ContextItem]:
    """Weighted reciprocal-rank fusion of the channel results.

    fused(chunk) = sum over channels holding the chunk of w_c / (rrf_k + rank).
    Optionally the top 2k items are re-ordered by a model; a reply that is not
    a permutation of the candidate numbers is ignored.
    """
    if not channel_results:
        raise errors.NoChannels("no channel results to fuse")
    fused: dict[str, float] = {}
    per_channel: dict[str, dict[str, float]] = {}
    entities: dict[str, set[str]] = {}
    paths: dict[str, list[MetaPathInstance]] = {}
    for result in channel_results:
        weight = fusion_config.weight(result.channel)
        ranked = sorted(result.hits, key=lambda h: (-h.raw_score, h.chunk_id))
        for rank, hit in enumerate(ranked, start=1):
            fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + \
                weight / (fusion_config.rrf_k + rank)
            per_channel.setdefault(hit.chunk_id, {})[result.channel] = hit.raw_score
            entities.setdefault(hit.chunk_id, set()).update(hit.entities)
            paths.setdefault(hit.chunk_id, []).extend(hit.paths)

    ordered = sorted(fused, key=lambda cid: (-fused[cid], cid))
    if fusion_config.llm_rerank and llm_client is not None:
        pool = ordered[:2 * fusion_config.output_k]
        reordered = _llm_rerank(pkg, pool, llm_client, query_text)
        ordered = reordered + ordered[len(pool):]
    ordered = ordered[:fusion_config.output_k]

    items = []
    for cid in ordered:
        chunk = pkg.chunks[cid]
        seen_chains = []
        for inst in paths.get(cid, []):
            if inst.node_ids not in seen_chains:
                seen_chains.append(inst.node_ids)
        edge_ids = sorted({edge_id for inst in paths.get(cid, [])
                           for edge_id in inst.edge_ids})
        items.append(ContextItem(
            chunk_id=cid, doc_id=chunk.doc_id, text=chunk.text,
            fused_score=fused[cid],
            per_channel_scores=dict(sorted(per_channel.get(cid, {}).items())),
            entities=tuple(sorted(entities.get(cid, ()))),
            edges=tuple(edge_ids),
            paths=tuple(seen_chains)))
    return items


def _llm_rerank(pkg: Pkg, pool: list[str], llm_client: LlmClient,
                query_text: str) -> list[str]:
    if not pool:
        return pool
    listing = "\n".join(f"{i + 1}. {pkg.chunks[cid].text}"
                        for i, cid in enumerate(pool))
    prompt = _fill(load_prompt("rerank.txt"), query=query_text, candidates=listing)
    reply = llm_client.complete(prompt)
    try:
        order = [int(tok) for tok in re.split(r"[,\s]+", reply.strip()) if tok]
    except ValueError:
        return pool
    if sorted(order) != list(range(1, len(pool) + 1)):
        return pool
    return [pool[i - 1] for i in order]


def assemble_context(items: list[ContextItem], char_budget: int) -> ContextPackage:
    """Greedy context packing in fused order.

    Each block is a provenance header line plus the chunk text. Chunks are
    never split mid-text except the last block, which is truncated at a
    whitespace boundary to fit the budget.
    """
    if char_budget <= 0:
        raise ValueError("char_budget must be > 0")
    taken: list[ContextItem] = []
    blocks: list[str] = []
    used = 0
    for item in items:
        header = (f"[chunk {item.chunk_id} | doc {item.doc_id} | "
                  f"score {item.fused_score:.6f}]")
        block = header + "\n" + item.text
        sep = 2 if blocks else 0
        if used + sep + len(block) <= char_budget:
            blocks.append(block)
            taken.append(item)
            used += sep + len(block)
            continue
        room = char_budget - used - sep - len(header) - 1
        if room > 0:
            cut = item.text[:room]
            boundary = cut.rfind(" ")
            if boundary > 0:
                cut = cut[:boundary]
            cut = cut.rstrip()
            if cut:
                blocks.append(header + "\n" + cut)
                taken.append(item)
        break
    return ContextPackage(taken, blocks)


# ---------------------------------------------------------------------------
# facade shared by CLI, HTTP service, and the eval harness
# ---------------------------------------------------------------------------

class Retriever:
    """One retrieval core: analyze, run the requested channels, fuse."""

    def __init__(self, pkg: Pkg, fusion: FusionConfig | None = None,
                 llm_client: LlmClient | None = None):
        self.pkg = pkg
        self.fusion = fusion or FusionConfig()
        self.llm_client = llm_client

    def analyze(self, query: str) -> QueryBundle:
        return analyze_query(query, self.pkg, self.llm_client)

    def run_channels(self, bundle: QueryBundle,
                     channels: tuple[str, ...] = CHANNELS) -> list[ChannelResult]:
        for name in channels:
            if name not in CHANNELS:
                raise ValueError(f"unknown channel {name!r}")
        results = []
        if "regex" in channels:
            results.append(regex_retrieve(self.pkg, bundle=bundle))
        if "vector" in channels:
            results.append(vector_retrieve(self.pkg, bundle,
                                           self.fusion.channel_depth))
        if "metapath" in channels:
            results.append(metapath_retrieve(self.pkg, bundle,
                                             self.pkg.metapath_index))
        return results

    def retrieve(self, query: str, channels: tuple[str, ...] = CHANNELS,
                 k: int | None = None) -> tuple[list[ContextItem], list[str]]:
        """Ranked context items plus any channel flags (e.g. an empty
        meta-path channel on a query with no known entities)."""
        bundle = self.analyze(query)
        results = self.run_channels(bundle, channels)
        flags = [f"{r.channel}:{r.flag}" for r in results if r.flag]
        fusion = self.fusion
        if k is not None:
            fusion = FusionConfig(
                rrf_k=fusion.rrf_k, w_regex=fusion.w_regex, w_vector=fusion.w_vector,
                w_metapath=fusion.w_metapath, output_k=k,
                channel_depth=fusion.channel_depth, llm_rerank=fusion.llm_rerank)
        items = fuse_rerank(self.pkg, results, fusion,
                            llm_client=self.llm_client, query_text=query)
        return items, flags

    def retrieve_package(self, query: str, channels: tuple[str, ...] = CHANNELS,
                         k: int | None = None,
                         char_budget: int = 6000) -> tuple[ContextPackage, list[str]]:
        items, flags = self.retrieve(query, channels, k)
        return assemble_context(items, char_budget), flags


def items_to_json(items: list[ContextItem]) -> str:
    return json.dumps([item.to_dict() for item in items],
                      sort_keys=True, ensure_ascii=False, indent=2)
