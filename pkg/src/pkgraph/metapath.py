"""Meta-path templates, pre-computed per-node postings, and typed traversal.

A meta-path is a chain of node types; matching follows the node chain only
and ignores edge relation types. Paths shorter than the configured bound are
enumerated once after the graph is built and stored per start node, so
queries answer multi-hop questions by lookup instead of on-the-fly search.
Longer templates fall back to a bounded DFS with identical matching rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import _kernels, errors
from .embedding import cosine

if TYPE_CHECKING:
    from .graph import Pkg
    from .retriever import QueryBundle


@dataclass(frozen=True)
class MetaPathTemplate:
    """Ordered chain of entity types; the label is the dash-join."""

    node_types: tuple[str, ...]

    def __post_init__(self):
        if len(self.node_types) < 2:
            raise ValueError("a template needs at least 2 node types")

    @property
    def label(self) -> str:
        return "-".join(self.node_types)

    @property
    def edge_count(self) -> int:
        return len(self.node_types) - 1

    @classmethod
    def from_label(cls, label: str) -> "MetaPathTemplate":
        return cls(tuple(label.split("-")))


@dataclass(frozen=True)
class MetaPathInstance:
    """A concrete node chain conforming to a template.

    edge_ids carries every edge connecting consecutive chain nodes (all
    parallel edges, either direction) purely as provenance; matching never
    looks at them.
    """

    template: MetaPathTemplate
    node_ids: tuple[str, ...]
    edge_ids: tuple[str, ...]


@dataclass
class MetaPathConfig:
    n: int = 4                      # paths with fewer than n edges are pre-stored
    per_node_template_cap: int = 64
    selection_top_k: int = 3
    text_weight: float = 0.7
    type_weight: float = 0.3
    fallback_result_cap: int = 1024

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.per_node_template_cap < 1:
            raise ValueError("cap must be >= 1")


@dataclass
class Posting:
    instances: list[tuple[str, ...]]
    truncated: bool = False


class MetaPathIndex:
    """Per-node postings: entity id -> template label -> stored node chains."""

    def __init__(self, config: MetaPathConfig):
        self.config = config
        self.postings: dict[str, dict[str, Posting]] = {}
        self.catalog: dict[str, int] = {}
        self._label_vecs: dict[str, object] = {}

    @classmethod
    def from_postings(cls, postings: dict[str, dict[str, Posting]],
                      config: MetaPathConfig) -> "MetaPathIndex":
        index = cls(config)
        index.postings = postings
        for per_node in postings.values():
            for label, posting in per_node.items():
                index.catalog[label] = index.catalog.get(label, 0) + len(posting.instances)
        return index

    def posting_for(self, node_id: str, label: str) -> Posting | None:
        return self.postings.get(node_id, {}).get(label)

    def records(self):
        """Serialized posting records, sorted by (node, template)."""
        for node_id in sorted(self.postings):
            per_node = self.postings[node_id]
            for label in sorted(per_node):
                posting = per_node[label]
                yield {"instances": [list(chain) for chain in posting.instances],
                       "kind": "mp_posting", "node": node_id, "template": label,
                       "truncated": posting.truncated}

    def as_dict(self) -> dict:
        return {node: {label: (list(p.instances), p.truncated)
                       for label, p in per_node.items()}
                for node, per_node in self.postings.items()}


def enumerate_metapaths(pkg: "Pkg", config: MetaPathConfig) -> MetaPathIndex:
    """Pre-compute every simple typed path with fewer than ``config.n`` edges.

    Traversal is undirected and ignores relation types. Entity ids are
    assigned DFS indices in sorted order, so the kernel's pre-order output is
    already the lexicographic order of id chains; per-(node, template) lists
    are truncated at the cap with a flag.
    """
    index = MetaPathIndex(config)
    ids = sorted(pkg.entities)
    if not ids:
        return index
    pos = {eid: i for i, eid in enumerate(ids)}
    types = [pkg.entities[eid].entity_type for eid in ids]

    indptr = np.zeros(len(ids) + 1, dtype=np.int32)
    neighbor_lists = []
    for i, eid in enumerate(ids):
        nbrs = sorted(pos[v] for v in pkg.neighbors(eid))
        neighbor_lists.append(nbrs)
        indptr[i + 1] = indptr[i] + len(nbrs)
    indices = np.fromiter((v for nbrs in neighbor_lists for v in nbrs),
                          dtype=np.int32, count=int(indptr[-1]))

    max_edges = config.n - 1
    cap = config.per_node_template_cap
    for si, sid in enumerate(ids):
        per_node: dict[str, Posting] = {}
        for path in _kernels.simple_paths_from(si, indptr, indices, max_edges):
            label = "-".join(types[p] for p in path)
            posting = per_node.get(label)
            if posting is None:
                posting = Posting([])
                per_node[label] = posting
            if len(posting.instances) < cap:
                posting.instances.append(tuple(ids[p] for p in path))
            else:
                posting.truncated = True
        if per_node:
            index.postings[sid] = per_node
            for label, posting in per_node.items():
                index.catalog[label] = index.catalog.get(label, 0) + len(posting.instances)
    return index


def select_templates(bundle: "QueryBundle", index: MetaPathIndex, k: int,
                     provider) -> list[tuple[MetaPathTemplate, float]]:
    """Rank catalog templates against a query.

    score = text_weight * cosine(query vector, embedded template label)
          + type_weight * fraction of template positions whose type is among
            the query entities' types.
    Ties break by ascending label; k=0 yields an empty list.
    """
    if not index.catalog:
        raise errors.EmptyIndex("meta-path index has no templates")
    if k <= 0:
        return []
    cfg = index.config
    scored = []
    for label in sorted(index.catalog):
        vec = index._label_vecs.get(label)
        if vec is None:
            vec = provider.embed(label.replace("-", " "))
            index._label_vecs[label] = vec
        text_score = cosine(bundle.query_vector, vec)
        template = MetaPathTemplate.from_label(label)
        if bundle.entity_types:
            matched = sum(1 for t in template.node_types if t in bundle.entity_types)
            type_score = matched / len(template.node_types)
        else:
            type_score = 0.0
        score = cfg.text_weight * text_score + cfg.type_weight * type_score
        scored.append((template, score))
    scored.sort(key=lambda item: (-item[1], item[0].label))
    return scored[:k]


def _typed_dfs(pkg: "Pkg", start: str, template: MetaPathTemplate,
               limit: int | None) -> list[tuple[str, ...]]:
    """Full typed enumeration for one start node, matching rules identical to
    the pre-computation: undirected, simple, positional type match."""
    chains: list[tuple[str, ...]] = []
    want = template.node_types
    if pkg.entities[start].entity_type != want[0]:
        return chains
    path = [start]
    on_path = {start}

    def rec(node: str, depth: int) -> bool:
        for nb in pkg.neighbors(node):
            if nb in on_path:
                continue
            if pkg.entities[nb].entity_type != want[depth + 1]:
                continue
            path.append(nb)
            on_path.add(nb)
            if depth + 1 == len(want) - 1:
                chains.append(tuple(path))
                if limit is not None and len(chains) >= limit:
                    path.pop()
                    on_path.discard(nb)
                    return False
            else:
                if not rec(nb, depth + 1):
                    path.pop()
                    on_path.discard(nb)
                    return False
            path.pop()
            on_path.discard(nb)
        return True

    rec(start, 0)
    return chains


def _with_edges(pkg: "Pkg", template: MetaPathTemplate,
                chain: tuple[str, ...]) -> MetaPathInstance:
    edge_ids: set[str] = set()
    for a, b in zip(chain, chain[1:]):
        edge_ids.update(pkg.edges_between(a, b))
    return MetaPathInstance(template, chain, tuple(sorted(edge_ids)))


def instances(start_entities: Iterable[str], template: MetaPathTemplate,
              index: MetaPathIndex, pkg: "Pkg") -> list[MetaPathInstance]:
    """Concrete chains for a template from the given start entities.

    Templates shorter than the pre-computation bound come straight from the
    postings (falling back to traversal where a posting was truncated);
    longer ones run a bounded DFS with a global result cap. Start entities of
    the wrong type contribute nothing.
    """
    starts = sorted(set(start_entities))
    chains: list[tuple[str, ...]] = []
    if template.edge_count < index.config.n:
        if template.label not in index.catalog:
            raise errors.UnknownTemplate(template.label)
        for start in starts:
            if start not in pkg.entities:
                continue
            posting = index.posting_for(start, template.label)
            if posting is None:
                continue
            if posting.truncated:
                chains.extend(_typed_dfs(pkg, start, template, None))
            else:
                chains.extend(posting.instances)
    else:
        budget = index.config.fallback_result_cap
        for start in starts:
            if start not in pkg.entities:
                continue
            remaining = budget - len(chains)
            if remaining <= 0:
                break
            chains.extend(_typed_dfs(pkg, start, template, remaining))
    unique = sorted(set(chains))
    return [_with_edges(pkg, template, chain) for chain in unique]
