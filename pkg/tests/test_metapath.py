from __future__ import annotations

from random import Random

import pytest

from pkgraph import (HashEmbedder, MetaPathConfig, MetaPathTemplate, Pkg,
                     cosine, errors)
from pkgraph.metapath import enumerate_metapaths, instances, select_templates
from pkgraph.retriever import QueryBundle
from conftest import base_graph, random_typed_graph
from oracles import brute_force_simple_paths


def _professor_graph() -> tuple[Pkg, str, str, str]:
    pkg, (c1,) = base_graph()
    a = pkg.add_entity("Prof Ada", "professor", "", {c1})
    b = pkg.add_entity("Atlas Project", "project", "", {c1})
    c = pkg.add_entity("Prof Cyr", "professor", "", {c1})
    pkg.add_relation(a, b, "leads", "", 0.9, {c1})
    pkg.add_relation(c, b, "joined", "", 0.8, {c1})
    return pkg, a, b, c


def test_enumerate_path_graph_example():
    pkg, a, b, c = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    posting = index.posting_for(a, "professor-project-professor")
    assert posting is not None
    assert posting.instances == [(a, b, c)]
    assert not posting.truncated


def test_enumerate_n1_yields_no_templates():
    pkg, *_ = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=1))
    assert index.catalog == {}
    assert index.postings == {}


def test_enumerate_matches_brute_force_oracle():
    for seed in range(8):
        n = (seed % 3) + 2  # n in {2, 3, 4}
        pkg = random_typed_graph(seed=100 + seed, max_nodes=60, max_edges=150,
                                 n=n, cap=10_000)
        node_types = {eid: e.entity_type for eid, e in pkg.entities.items()}
        pairs = [(e.src, e.dst) for e in pkg.edges.values()]
        index = pkg.metapath_index
        for start in sorted(pkg.entities):
            expected = brute_force_simple_paths(node_types, pairs, start, n - 1)
            got = {label: posting.instances
                   for label, posting in index.postings.get(start, {}).items()}
            assert got == expected


def test_enumerate_cap_truncates_to_sorted_prefix():
    pkg, (c1,) = base_graph()
    hub = pkg.add_entity("hub", "h", "", {c1})
    spokes = [pkg.add_entity(f"spoke {i:03d}", "s", "", {c1}) for i in range(20)]
    for s in spokes:
        pkg.add_relation(hub, s, "r", "", 0.5, {c1})
    index = enumerate_metapaths(pkg, MetaPathConfig(n=2, per_node_template_cap=5))
    posting = index.posting_for(hub, "h-s")
    assert posting.truncated
    assert len(posting.instances) == 5
    full = sorted((hub, s) for s in spokes)
    assert posting.instances == full[:5]


def test_relation_type_blindness():
    for seed in (50, 51):
        pkg = random_typed_graph(seed=seed, max_nodes=40, max_edges=100)
        rng = Random(seed)
        types = sorted({e.relation_type for e in pkg.edges.values()})
        shuffled = types[:]
        rng.shuffle(shuffled)
        mapping = dict(zip(types, shuffled))
        permuted, chunk_map = base_graph(n_chunks=3)
        for cid, chunk in sorted(pkg.chunks.items()):
            if cid not in permuted.chunks:
                permuted.add_chunk(chunk.doc_id, chunk.span, chunk.text)
        for eid in sorted(pkg.entities):
            e = pkg.entities[eid]
            permuted.add_entity(e.name, e.entity_type, e.description,
                                e.source_chunk_ids)
        for rid in sorted(pkg.edges):
            r = pkg.edges[rid]
            permuted.add_relation(r.src, r.dst, mapping[r.relation_type],
                                  r.description, r.weight, r.provenance_chunk_ids)
        i1 = enumerate_metapaths(pkg, MetaPathConfig(n=3))
        i2 = enumerate_metapaths(permuted, MetaPathConfig(n=3))
        assert i1.as_dict() == i2.as_dict()


def test_symmetry_reversed_instance_exists():
    pkg = random_typed_graph(seed=60, max_nodes=40, max_edges=100, n=3)
    index = pkg.metapath_index
    for start, per_node in index.postings.items():
        for label, posting in per_node.items():
            reversed_label = "-".join(reversed(label.split("-")))
            for chain in posting.instances:
                tail_posting = index.posting_for(chain[-1], reversed_label)
                assert tail_posting is not None
                assert tuple(reversed(chain)) in tail_posting.instances


# ---------------------------------------------------------------------------
# template selection
# ---------------------------------------------------------------------------

def _bundle(text: str, types: set[str], provider) -> QueryBundle:
    return QueryBundle(text, provider.embed(text), [], [], [],
                       entity_types=frozenset(types))


def test_select_templates_prefers_matching_types(provider):
    pkg, (c1,) = base_graph()
    a = pkg.add_entity("Prof Ada", "professor", "", {c1})
    b = pkg.add_entity("Atlas Project", "project", "", {c1})
    c = pkg.add_entity("Prof Cyr", "professor", "", {c1})
    x = pkg.add_entity("Lyon", "city", "", {c1})
    y = pkg.add_entity("Omar", "person", "", {c1})
    z = pkg.add_entity("Oslo", "city", "", {c1})
    pkg.add_relation(a, b, "leads", "", 0.9, {c1})
    pkg.add_relation(c, b, "joined", "", 0.8, {c1})
    pkg.add_relation(x, y, "born_in", "", 0.9, {c1})
    pkg.add_relation(z, y, "lives_in", "", 0.9, {c1})
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    bundle = _bundle("professor project collaboration", {"professor", "project"},
                     provider)
    ranked = select_templates(bundle, index, k=10, provider=provider)
    scores = {tpl.label: score for tpl, score in ranked}
    # independent score computation straight from the formula
    for label in ("professor-project-professor", "city-person-city"):
        text_score = cosine(bundle.query_vector,
                            provider.embed(label.replace("-", " ")))
        tpl_types = label.split("-")
        frac = sum(t in bundle.entity_types for t in tpl_types) / len(tpl_types)
        assert scores[label] == pytest.approx(0.7 * text_score + 0.3 * frac,
                                              abs=1e-12)
    assert scores["professor-project-professor"] > scores["city-person-city"]
    labels = [tpl.label for tpl, _ in ranked]
    assert labels.index("professor-project-professor") < \
        labels.index("city-person-city")


def test_select_templates_k_zero(provider):
    pkg, a, b, c = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    bundle = _bundle("anything", set(), provider)
    assert select_templates(bundle, index, 0, provider) == []


def test_select_templates_tie_breaks_alphabetically(provider):
    pkg, (c1,) = base_graph()
    a = pkg.add_entity("aa", "t", "", {c1})
    b = pkg.add_entity("bb", "t", "", {c1})
    pkg.add_relation(a, b, "r", "", 0.5, {c1})
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    index.catalog["s-s"] = 0  # synthetic second label with an identical score
    index._label_vecs["s-s"] = index._label_vecs.get("t-t") or provider.embed("t t")
    index._label_vecs["t-t"] = index._label_vecs["s-s"]
    bundle = _bundle("zzz unrelated", set(), provider)
    ranked = select_templates(bundle, index, 2, provider)
    assert [tpl.label for tpl, _ in ranked] == ["s-s", "t-t"]


def test_select_templates_empty_index(provider):
    index = enumerate_metapaths(Pkg(), MetaPathConfig())
    bundle = _bundle("query", set(), provider)
    with pytest.raises(errors.EmptyIndex):
        select_templates(bundle, index, 3, provider)


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

def test_instances_from_posting():
    pkg, a, b, c = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    got = instances([a], MetaPathTemplate(("professor", "project", "professor")),
                    index, pkg)
    assert [inst.node_ids for inst in got] == [(a, b, c)]
    edge_ids = set(got[0].edge_ids)
    assert edge_ids == set(pkg.edges)  # both hops' edges recorded


def test_instances_wrong_start_type_empty():
    pkg, a, b, c = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    got = instances([b], MetaPathTemplate(("professor", "project", "professor")),
                    index, pkg)
    assert got == []


def test_instances_unknown_template():
    pkg, a, b, c = _professor_graph()
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    with pytest.raises(errors.UnknownTemplate):
        instances([a], MetaPathTemplate(("city", "person")), index, pkg)


def test_instances_long_template_falls_back_to_dfs():
    pkg, (c1,) = base_graph()
    ids = [pkg.add_entity(f"n{i}", f"t{i}", "", {c1}) for i in range(5)]
    for u, v in zip(ids, ids[1:]):
        pkg.add_relation(u, v, "r", "", 0.5, {c1})
    index = enumerate_metapaths(pkg, MetaPathConfig(n=3))
    template = MetaPathTemplate(tuple(f"t{i}" for i in range(5)))  # 4 edges >= n
    got = instances([ids[0]], template, index, pkg)
    assert [inst.node_ids for inst in got] == [tuple(ids)]
    oracle = brute_force_simple_paths(
        {eid: e.entity_type for eid, e in pkg.entities.items()},
        [(e.src, e.dst) for e in pkg.edges.values()], ids[0], 4)
    assert oracle[template.label] == [tuple(ids)]


def test_instances_truncated_posting_uses_fallback():
    pkg, (c1,) = base_graph()
    hub = pkg.add_entity("hub", "h", "", {c1})
    spokes = [pkg.add_entity(f"spoke {i:03d}", "s", "", {c1}) for i in range(8)]
    for s in spokes:
        pkg.add_relation(hub, s, "r", "", 0.5, {c1})
    index = enumerate_metapaths(pkg, MetaPathConfig(n=2, per_node_template_cap=3))
    got = instances([hub], MetaPathTemplate(("h", "s")), index, pkg)
    assert len(got) == 8  # all instances recovered despite the capped posting
    assert sorted(inst.node_ids for inst in got) == sorted(
        (hub, s) for s in spokes)
