from __future__ import annotations

from random import Random

import pytest

from pkgraph import HashEmbedder, MetaPathConfig, Pkg
from pkgraph.metapath import enumerate_metapaths


@pytest.fixture
def provider():
    return HashEmbedder(256)


def base_graph(n_chunks: int = 1) -> tuple[Pkg, list[str]]:
    """Empty graph with a few chunks to ground entities in."""
    pkg = Pkg()
    chunk_ids = []
    for i in range(n_chunks):
        text = f"ground chunk {i} text."
        chunk_ids.append(pkg.add_chunk(f"ground{i}", (0, len(text)), text))
    return pkg, chunk_ids


def random_typed_graph(seed: int, max_nodes: int = 200, max_edges: int = 600,
                       n_types: int | None = None,
                       n: int = 4, cap: int = 64,
                       with_index: bool = True) -> Pkg:
    """Seeded random graph built through the public API.

    Entities get distinct names, random types, and are grounded across a few
    chunks; edges connect random distinct pairs with random relation types.
    """
    rng = Random(seed)
    n_nodes = rng.randint(10, max_nodes)
    n_edges = rng.randint(n_nodes // 2, max_edges)
    n_types = n_types or rng.randint(2, 6)
    pkg, chunk_ids = base_graph(n_chunks=3)
    eids = []
    for i in range(n_nodes):
        eid = pkg.add_entity(f"node {i:04d}", f"t{rng.randrange(n_types)}",
                             f"synthetic node {i}", {rng.choice(chunk_ids)})
        eids.append(eid)
    rel_types = [f"rel{j}" for j in range(4)]
    for _ in range(n_edges):
        u, v = rng.sample(eids, 2)
        pkg.add_relation(u, v, rng.choice(rel_types), "", rng.random(),
                         {rng.choice(chunk_ids)})
    if with_index:
        pkg.metapath_index = enumerate_metapaths(pkg, MetaPathConfig(
            n=n, per_node_template_cap=cap))
    pkg.freeze()
    return pkg


_WORDS = ("amber basin cedar drift ember fjord grove harbor inlet juniper "
          "kiln lagoon meadow north orchard prairie quarry ridge summit "
          "timber upland vale willow zenith arbor bluff cove dune").split()

_FIRST = ("Maren Tobin Elsa Rupert Ines Callum Vera Otto Lydia Hamish "
          "Petra Silas Noor Felix Greta Ivan").split()

_LAST = ("Ashford Bellwood Carmody Draven Ellery Fairburn Granholm Hollis "
         "Ibsen Jardine Kessler Lindqvist").split()


def random_corpus(seed: int, n_docs: int, sentences_per_doc: int = 12,
                  name_every: int = 3) -> list[tuple[str, str]]:
    """Random prose with planted capitalized names and occasional dates, so
    rule extraction and co-occurrence both fire."""
    rng = Random(seed)
    docs = []
    for d in range(n_docs):
        sentences = []
        for s in range(sentences_per_doc):
            words = [rng.choice(_WORDS) for _ in range(rng.randint(5, 11))]
            if s % name_every == 0:
                name = f"{rng.choice(_FIRST)} {rng.choice(_LAST)}"
                words.insert(rng.randint(1, len(words)), name)
                if rng.random() < 0.5:
                    words.append(f"{rng.choice(_FIRST)} {rng.choice(_LAST)}")
            if rng.random() < 0.15:
                words.append(f"2024-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}")
            sentence = " ".join(words)
            sentences.append(sentence[0].upper() + sentence[1:] + ".")
        docs.append((f"doc{d:04d}", " ".join(sentences)))
    return docs
