from __future__ import annotations

import math

import pytest

from pkgraph import (BuilderConfig, ExtractionRule, HashEmbedder, MetaPathConfig,
                     MockLlmClient, MockRule, build, errors)
from pkgraph.builder import (DEFAULT_STOPWORDS, ExtractionCandidate,
                             default_rules, extract_cooc_relations,
                             extract_rule_entities, extract_rule_relations, glean,
                             merge_candidates, normalize_tokens,
                             parse_delimited_tuples, segment, split_sentences)
from pkgraph.graph import Pkg, TextChunkNode
from conftest import random_corpus


def _chunk(text: str, doc_id: str = "d") -> TextChunkNode:
    return TextChunkNode("c-test", doc_id, (0, len(text)), text)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def test_segment_packs_single_sentences_under_tiny_target():
    config = BuilderConfig(chunk_target_chars=4, chunk_overlap_chars=0)
    chunks = segment("A. B. C.", config)
    assert [text for _, text in chunks] == ["A. ", "B. ", "C."]


def test_segment_short_document_is_one_chunk():
    config = BuilderConfig()
    doc = "A short document. Nothing else."
    chunks = segment(doc, config)
    assert len(chunks) == 1
    (span, text), = chunks
    assert span == (0, len(doc))
    assert text == doc


def test_segment_empty_document():
    with pytest.raises(errors.EmptyDocument):
        segment("   ", BuilderConfig())


def test_segment_abbreviations_do_not_split():
    spans = split_sentences("Dr. Smith met e.g. Alice. Then Bob left.")
    assert len(spans) == 2


def test_segment_reconstructs_document():
    doc = random_corpus(seed=21, n_docs=1, sentences_per_doc=180)[0][1]
    assert len(doc) > 8000
    config = BuilderConfig(chunk_target_chars=500, chunk_overlap_chars=90)
    chunks = segment(doc, config)
    assert len(chunks) > 5
    rebuilt = chunks[0][1]
    prev_end = chunks[0][0][1]
    for (start, end), text in chunks[1:]:
        overlap = prev_end - start
        assert overlap >= 0
        rebuilt += text[overlap:]
        prev_end = end
    assert rebuilt == doc


def test_segment_overlap_length():
    doc = random_corpus(seed=22, n_docs=1, sentences_per_doc=60)[0][1]
    config = BuilderConfig(chunk_target_chars=400, chunk_overlap_chars=80)
    chunks = segment(doc, config)
    prev_span = chunks[0][0]
    prev_core_start = chunks[0][0][0]
    for span, _ in chunks[1:]:
        shared = prev_span[1] - span[0]
        core_len = prev_span[1] - prev_core_start
        assert shared == min(80, core_len)
        prev_core_start = prev_span[1]
        prev_span = span


def test_builder_config_rejects_overlap_ge_target():
    with pytest.raises(ValueError):
        BuilderConfig(chunk_target_chars=100, chunk_overlap_chars=100)


# ---------------------------------------------------------------------------
# token normalization
# ---------------------------------------------------------------------------

def test_normalize_tokens_drops_stopwords():
    assert normalize_tokens("The cat sat on the mat", {"the", "on"}) == \
        ["cat", "sat", "mat"]


def test_normalize_tokens_all_stopwords():
    assert normalize_tokens("the on the", {"the", "on"}) == []


def test_normalize_tokens_splits_non_alphanumerics():
    assert normalize_tokens("PKG-based RAG!", set()) == ["pkg", "based", "rag"]


def test_normalize_tokens_drops_single_chars():
    assert normalize_tokens("a b cd", set()) == ["cd"]


# ---------------------------------------------------------------------------
# rule extraction
# ---------------------------------------------------------------------------

def test_rule_extracts_iso_date():
    cands = extract_rule_entities(_chunk("Deadline is 2024-01-15."), default_rules())
    dates = [c for c in cands if c.entity_type == "date"]
    assert [c.name for c in dates] == ["2024-01-15"]
    assert all(c.confidence == 0.8 and c.origin == "rules" for c in cands)


def test_rule_extracts_dmy_date():
    cands = extract_rule_entities(_chunk("posted 03/11/2023 online"), default_rules())
    assert any(c.name == "03/11/2023" and c.entity_type == "date" for c in cands)


def test_rule_no_capitals_no_named_entities():
    cands = extract_rule_entities(_chunk("alice met bob"), default_rules())
    assert [c for c in cands if c.entity_type == "named_entity"] == []


def test_rule_sentence_initial_single_word_skipped():
    cands = extract_rule_entities(
        _chunk("Deadline passed. Alice Smith saw Paris today."), default_rules())
    names = {c.name for c in cands if c.entity_type == "named_entity"}
    assert names == {"Alice Smith", "Paris"}


def test_rule_quoted_work():
    cands = extract_rule_entities(
        _chunk('she cited "A Winter Study" twice'), default_rules())
    assert any(c.name == "A Winter Study" and c.entity_type == "work"
               for c in cands)


def test_overlapping_rules_both_emitted():
    cands = extract_rule_entities(
        _chunk('review "Solar Atlas" by Nina Vale'), default_rules())
    kinds = {(c.name, c.entity_type) for c in cands}
    assert ("Solar Atlas", "work") in kinds
    assert ("Solar Atlas", "named_entity") in kinds  # dedup happens at merge


def test_custom_relation_rule():
    rule = ExtractionRule("works", "relation",
                          r"(?P<src>[A-Z]\w+) works at (?P<dst>[A-Z]\w+)",
                          relation_type="works_at")
    cands = extract_rule_relations(_chunk("Nina works at Acme today"), [rule])
    assert len(cands) == 1
    assert (cands[0].src, cands[0].dst, cands[0].relation_type) == \
        ("Nina", "Acme", "works_at")


def test_bad_rule_pattern_rejected():
    with pytest.raises(ValueError):
        ExtractionRule("broken", "entity", r"(?P<wrong>x)")


# ---------------------------------------------------------------------------
# co-occurrence
# ---------------------------------------------------------------------------

def _entity_cand(name: str, chunk_id: str = "c-test") -> ExtractionCandidate:
    return ExtractionCandidate(kind="entity", confidence=0.8, origin="rules",
                               chunk_id=chunk_id, name=name, entity_type="t")


def test_cooc_counts_match_hand_computation():
    # 4 sentence windows: alpha in 3, beta in 2, gamma in 1; (alpha, beta)
    # co-occur in 2. PMI(alpha,beta) = ln(4*2/(3*2)), weight = 1 - e^-2.
    text = "Alpha visits Beta. Alpha visits Beta. Alpha rests alone. Gamma waits afar."
    chunk = _chunk(text)
    cands = [_entity_cand("Alpha"), _entity_cand("Beta"), _entity_cand("Gamma")]
    rels = extract_cooc_relations([(chunk, cands)], BuilderConfig())
    assert len(rels) == 1
    rel = rels[0]
    assert (rel.src, rel.dst) == ("Alpha", "Beta")
    assert rel.relation_type == "co_occurs_with"
    assert rel.weight == pytest.approx(1.0 - math.exp(-2), abs=1e-12)
    assert rel.confidence == 0.6
    hand_pmi = math.log(4 * 2 / (3 * 2))
    assert hand_pmi > 0.0  # the emitted pair clears the default threshold


def test_cooc_single_occurrence_below_min_count():
    text = "Alpha visits Beta. Alpha rests alone."
    chunk = _chunk(text)
    cands = [_entity_cand("Alpha"), _entity_cand("Beta")]
    rels = extract_cooc_relations([(chunk, cands)], BuilderConfig(cooc_min_count=2))
    assert rels == []


def test_cooc_pmi_threshold_filters():
    text = "Alpha visits Beta. Alpha visits Beta. Alpha rests alone. Gamma waits afar."
    chunk = _chunk(text)
    cands = [_entity_cand("Alpha"), _entity_cand("Beta"), _entity_cand("Gamma")]
    # PMI(alpha, beta) = ln(8/6) ~ 0.288 < 1.0
    rels = extract_cooc_relations([(chunk, cands)], BuilderConfig(cooc_min_pmi=1.0))
    assert rels == []


def test_cooc_window_spans_sentences():
    text = "Alpha arrived. Beta left. Alpha arrived. Beta left."
    chunk = _chunk(text)
    cands = [_entity_cand("Alpha"), _entity_cand("Beta")]
    assert extract_cooc_relations([(chunk, cands)], BuilderConfig()) == []
    rels = extract_cooc_relations([(chunk, cands)], BuilderConfig(cooc_window=2))
    assert len(rels) == 1


# ---------------------------------------------------------------------------
# delimited tuples
# ---------------------------------------------------------------------------

def test_parse_tuples_entity_and_relation():
    out, skipped = parse_delimited_tuples(
        '("entity"<|>Marie Curie<|>person<|>physicist)##'
        '("relation"<|>Marie Curie<|>Radium<|>discovered<|>isolated it<|>1898)')
    assert skipped == 0
    assert [c.kind for c in out] == ["entity", "relation"]
    ent, rel = out
    assert (ent.name, ent.entity_type, ent.description) == \
        ("Marie Curie", "person", "physicist")
    assert (rel.src, rel.dst, rel.relation_type, rel.temporal) == \
        ("Marie Curie", "Radium", "discovered", "1898")


def test_parse_tuples_relation_without_temporal():
    out, skipped = parse_delimited_tuples(
        '("relation"<|>A<|>B<|>knows<|>desc)')
    assert skipped == 0
    assert out[0].temporal is None


def test_parse_tuples_empty_string():
    assert parse_delimited_tuples("") == ([], 0)


def test_parse_tuples_short_record_skipped():
    out, skipped = parse_delimited_tuples('("entity"<|>OnlyName)')
    assert out == []
    assert skipped == 1


def test_parse_tuples_garbage_never_fatal():
    out, skipped = parse_delimited_tuples(
        'noise##("entity"<|>Ok Name<|>thing<|>fine)##<|><|>##')
    assert len(out) == 1
    assert skipped == 2


def test_parse_tuples_sanitizes_types():
    out, _ = parse_delimited_tuples('("entity"<|>X1<|>Weird-Type Tag<|>d)')
    assert out[0].entity_type == "weird_type_tag"


# ---------------------------------------------------------------------------
# gleaning
# ---------------------------------------------------------------------------

_EXTRACT_REPLY = '("entity"<|>First Find<|>thing<|>seen at once)'
_CONTINUE_REPLY = '("entity"<|>Late Find<|>thing<|>only on continuation)'


def _glean_mock(missed_reply: str) -> MockLlmClient:
    return MockLlmClient([
        MockRule("MANY entities were missed", _CONTINUE_REPLY),
        MockRule("Were any entities missed", missed_reply),
        MockRule("Extract the entities", _EXTRACT_REPLY),
    ])


def _extraction_calls(mock: MockLlmClient) -> int:
    return sum(1 for prompt, _ in mock.call_log
               if "Records:" in prompt or "Additional records:" in prompt)


def test_glean_stops_when_nothing_missed():
    mock = _glean_mock("no")
    cands = glean(_chunk("some text."), mock, BuilderConfig(llm_enabled=True))
    assert [c.name for c in cands] == ["First Find"]
    assert _extraction_calls(mock) == 1
    assert len(mock.call_log) == 2  # one extraction + one yes/no


def test_glean_bounded_by_max_rounds():
    mock = _glean_mock("yes")
    cands = glean(_chunk("some text."), mock,
                  BuilderConfig(llm_enabled=True, max_glean_rounds=2))
    assert _extraction_calls(mock) == 3  # initial + 2 continuations
    assert len(mock.call_log) == 5
    names = [c.name for c in cands]
    assert names.count("Late Find") == 2  # unioned; dedup happens at merge


def test_glean_continuation_entities_present():
    mock = _glean_mock("yes")
    cands = glean(_chunk("some text."), mock,
                  BuilderConfig(llm_enabled=True, max_glean_rounds=1))
    assert "Late Find" in {c.name for c in cands}


def test_glean_ambiguous_reply_exits_loop():
    mock = _glean_mock("perhaps")
    cands = glean(_chunk("some text."), mock,
                  BuilderConfig(llm_enabled=True, max_glean_rounds=3))
    assert _extraction_calls(mock) == 1
    assert [c.name for c in cands] == ["First Find"]


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------

def test_merge_noisy_or_confidence():
    rule_c = ExtractionCandidate(kind="entity", confidence=0.8, origin="rules",
                                 chunk_id="c1", name="Same Entity", entity_type="t")
    llm_c = ExtractionCandidate(kind="entity", confidence=0.7, origin="llm",
                                chunk_id="c1", name="same entity", entity_type="t",
                                description="from the model")
    merged = merge_candidates([rule_c], [llm_c])
    assert len(merged) == 1
    assert merged[0].confidence == pytest.approx(0.94, abs=1e-12)
    assert merged[0].origin == "merged"


def test_merge_disjoint_sets_concatenate():
    a = ExtractionCandidate(kind="entity", confidence=0.8, origin="rules",
                            chunk_id="c1", name="One", entity_type="t")
    b = ExtractionCandidate(kind="entity", confidence=0.7, origin="llm",
                            chunk_id="c1", name="Two", entity_type="t")
    merged = merge_candidates([a], [b])
    assert {c.name for c in merged} == {"One", "Two"}
    assert {c.origin for c in merged} == {"rules", "llm"}


def test_merge_relations_on_src_dst_type():
    r1 = ExtractionCandidate(kind="relation", confidence=0.6, origin="rules",
                             chunk_id="c1", src="A", dst="B", relation_type="knows")
    r2 = ExtractionCandidate(kind="relation", confidence=0.7, origin="llm",
                             chunk_id="c2", src="a", dst="b", relation_type="knows")
    merged = merge_candidates([r1], [r2])
    assert len(merged) == 1
    assert merged[0].confidence == pytest.approx(1 - 0.4 * 0.3, abs=1e-12)
    assert set(merged[0].chunk_ids) == {"c1", "c2"}


def test_merge_low_confidence_rule_candidate_vetoed():
    text = "nothing about that entity here."
    chunk = _chunk(text)
    weak = ExtractionCandidate(kind="entity", confidence=0.4, origin="rules",
                               chunk_id=chunk.id, name="Bad Ent", entity_type="t")
    mock = MockLlmClient([MockRule('Is "Bad Ent" a real entity', "no")])
    merged = merge_candidates([weak], [], llm_client=mock,
                              chunks={chunk.id: chunk}, llm_enabled=True)
    assert merged == []
    mock_yes = MockLlmClient([MockRule('Is "Bad Ent" a real entity', "yes")])
    kept = merge_candidates([weak], [], llm_client=mock_yes,
                            chunks={chunk.id: chunk}, llm_enabled=True)
    assert [c.name for c in kept] == ["Bad Ent"]


# ---------------------------------------------------------------------------
# full build
# ---------------------------------------------------------------------------

def test_build_grounding_invariant(provider):
    corpus = random_corpus(seed=31, n_docs=4)
    pkg = build(corpus, BuilderConfig(), provider, MetaPathConfig())
    assert pkg.validate() == []
    assert len(pkg.chunks) >= 3
    chunk_ids = set(pkg.chunks)
    for ent in pkg.entities.values():
        assert ent.source_chunk_ids
        assert ent.source_chunk_ids <= chunk_ids


def test_build_deterministic_bytes(tmp_path, provider):
    corpus = random_corpus(seed=32, n_docs=3)
    p1, p2 = tmp_path / "a.pkg", tmp_path / "b.pkg"
    build(corpus, BuilderConfig(), provider, MetaPathConfig()).save(p1)
    build(list(reversed(corpus)), BuilderConfig(), provider,
          MetaPathConfig()).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_build_empty_corpus(provider):
    with pytest.raises(errors.EmptyCorpus):
        build([("d1", "   ")], BuilderConfig(), provider, MetaPathConfig())


def test_build_with_llm_mock_grounds_model_entities(provider):
    corpus = [("doc1", "Plain text mentioning nothing capitalized here.")]
    mock = MockLlmClient([
        MockRule("Were any entities missed", "no"),
        MockRule("Extract the entities",
                 '("entity"<|>Ghost Topic<|>concept<|>from the model)##'
                 '("relation"<|>Ghost Topic<|>Missing Friend<|>linked<|>weak tie)'),
    ])
    pkg = build(corpus, BuilderConfig(llm_enabled=True), provider,
                MetaPathConfig(), llm_client=mock)
    assert pkg.validate() == []
    names = {e.name for e in pkg.entities.values()}
    assert "Ghost Topic" in names
    assert "Missing Friend" in names  # created endpoint, grounded to the chunk
    the_chunk = next(iter(pkg.chunks))
    for ent in pkg.entities.values():
        assert the_chunk in ent.source_chunk_ids


def test_build_llm_unavailable_falls_back_when_configured(provider):
    class DownClient:
        def complete(self, prompt, max_tokens=1024):
            raise errors.LlmUnavailable("down")

        def yes_no(self, prompt):
            raise errors.LlmUnavailable("down")

    corpus = [("doc1", "Nina Vale met Omar Reyes. Nina Vale met Omar Reyes.")]
    with pytest.raises(errors.LlmUnavailable):
        build(corpus, BuilderConfig(llm_enabled=True), provider,
              MetaPathConfig(), llm_client=DownClient())
    pkg = build(corpus, BuilderConfig(llm_enabled=True, llm_fallback_to_rules=True),
                provider, MetaPathConfig(), llm_client=DownClient())
    assert {e.name for e in pkg.entities.values()} == {"Nina Vale", "Omar Reyes"}
