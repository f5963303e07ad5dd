"""Corpus-to-graph pipeline: segmentation, rule and model extraction, merge.

The pipeline is deterministic end to end when the model client is disabled or
scripted: identical corpus and config produce byte-identical saved graphs.
Rule extraction and sentence-window co-occurrence form the base tier; a
language model adds entities/relations via delimited-tuple prompts with a
bounded gleaning loop, and can veto low-confidence rule candidates.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from . import errors
from .graph import Pkg, TextChunkNode, normalize_name
from .llm import LlmClient
from .metapath import MetaPathConfig, enumerate_metapaths

logger = logging.getLogger(__name__)

DEFAULT_STOPWORDS = frozenset("""
a an and are as at be but by for from has have in is it its of on or that the
this to was were will with
""".split())

RULES_CONFIDENCE = 0.8
LLM_CONFIDENCE = 0.7
COOC_CONFIDENCE = 0.6

_ABBREVIATIONS = frozenset([
    "dr", "mr", "mrs", "ms", "prof", "fig", "figs", "e.g", "i.e", "etc",
    "vs", "no", "vol", "al", "st", "jr", "sr", "inc", "ltd", "co",
])

_TERMINATORS = ".!?"

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


# ---------------------------------------------------------------------------
# configuration and candidate types
# ---------------------------------------------------------------------------

@dataclass
class ExtractionRule:
    rule_id: str
    kind: str               # "entity" | "relation"
    pattern: str            # entity rules bind group "name"; relation rules "src","dst"
    entity_type: str = ""
    relation_type: str = ""
    priority: int = 0
    skip_sentence_initial_single: bool = False

    def __post_init__(self):
        self.compiled = re.compile(self.pattern)
        groups = self.compiled.groupindex
        if self.kind == "entity" and "name" not in groups:
            raise ValueError(f"entity rule {self.rule_id} must bind group 'name'")
        if self.kind == "relation" and not {"src", "dst"} <= set(groups):
            raise ValueError(f"relation rule {self.rule_id} must bind 'src' and 'dst'")


def default_rules() -> list[ExtractionRule]:
    return [
        ExtractionRule("iso_date", "entity", r"(?P<name>\b\d{4}-\d{2}-\d{2}\b)",
                       entity_type="date", priority=0),
        ExtractionRule("dmy_date", "entity", r"(?P<name>\b\d{2}/\d{2}/\d{4}\b)",
                       entity_type="date", priority=1),
        ExtractionRule("cap_seq", "entity",
                       r"(?P<name>\b[A-Z][A-Za-z0-9]*(?:[ ]+[A-Z][A-Za-z0-9]*)*\b)",
                       entity_type="named_entity", priority=2,
                       skip_sentence_initial_single=True),
        ExtractionRule("quoted_work", "entity", r"\"(?P<name>[^\"\n]{2,80})\"",
                       entity_type="work", priority=3),
    ]


@dataclass
class BuilderConfig:
    chunk_target_chars: int = 800
    chunk_overlap_chars: int = 120
    stopword_list: frozenset[str] = DEFAULT_STOPWORDS
    rule_set: list[ExtractionRule] = field(default_factory=default_rules)
    cooc_window: int = 1
    cooc_min_count: int = 2
    cooc_min_pmi: float = 0.0
    llm_enabled: bool = False
    max_glean_rounds: int = 2
    few_shot_examples: list[str] | None = None
    llm_fallback_to_rules: bool = False

    def __post_init__(self):
        if self.chunk_overlap_chars >= self.chunk_target_chars:
            raise ValueError("overlap must be smaller than the chunk target")
        if self.max_glean_rounds < 0:
            raise ValueError("max_glean_rounds must be >= 0")


@dataclass
class ExtractionCandidate:
    """One extracted entity or relation, prior to graph insertion."""

    kind: str               # "entity" | "relation"
    confidence: float
    origin: str             # "rules" | "llm" | "merged"
    chunk_id: str
    name: str = ""
    entity_type: str = ""
    description: str = ""
    src: str = ""
    dst: str = ""
    src_type: str = ""
    dst_type: str = ""
    relation_type: str = ""
    temporal: str | None = None
    weight: float | None = None
    chunk_ids: tuple[str, ...] = ()

    def provenance(self) -> tuple[str, ...]:
        return self.chunk_ids if self.chunk_ids else (self.chunk_id,)


# ---------------------------------------------------------------------------
# segmentation and token normalization
# ---------------------------------------------------------------------------

def split_sentences(text: str) -> list[tuple[int, int]]:
    """Half-open sentence spans tiling the whole string.

    A boundary is a terminator (. ! ?) followed by whitespace and an uppercase
    letter, or end of text; the trailing whitespace run attaches to the
    preceding sentence. Common abbreviations do not end a sentence.
    """
    spans = []
    n = len(text)
    start = 0
    i = 0
    while i < n:
        ch = text[i]
        if ch in _TERMINATORS:
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            at_eof = j >= n
            next_upper = not at_eof and text[j].isupper()
            if (at_eof or next_upper) and j > i + 1 or at_eof:
                if ch == "." and not at_eof and _ends_with_abbreviation(text, i):
                    i += 1
                    continue
                spans.append((start, j))
                start = j
                i = j
                continue
        i += 1
    if start < n:
        spans.append((start, n))
    return spans


def _ends_with_abbreviation(text: str, period_idx: int) -> bool:
    k = period_idx - 1
    while k >= 0 and (text[k].isalnum() or text[k] == "."):
        k -= 1
    token = text[k + 1:period_idx].lower()
    return token in _ABBREVIATIONS


def segment(document: str, config: BuilderConfig) -> list[tuple[tuple[int, int], str]]:
    """Split a document into overlapping chunks of whole sentences.

    Sentences are greedily packed up to ``chunk_target_chars`` (a single
    oversized sentence still becomes one chunk); each chunk after the first
    starts ``chunk_overlap_chars`` before its first sentence, clamped to the
    previous chunk's start. Dropping the overlapped prefixes reconstructs the
    document exactly.
    """
    if not document.strip():
        raise errors.EmptyDocument("document is empty")
    sentences = split_sentences(document)
    cores: list[tuple[int, int]] = []
    cur_start: int | None = None
    cur_end = 0
    for s_start, s_end in sentences:
        if cur_start is None:
            cur_start, cur_end = s_start, s_end
        elif s_end - cur_start <= config.chunk_target_chars:
            cur_end = s_end
        else:
            cores.append((cur_start, cur_end))
            cur_start, cur_end = s_start, s_end
    if cur_start is not None:
        cores.append((cur_start, cur_end))

    chunks = []
    prev_core_start = None
    for core_start, core_end in cores:
        if prev_core_start is None:
            start = core_start
        else:
            start = max(core_start - config.chunk_overlap_chars, prev_core_start)
        chunks.append(((start, core_end), document[start:core_end]))
        prev_core_start = core_start
    return chunks


def normalize_tokens(text: str, stopwords: Iterable[str] = DEFAULT_STOPWORDS) -> list[str]:
    """Lowercase word tokens with stopwords and single characters removed."""
    stop = set(stopwords)
    return [tok for tok in _WORD_RE.findall(text.lower())
            if len(tok) >= 2 and tok not in stop]


# ---------------------------------------------------------------------------
# rule extraction
# ---------------------------------------------------------------------------

def _sentence_initial_offsets(text: str) -> set[int]:
    offsets = set()
    for start, end in split_sentences(text):
        k = start
        while k < end and text[k].isspace():
            k += 1
        offsets.add(k)
    return offsets


def extract_rule_entities(chunk: TextChunkNode,
                          rule_set: Sequence[ExtractionRule]) -> list[ExtractionCandidate]:
    """Entity candidates from every matching rule; overlapping matches are all
    emitted, deduplication happens at merge time."""
    rules = sorted((r for r in rule_set if r.kind == "entity"),
                   key=lambda r: (r.priority, r.rule_id))
    initial = None
    out = []
    for rule in rules:
        for match in rule.compiled.finditer(chunk.text):
            name = match.group("name")
            if not name or not name.strip():
                continue
            if rule.skip_sentence_initial_single and " " not in name.strip():
                if initial is None:
                    initial = _sentence_initial_offsets(chunk.text)
                if match.start("name") in initial:
                    continue
            out.append(ExtractionCandidate(
                kind="entity", confidence=RULES_CONFIDENCE, origin="rules",
                chunk_id=chunk.id, name=name.strip(), entity_type=rule.entity_type))
    return out


def extract_rule_relations(chunk: TextChunkNode,
                           rule_set: Sequence[ExtractionRule]) -> list[ExtractionCandidate]:
    rules = sorted((r for r in rule_set if r.kind == "relation"),
                   key=lambda r: (r.priority, r.rule_id))
    out = []
    for rule in rules:
        for match in rule.compiled.finditer(chunk.text):
            src, dst = match.group("src"), match.group("dst")
            if not src or not dst:
                continue
            out.append(ExtractionCandidate(
                kind="relation", confidence=RULES_CONFIDENCE, origin="rules",
                chunk_id=chunk.id, src=src.strip(), dst=dst.strip(),
                relation_type=rule.relation_type,
                description=match.group(0).strip()))
    return out


# ---------------------------------------------------------------------------
# co-occurrence relations
# ---------------------------------------------------------------------------

def extract_cooc_relations(
        chunk_candidates: Sequence[tuple[TextChunkNode, Sequence[ExtractionCandidate]]],
        config: BuilderConfig) -> list[ExtractionCandidate]:
    """Window co-occurrence relations over already-extracted entity candidates.

    Windows are ``cooc_window`` consecutive sentences within each chunk. A
    pair of entities co-occurring in at least ``cooc_min_count`` windows with
    PMI = log(N * c_ab / (c_a * c_b)) >= ``cooc_min_pmi`` yields one
    "co_occurs_with" relation weighted 1 - exp(-count).
    """
    window_count = 0
    entity_windows: dict[tuple[str, str], int] = {}
    pair_windows: dict[tuple[tuple[str, str], tuple[str, str]], int] = {}
    pair_chunks: dict[tuple, set[str]] = {}
    key_info: dict[tuple[str, str], tuple[str, str]] = {}

    w = max(1, config.cooc_window)
    for chunk, candidates in chunk_candidates:
        ent_cands = [c for c in candidates if c.kind == "entity"]
        if not ent_cands:
            continue
        sentences = [chunk.text[a:b] for a, b in split_sentences(chunk.text)]
        lowered = [s.lower() for s in sentences]
        per_sentence: list[set[tuple[str, str]]] = []
        for low in lowered:
            present = set()
            for cand in ent_cands:
                key = (normalize_name(cand.name), cand.entity_type)
                if normalize_name(cand.name) and cand.name.lower() in low:
                    present.add(key)
                    key_info.setdefault(key, (cand.name, cand.entity_type))
            per_sentence.append(present)
        n_windows = max(1, len(per_sentence) - w + 1)
        for i in range(n_windows):
            window = set().union(*per_sentence[i:i + w]) if per_sentence[i:i + w] else set()
            window_count += 1
            for key in window:
                entity_windows[key] = entity_windows.get(key, 0) + 1
            ordered = sorted(window)
            for ai in range(len(ordered)):
                for bi in range(ai + 1, len(ordered)):
                    pair = (ordered[ai], ordered[bi])
                    pair_windows[pair] = pair_windows.get(pair, 0) + 1
                    pair_chunks.setdefault(pair, set()).add(chunk.id)

    out = []
    for pair in sorted(pair_windows):
        count = pair_windows[pair]
        if count < config.cooc_min_count:
            continue
        a, b = pair
        pmi = math.log(window_count * count / (entity_windows[a] * entity_windows[b]))
        if pmi < config.cooc_min_pmi:
            continue
        weight = min(1.0, max(0.0, 1.0 - math.exp(-count)))
        name_a, type_a = key_info[a]
        name_b, type_b = key_info[b]
        chunk_ids = tuple(sorted(pair_chunks[pair]))
        out.append(ExtractionCandidate(
            kind="relation", confidence=COOC_CONFIDENCE, origin="rules",
            chunk_id=chunk_ids[0], chunk_ids=chunk_ids,
            src=name_a, dst=name_b, src_type=type_a, dst_type=type_b,
            relation_type="co_occurs_with",
            description=f"co-occurs in {count} windows", weight=weight))
    return out


# ---------------------------------------------------------------------------
# model extraction: delimited tuples, gleaning, merge
# ---------------------------------------------------------------------------

_TYPE_SANITIZE_RE = re.compile(r"[^a-z0-9_]+")


def _sanitize_type(raw: str) -> str:
    cleaned = _TYPE_SANITIZE_RE.sub("_", raw.strip().lower()).strip("_")
    return cleaned or "unknown"


def parse_delimited_tuples(llm_output: str,
                           chunk_id: str = "") -> tuple[list[ExtractionCandidate], int]:
    """Parse ##-separated, <|>-delimited records; malformed records are
    counted and skipped, never fatal."""
    candidates = []
    skipped = 0
    for raw in llm_output.split("##"):
        record = raw.strip()
        if not record:
            continue
        if record.startswith("(") and record.endswith(")"):
            record = record[1:-1]
        fields = [f.strip() for f in record.split("<|>")]
        kind = fields[0].strip("\"'").lower()
        if kind == "entity" and len(fields) == 4 and fields[1]:
            candidates.append(ExtractionCandidate(
                kind="entity", confidence=LLM_CONFIDENCE, origin="llm",
                chunk_id=chunk_id, name=fields[1],
                entity_type=_sanitize_type(fields[2]), description=fields[3]))
        elif kind == "relation" and len(fields) in (5, 6) and fields[1] and fields[2]:
            candidates.append(ExtractionCandidate(
                kind="relation", confidence=LLM_CONFIDENCE, origin="llm",
                chunk_id=chunk_id, src=fields[1], dst=fields[2],
                relation_type=_sanitize_type(fields[3]), description=fields[4],
                temporal=fields[5] if len(fields) == 6 and fields[5] else None))
        else:
            skipped += 1
    return candidates, skipped


def load_prompt(name: str) -> str:
    return (resources.files("pkgraph") / "prompts" / name).read_text(encoding="utf-8")


DEFAULT_FEW_SHOT = [
    'Text: Marie Curie discovered radium in 1898.\n'
    'Records: ("entity"<|>Marie Curie<|>person<|>physicist and chemist)##'
    '("entity"<|>Radium<|>element<|>radioactive element)##'
    '("relation"<|>Marie Curie<|>Radium<|>discovered<|>isolated the element<|>1898)',
]


def _fill(template: str, **values: str) -> str:
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


def glean(chunk: TextChunkNode, llm_client: LlmClient, config: BuilderConfig,
          max_rounds: int | None = None) -> list[ExtractionCandidate]:
    """Initial extraction plus up to ``max_rounds`` continuation rounds.

    After each round the client is asked a strict yes/no "were entities
    missed" question; an ambiguous reply counts as no. All rounds' candidates
    are unioned (deduplication happens at merge).
    """
    rounds = config.max_glean_rounds if max_rounds is None else max_rounds
    examples = "\n".join(config.few_shot_examples or DEFAULT_FEW_SHOT)
    prompt = _fill(load_prompt("extract.txt"), examples=examples, chunk=chunk.text)
    candidates, skipped = parse_delimited_tuples(llm_client.complete(prompt), chunk.id)
    check_prompt = ("Were any entities missed in the last extraction? "
                    "Answer yes or no.\n\nText:\n" + chunk.text)
    continue_prompt = _fill(load_prompt("glean_continue.txt"), chunk=chunk.text)
    for _ in range(rounds):
        try:
            missed = llm_client.yes_no(check_prompt)
        except errors.AmbiguousReply:
            break
        if not missed:
            break
        more, more_skipped = parse_delimited_tuples(
            llm_client.complete(continue_prompt), chunk.id)
        candidates.extend(more)
        skipped += more_skipped
    if skipped:
        logger.debug("chunk %s: skipped %d malformed records", chunk.id, skipped)
    return candidates


def merge_candidates(rule_cands: Sequence[ExtractionCandidate],
                     llm_cands: Sequence[ExtractionCandidate],
                     llm_client: LlmClient | None = None,
                     chunks: Mapping[str, TextChunkNode] | None = None,
                     llm_enabled: bool = False) -> list[ExtractionCandidate]:
    """Merge the two extraction tiers.

    Entities merge on (normalized name, type), relations on (src, dst, type);
    confidences combine noisy-or, descriptions concatenate once per distinct
    component. When the model tier is enabled, rule-only entities below 0.5
    confidence are sent to a yes/no verification and dropped on "no".
    """
    merged: dict[tuple, ExtractionCandidate] = {}
    origins: dict[tuple, set[str]] = {}
    for cand in list(rule_cands) + list(llm_cands):
        if cand.kind == "entity":
            key = ("entity", normalize_name(cand.name), cand.entity_type)
        else:
            key = ("relation", normalize_name(cand.src), normalize_name(cand.dst),
                   cand.relation_type)
        current = merged.get(key)
        if current is None:
            merged[key] = ExtractionCandidate(
                kind=cand.kind, confidence=cand.confidence, origin=cand.origin,
                chunk_id=cand.chunk_id, name=cand.name, entity_type=cand.entity_type,
                description=cand.description, src=cand.src, dst=cand.dst,
                src_type=cand.src_type, dst_type=cand.dst_type,
                relation_type=cand.relation_type, temporal=cand.temporal,
                weight=cand.weight, chunk_ids=cand.provenance())
            origins[key] = {cand.origin}
        else:
            current.confidence = 1.0 - (1.0 - current.confidence) * (1.0 - cand.confidence)
            if cand.description and cand.description not in \
                    current.description.split(" | "):
                current.description = (current.description + " | " + cand.description
                                       if current.description else cand.description)
            current.chunk_ids = tuple(sorted(set(current.chunk_ids) | set(cand.provenance())))
            if current.temporal is None:
                current.temporal = cand.temporal
            if cand.weight is not None:
                current.weight = max(current.weight or 0.0, cand.weight)
            if not current.src_type and cand.src_type:
                current.src_type = cand.src_type
            if not current.dst_type and cand.dst_type:
                current.dst_type = cand.dst_type
            origins[key].add(cand.origin)

    out = []
    for key, cand in merged.items():
        cand.origin = "merged" if len(origins[key]) > 1 else next(iter(origins[key]))
        if (llm_enabled and llm_client is not None and cand.kind == "entity"
                and origins[key] == {"rules"} and cand.confidence < 0.5):
            chunk = (chunks or {}).get(cand.chunk_id)
            prompt = _fill(load_prompt("verify_entity.txt"), name=cand.name,
                           chunk=chunk.text if chunk else "")
            try:
                if not llm_client.yes_no(prompt):
                    continue
            except errors.AmbiguousReply:
                pass
        out.append(cand)
    return out


# ---------------------------------------------------------------------------
# the full build
# ---------------------------------------------------------------------------

def _resolve_endpoint(pkg: Pkg, name: str, entity_type: str, chunk_id: str,
                      create_missing: bool) -> str | None:
    norm = normalize_name(name)
    if not norm:
        return None
    if entity_type:
        direct = pkg._by_key.get((norm, entity_type))
        if direct:
            return direct
    matches = pkg.entities_by_name(norm)
    local = [eid for eid in matches
             if chunk_id in pkg.entities[eid].source_chunk_ids]
    if local:
        return local[0]
    if matches:
        return matches[0]
    if create_missing:
        return pkg.add_entity(name, entity_type or "unknown", "", {chunk_id})
    return None


def build(corpus, builder_config: BuilderConfig, embedding_provider,
          metapath_config: MetaPathConfig,
          llm_client: LlmClient | None = None) -> Pkg:
    """Run the whole pipeline and return a frozen, validated graph.

    Documents are processed in sorted doc-id order so the result is a pure
    function of (corpus, config) when the model tier is off or scripted.
    Per-document segmentation failures are collected; the build fails only if
    no chunks were produced at all.
    """
    if isinstance(corpus, Mapping):
        docs = sorted(corpus.items())
    else:
        docs = sorted(corpus)
    pkg = Pkg(embed_dim=embedding_provider.dim,
              embed_provider=embedding_provider.provider_id,
              metapath_max_len=metapath_config.n)
    use_llm = builder_config.llm_enabled and llm_client is not None

    failures = []
    chunk_nodes: list[TextChunkNode] = []
    seen_chunk_ids = set()
    for doc_id, text in docs:
        try:
            pieces = segment(text, builder_config)
        except errors.EmptyDocument as exc:
            failures.append((doc_id, str(exc)))
            continue
        for span, chunk_text in pieces:
            cid = pkg.add_chunk(doc_id, span, chunk_text)
            if cid not in seen_chunk_ids:
                seen_chunk_ids.add(cid)
                chunk_nodes.append(pkg.chunks[cid])
    if not chunk_nodes:
        raise errors.EmptyCorpus(f"no chunks produced; failures: {failures}")
    if failures:
        logger.warning("skipped %d empty documents", len(failures))

    per_chunk: list[tuple[TextChunkNode, list[ExtractionCandidate]]] = []
    relation_cands: list[ExtractionCandidate] = []
    for chunk in chunk_nodes:
        rule_ents = extract_rule_entities(chunk, builder_config.rule_set)
        rule_rels = extract_rule_relations(chunk, builder_config.rule_set)
        llm_cands: list[ExtractionCandidate] = []
        if use_llm:
            try:
                llm_cands = glean(chunk, llm_client, builder_config)
            except (errors.LlmUnavailable, errors.Timeout):
                if not builder_config.llm_fallback_to_rules:
                    raise
                logger.warning("model unavailable for chunk %s; rules only", chunk.id)
        merged = merge_candidates(
            rule_ents + rule_rels, llm_cands, llm_client=llm_client,
            chunks=pkg.chunks, llm_enabled=use_llm)
        entities = [c for c in merged if c.kind == "entity"]
        relation_cands.extend(c for c in merged if c.kind == "relation")
        per_chunk.append((chunk, entities))

    relation_cands.extend(extract_cooc_relations(per_chunk, builder_config))

    for chunk, entity_cands in per_chunk:
        for cand in entity_cands:
            pkg.add_entity(cand.name, cand.entity_type or "unknown",
                           cand.description, cand.provenance())

    for cand in relation_cands:
        src = _resolve_endpoint(pkg, cand.src, cand.src_type, cand.chunk_id,
                                create_missing=True)
        dst = _resolve_endpoint(pkg, cand.dst, cand.dst_type, cand.chunk_id,
                                create_missing=True)
        if src is None or dst is None:
            continue
        weight = cand.weight if cand.weight is not None else cand.confidence
        pkg.add_relation(src, dst, cand.relation_type or "related_to",
                         cand.description, min(1.0, max(0.0, weight)),
                         cand.provenance(), cand.temporal)

    pkg.ensure_vectors(embedding_provider)
    pkg.metapath_index = enumerate_metapaths(pkg, metapath_config)
    pkg.freeze()
    violations = pkg.validate()
    if violations:
        raise errors.IntegrityError(
            f"builder produced an invalid graph: {violations[:3]}")
    return pkg
