"""Desk-scale retrieval evaluation: recall@k, MRR, and a planted-fact corpus.

The generator plants single-hop facts (query shares vocabulary with its gold
chunk) and two-hop fact chains whose bridge evidence chunk shares no token
with the query, so lexical or semantic similarity alone cannot find it; only
graph traversal can. That makes the channel ablation measurable on a corpus
that builds in seconds.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from random import Random

from . import errors
from .graph import Pkg, chunk_id_for
from .retriever import FusionConfig, Retriever

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS = (
    ("regex",),
    ("vector",),
    ("regex", "vector"),
    ("vector", "metapath"),
    ("regex", "vector", "metapath"),
)


@dataclass(frozen=True)
class EvalRecord:
    question: str
    gold_chunk_ids: frozenset[str]
    tag: str | None = None


def write_qa_file(path, records: list[EvalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(
                {"gold_chunk_ids": sorted(rec.gold_chunk_ids),
                 "question": rec.question, "tag": rec.tag},
                sort_keys=True, ensure_ascii=False) + "\n")


def read_qa_file(path) -> list[EvalRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append(EvalRecord(rec["question"],
                                          frozenset(rec["gold_chunk_ids"]),
                                          rec.get("tag")))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise errors.FormatError(f"bad QA line {lineno}: {exc}") from exc
    return records


def write_corpus_file(path, docs: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, text in docs:
            fh.write(json.dumps({"doc_id": doc_id, "text": text},
                                sort_keys=True, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus generation
# ---------------------------------------------------------------------------

_SYLLABLES = [
    "bam", "cen", "dor", "fal", "gim", "hol", "jun", "kel", "lor", "mav",
    "nid", "pol", "quor", "rit", "sev", "tam", "ur", "vex", "wim", "yol",
    "zan", "bri", "cro", "del", "fen",
]

# Every non-name word appearing in fact texts, bridge texts, queries, or
# filler text. Generated names must avoid all of them so the two-hop queries
# stay token-disjoint from their bridge chunks by construction.
_SCAFFOLD_VOCAB = frozenset("""
notes confirm partnered logs state guided charts reveal recruited files mark
which group who joined efforts under quiet winds settle across amber dunes
while soft rains trace low valley slow rivers carry pale silt toward open
plains evening light rests over distant narrow paths wander past mossy stones
near calm water
""".split())

_FILLER_SENTENCES = [
    "Quiet winds settle across amber dunes while soft rains trace the low valley.",
    "Slow rivers carry pale silt toward open plains.",
    "Evening light rests over distant narrow paths.",
    "Narrow paths wander past mossy stones near calm water.",
]


def _make_name(rng: Random, used: set[str]) -> str:
    while True:
        words = []
        for _ in range(2):
            word = "".join(rng.choice(_SYLLABLES) for _ in range(rng.choice((2, 3))))
            words.append(word.capitalize())
        lowered = tuple(w.lower() for w in words)
        if any(w in _SCAFFOLD_VOCAB or w in used for w in lowered):
            continue
        used.update(lowered)
        return " ".join(words)


def _single_chunk_id(doc_id: str, text: str) -> str:
    return chunk_id_for(doc_id, (0, len(text)), text)


def generate_eval_corpus(n_facts: int, seed: int) -> tuple[list[tuple[str, str]],
                                                           list[EvalRecord]]:
    """Plant ``n_facts`` single-hop and ``n_facts`` two-hop facts plus filler.

    Every fact document is short enough to become exactly one chunk, so gold
    chunk ids are computed up front. Two-hop questions mention only the first
    entity of the chain; the gold bridge chunk mentions only the second and
    third, with disjoint wording (asserted).
    """
    rng = Random(seed)
    used: set[str] = set()
    docs: list[tuple[str, str]] = []
    records: list[EvalRecord] = []

    for i in range(n_facts):
        a = _make_name(rng, used)
        b = _make_name(rng, used)
        text = (f"Notes confirm {a} partnered {b}. "
                f"Logs state {a} partnered {b}.")
        doc_id = f"fact1h{i:04d}"
        docs.append((doc_id, text))
        records.append(EvalRecord(
            question=f"Which group partnered {a}?",
            gold_chunk_ids=frozenset({_single_chunk_id(doc_id, text)}),
            tag="1hop"))

    for i in range(n_facts):
        a = _make_name(rng, used)
        b = _make_name(rng, used)
        c = _make_name(rng, used)
        head_text = (f"Notes confirm {a} guided {b}. "
                     f"Logs state {a} guided {b}.")
        bridge_text = (f"Charts reveal {b} recruited {c}. "
                       f"Files mark {b} recruited {c}.")
        head_id = f"fact2h{i:04d}head"
        bridge_id = f"fact2h{i:04d}tail"
        docs.append((head_id, head_text))
        docs.append((bridge_id, bridge_text))
        question = f"Who joined efforts under {a}?"
        q_tokens = {t.lower() for t in question.replace("?", "").split()}
        bridge_tokens = {t.lower().strip(".") for t in bridge_text.split()}
        overlap = q_tokens & bridge_tokens
        if overlap:
            raise AssertionError(f"bridge chunk not token-disjoint: {overlap}")
        records.append(EvalRecord(
            question=question,
            gold_chunk_ids=frozenset({_single_chunk_id(bridge_id, bridge_text)}),
            tag="2hop"))

    for i in range(max(4, n_facts // 2)):
        text = " ".join(
            rng.choice(_FILLER_SENTENCES) for _ in range(rng.choice((2, 3))))
        docs.append((f"filler{i:04d}", text))

    docs.sort()
    return docs, records


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def recall_hit(retrieved: list[str], gold: frozenset[str], k: int) -> float:
    return 1.0 if gold & set(retrieved[:k]) else 0.0


def reciprocal_rank(retrieved: list[str], gold: frozenset[str]) -> float:
    for rank, cid in enumerate(retrieved, start=1):
        if cid in gold:
            return 1.0 / rank
    return 0.0


def evaluate(pkg: Pkg, records: list[EvalRecord], k: int = 5,
             channel_settings=DEFAULT_SETTINGS,
             fusion: FusionConfig | None = None,
             llm_client=None) -> dict:
    """Run every channel setting over the QA records.

    Returns the report dict: per setting, recall@k, MRR and mean latency,
    with a per-tag breakdown. Gold ids must resolve against the graph.
    """
    for rec in records:
        for cid in rec.gold_chunk_ids:
            if cid not in pkg.chunks:
                raise errors.IntegrityError(
                    f"gold chunk {cid} not in graph (question {rec.question!r})")
    report = {"k": k, "settings": []}
    for channels in channel_settings:
        base = fusion or FusionConfig()
        retriever = Retriever(pkg, fusion=base, llm_client=llm_client)
        hits, rrs, latencies = [], [], []
        per_tag: dict[str, dict[str, list[float]]] = {}
        for rec in records:
            started = time.perf_counter()
            items, _ = retriever.retrieve(rec.question, tuple(channels), k=k)
            latencies.append((time.perf_counter() - started) * 1000.0)
            retrieved = [item.chunk_id for item in items]
            hit = recall_hit(retrieved, rec.gold_chunk_ids, k)
            rr = reciprocal_rank(retrieved, rec.gold_chunk_ids)
            hits.append(hit)
            rrs.append(rr)
            tag = rec.tag or "untagged"
            bucket = per_tag.setdefault(tag, {"hits": [], "rrs": []})
            bucket["hits"].append(hit)
            bucket["rrs"].append(rr)
        setting = {
            "channels": list(channels),
            "recall_at_k": sum(hits) / len(hits) if hits else 0.0,
            "mrr": sum(rrs) / len(rrs) if rrs else 0.0,
            "mean_latency_ms": sum(latencies) / len(latencies) if latencies else 0.0,
            "per_tag": {
                tag: {"count": len(v["hits"]),
                      "recall_at_k": sum(v["hits"]) / len(v["hits"]),
                      "mrr": sum(v["rrs"]) / len(v["rrs"])}
                for tag, v in sorted(per_tag.items())
            },
        }
        report["settings"].append(setting)
    return report


def format_report_table(report: dict) -> str:
    lines = [f"{'channels':32} {'recall@' + str(report['k']):>10} {'MRR':>8} "
             f"{'latency ms':>11}"]
    for setting in report["settings"]:
        name = "+".join(setting["channels"])
        lines.append(f"{name:32} {setting['recall_at_k']:>10.4f} "
                     f"{setting['mrr']:>8.4f} {setting['mean_latency_ms']:>11.2f}")
        for tag, vals in setting["per_tag"].items():
            lines.append(f"  {tag:30} {vals['recall_at_k']:>10.4f} "
                         f"{vals['mrr']:>8.4f} {'':>11}")
    return "\n".join(lines)
