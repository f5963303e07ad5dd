"""Command-line front door: build, query, serve, eval, validate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import errors
from .builder import BuilderConfig, build
from .embedding import DEFAULT_DIM, HashEmbedder
from .evaluation import (evaluate, format_report_table, generate_eval_corpus,
                         read_qa_file, write_corpus_file, write_qa_file)
from .graph import Pkg
from .llm import HttpLlmClient, MockLlmClient
from .metapath import MetaPathConfig
from .retriever import CHANNELS, Retriever, items_to_json
from .service import serve as _serve

logger = logging.getLogger(__name__)


def load_corpus(path: str) -> list[tuple[str, str]]:
    """A directory of .txt files (doc_id = file name) or a JSON-Lines file of
    {"doc_id", "text"} records."""
    p = Path(path)
    if p.is_dir():
        docs = []
        for txt in sorted(p.glob("*.txt")):
            docs.append((txt.name, txt.read_text(encoding="utf-8")))
        return docs
    if not p.exists():
        raise errors.IoError(f"input path {path!r} does not exist")
    docs = []
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append((rec["doc_id"], rec["text"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise errors.FormatError(f"bad corpus line {lineno}: {exc}") from exc
    return docs


def _make_llm_client(args):
    if getattr(args, "mock_script", None):
        return MockLlmClient.from_script(args.mock_script)
    return HttpLlmClient.from_env()


def cmd_build(args) -> int:
    try:
        corpus = load_corpus(args.input)
        config = BuilderConfig(chunk_target_chars=args.chunk_size,
                               chunk_overlap_chars=args.overlap,
                               llm_enabled=args.llm == "on")
        llm_client = None
        if config.llm_enabled:
            llm_client = _make_llm_client(args)
        pkg = build(corpus, config, HashEmbedder(DEFAULT_DIM),
                    MetaPathConfig(n=args.max_path_len), llm_client=llm_client)
        written = pkg.save(args.out)
    except errors.PkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    stats = pkg.stats()
    print(f"wrote {args.out} ({written} bytes): "
          f"{stats['chunks']} chunks, {stats['entities']} entities, "
          f"{stats['edges']} edges, {stats['templates']} templates")
    return 0


def _parse_channels(raw: str) -> tuple[str, ...]:
    channels = tuple(c.strip() for c in raw.split(",") if c.strip())
    for name in channels:
        if name not in CHANNELS:
            raise errors.PkgError(
                f"unknown channel {name!r}; choose from {', '.join(CHANNELS)}")
    return channels


def cmd_query(args) -> int:
    try:
        pkg = Pkg.load(args.graph)
        channels = _parse_channels(args.channels)
        retriever = Retriever(pkg)
        if args.json:
            items, flags = retriever.retrieve(args.query, channels, k=args.k)
            print(items_to_json(items))
        else:
            package, flags = retriever.retrieve_package(
                args.query, channels, k=args.k, char_budget=args.budget)
            print(package.text)
        for flag in flags:
            print(f"note: channel flag {flag}", file=sys.stderr)
    except errors.PkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_serve(args) -> int:
    try:
        pkg = Pkg.load(args.graph)
    except errors.PkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    pkg.ensure_vectors()
    _serve(args.host, args.port, Retriever(pkg))
    return 0


def cmd_eval(args) -> int:
    try:
        if args.generate:
            docs, records = generate_eval_corpus(args.generate, args.seed)
            out = Path(args.graph)
            corpus_path = out.with_suffix(out.suffix + ".corpus.jsonl")
            qa_path = Path(args.qa) if args.qa else \
                out.with_suffix(out.suffix + ".qa.jsonl")
            write_corpus_file(corpus_path, docs)
            write_qa_file(qa_path, records)
            pkg = build(docs, BuilderConfig(), HashEmbedder(DEFAULT_DIM),
                        MetaPathConfig())
            pkg.save(args.graph)
            print(f"generated {len(docs)} docs -> {corpus_path}, "
                  f"{len(records)} questions -> {qa_path}", file=sys.stderr)
        else:
            if not args.qa:
                print("error: --qa is required without --generate", file=sys.stderr)
                return 1
            pkg = Pkg.load(args.graph)
            qa_path = Path(args.qa)
            records = read_qa_file(qa_path)
        settings = ([_parse_channels(c) for c in args.channels]
                    if args.channels else None)
        report = evaluate(pkg, records, k=args.k,
                          **({"channel_settings": settings} if settings else {}))
    except errors.PkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(format_report_table(report))
    report_path = args.report or str(args.graph) + ".eval.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, ensure_ascii=False, indent=2)
        fh.write("\n")
    print(f"report written to {report_path}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    try:
        pkg = Pkg.load(args.graph)
    except errors.PkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    violations = pkg.validate()
    if violations:
        for v in violations:
            print(f"{v.rule}\t{v.record_id}\t{v.detail}")
        return 1
    stats = pkg.stats()
    print(f"ok: {stats['chunks']} chunks, {stats['entities']} entities, "
          f"{stats['edges']} edges, {stats['templates']} templates")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkg",
        description="Embedded knowledge-graph engine with in-graph text and "
                    "regex/vector/meta-path retrieval")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a graph from a corpus")
    p.add_argument("--input", required=True,
                   help="directory of .txt files or a JSON-Lines corpus")
    p.add_argument("--out", required=True, help="output graph file")
    p.add_argument("--chunk-size", type=int, default=800)
    p.add_argument("--overlap", type=int, default=120)
    p.add_argument("--max-path-len", type=int, default=4,
                   help="meta-path pre-computation bound (edges)")
    p.add_argument("--llm", choices=("on", "off"), default="off")
    p.add_argument("--mock-script", default=None,
                   help="JSON-Lines mock script instead of a live endpoint")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="retrieve context for a query")
    p.add_argument("-g", "--graph", required=True)
    p.add_argument("-q", "--query", required=True)
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--channels", default=",".join(CHANNELS))
    p.add_argument("--json", action="store_true")
    p.add_argument("--budget", type=int, default=6000)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("serve", help="run the retrieval HTTP service")
    p.add_argument("-g", "--graph", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="run the retrieval evaluation harness")
    p.add_argument("-g", "--graph", required=True)
    p.add_argument("--qa", default=None, help="QA records (JSON Lines)")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--channels", action="append", default=None,
                   help="channel setting, e.g. vector,metapath (repeatable)")
    p.add_argument("--generate", type=int, default=0, metavar="N",
                   help="generate a planted corpus of N facts per hop class")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--report", default=None, help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check a graph file's invariants")
    p.add_argument("-g", "--graph", required=True)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
