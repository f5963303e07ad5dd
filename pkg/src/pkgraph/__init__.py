"""Embedded knowledge-graph engine with in-graph text chunks.

Builds a hybrid structured/unstructured store from raw text -- entities,
typed relations, and the original text segments as linked graph nodes -- and
answers queries through three fused retrieval channels (regular expression,
vector similarity, meta-path traversal), returning ranked provenance-carrying
context for downstream language models.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .builder import BuilderConfig, ExtractionRule, build
from .embedding import HashEmbedder, HttpEmbedder, Vector, cosine, top_k
from .evaluation import EvalRecord, evaluate, generate_eval_corpus
from .graph import EntityNode, Pkg, RelationEdge, TextChunkNode
from .llm import HttpLlmClient, MockLlmClient, MockRule
from .metapath import (MetaPathConfig, MetaPathIndex, MetaPathInstance,
                       MetaPathTemplate, enumerate_metapaths, instances,
                       select_templates)
from .retriever import (ContextItem, ContextPackage, FusionConfig, QueryBundle,
                        Retriever, analyze_query, assemble_context, fuse_rerank,
                        metapath_retrieve, regex_retrieve, vector_retrieve)

__version__ = "0.1.0"

__all__ = [
    "BuilderConfig", "ContextItem", "ContextPackage", "EntityNode",
    "EvalRecord", "ExtractionRule", "FusionConfig", "HashEmbedder",
    "HttpEmbedder", "HttpLlmClient", "KERNEL_BACKEND", "MetaPathConfig",
    "MetaPathIndex", "MetaPathInstance", "MetaPathTemplate", "MockLlmClient",
    "MockRule", "Pkg", "QueryBundle", "RelationEdge", "Retriever",
    "TextChunkNode", "Vector", "analyze_query", "assemble_context", "build",
    "cosine", "enumerate_metapaths", "evaluate", "fuse_rerank",
    "generate_eval_corpus", "instances", "metapath_retrieve", "regex_retrieve",
    "select_templates", "top_k", "vector_retrieve",
]
