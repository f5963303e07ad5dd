"""Text embedding providers and exact cosine similarity search.

The default provider ("hash-v1") is a signed feature-hashing embedder:
lowercase the text, extract word unigrams, word bigrams and character
trigrams, hash each feature to one of D buckets with a +/-1 sign, accumulate
and L2-normalize. It is deterministic across platforms and needs no model
files. Other providers (an HTTP endpoint, for instance) plug in behind the
same interface; the provider id is recorded in the graph header so a store is
never queried with mismatched vectors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import requests

from . import _kernels, errors

DEFAULT_DIM = 256

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Vector:
    """Fixed-dimension embedding with a cached L2 norm."""

    values: np.ndarray
    norm: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "norm", float(math.sqrt(float(self.values @ self.values))))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def unit(self) -> np.ndarray:
        """Unit-length copy of the raw values; the zero vector stays zero."""
        if self.norm == 0.0:
            return self.values.copy()
        return self.values / self.norm


def cosine(a: Vector, b: Vector) -> float:
    """Cosine similarity in [-1, 1]; either vector being zero yields 0."""
    if a.dim != b.dim:
        raise errors.DimMismatch(f"dim {a.dim} vs {b.dim}")
    denom = a.norm * b.norm
    if denom == 0.0:
        return 0.0
    return float(a.values @ b.values) / denom


def top_k(query: Vector, candidates: Mapping[str, Vector], k: int) -> list[tuple[str, float]]:
    """Exact top-k candidates by cosine similarity, ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(cid, cosine(query, vec)) for cid, vec in candidates.items()]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def canonical_tokens(text: str) -> str:
    """Space-joined lowercase word tokens, the hashing kernel's input form."""
    return " ".join(_TOKEN_RE.findall(text.lower()))


class HashEmbedder:
    """Deterministic signed feature-hashing embedder (provider id "hash-v1")."""

    provider_id = "hash-v1"

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def embed(self, text: str) -> Vector:
        if not text:
            raise errors.EmptyText("cannot embed empty text")
        canon = canonical_tokens(text)
        counts = _kernels.hash_accumulate(canon.encode("utf-8"), self.dim)
        raw = np.asarray(counts, dtype=np.float64)
        norm = math.sqrt(float(raw @ raw))
        if norm > 0.0:
            raw /= norm
        return Vector(raw)


class HttpEmbedder:
    """Provider backed by an HTTP embedding endpoint.

    POSTs ``{endpoint}/embed`` with ``{"model": ..., "input": [text]}`` and
    expects ``{"data": [{"embedding": [...]}]}`` back. One retry on transient
    failure, then ProviderUnavailable.
    """

    provider_id = "http"

    def __init__(self, endpoint: str, dim: int, model: str = "default",
                 timeout_s: float = 30.0, retry: bool = True):
        self.endpoint = endpoint.rstrip("/")
        self.dim = dim
        self.model = model
        self.timeout_s = timeout_s
        self.retry = retry

    def embed(self, text: str) -> Vector:
        if not text:
            raise errors.EmptyText("cannot embed empty text")
        attempts = 2 if self.retry else 1
        last_exc: Exception | None = None
        for _ in range(attempts):
            try:
                resp = requests.post(
                    f"{self.endpoint}/embed",
                    json={"model": self.model, "input": [text]},
                    timeout=self.timeout_s,
                )
                if resp.status_code >= 500:
                    last_exc = errors.ProviderUnavailable(f"status {resp.status_code}")
                    continue
                resp.raise_for_status()
                values = resp.json()["data"][0]["embedding"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_exc = exc
                continue
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise errors.DimMismatch(
                    f"endpoint returned dim {vec.shape}, expected {self.dim}")
            return Vector(vec)
        raise errors.ProviderUnavailable(f"embedding endpoint failed: {last_exc}")


def provider_from_header(provider_id: str, dim: int):
    """Construct the provider named in a graph header, when possible."""
    if provider_id == HashEmbedder.provider_id:
        return HashEmbedder(dim)
    raise errors.ProviderMismatch(
        f"graph was embedded with provider {provider_id!r}; pass a matching provider")
