"""Narrow client contract for language-model calls.

Every model interaction in the engine goes through this module: an HTTP
implementation for real endpoints and a deterministic scripted mock for tests
and offline builds. Binary decisions use ``yes_no``, which enforces a strict
yes/no reply instead of relying on provider-specific logit controls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import requests

from . import errors

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "PKG_LLM_ENDPOINT"
ENV_API_KEY = "PKG_LLM_API_KEY"
ENV_MODEL = "PKG_LLM_MODEL"
ENV_TIMEOUT_MS = "PKG_LLM_TIMEOUT_MS"
DEFAULT_TIMEOUT_MS = 30000


def parse_yes_no(reply: str) -> bool:
    """Normalize a reply to a boolean: strip, lowercase, first token must be
    yes or no (trailing punctuation tolerated)."""
    tokens = reply.strip().lower().split()
    first = tokens[0].strip(".,!?:;\"'") if tokens else ""
    if first == "yes":
        return True
    if first == "no":
        return False
    raise errors.AmbiguousReply(f"not a yes/no reply: {reply!r}")


class LlmClient:
    """Base contract: complete(prompt) -> text, yes_no(prompt) -> bool."""

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        raise NotImplementedError

    def yes_no(self, prompt: str) -> bool:
        return parse_yes_no(self.complete(prompt, max_tokens=8))


class HttpLlmClient(LlmClient):
    """POSTs ``{endpoint}/completions`` with one retry on transient failure."""

    def __init__(self, endpoint: str, model: str = "default",
                 api_key: str | None = None, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_ms = timeout_ms

    @classmethod
    def from_env(cls) -> "HttpLlmClient":
        endpoint = os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise errors.LlmUnavailable(f"{ENV_ENDPOINT} is not set")
        return cls(
            endpoint,
            model=os.environ.get(ENV_MODEL, "default"),
            api_key=os.environ.get(ENV_API_KEY),
            timeout_ms=int(os.environ.get(ENV_TIMEOUT_MS, DEFAULT_TIMEOUT_MS)),
        )

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "prompt": prompt,
                "max_tokens": max_tokens, "temperature": 0}
        last_exc: Exception | None = None
        timed_out = False
        for attempt in range(2):
            try:
                resp = requests.post(f"{self.endpoint}/completions", json=body,
                                     headers=headers,
                                     timeout=self.timeout_ms / 1000.0)
                if resp.status_code >= 500:
                    last_exc = errors.LlmUnavailable(f"status {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()["choices"][0]["text"]
            except requests.Timeout as exc:
                last_exc = exc
                timed_out = True
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_exc = exc
                timed_out = False
        if timed_out:
            raise errors.Timeout(f"model endpoint timed out: {last_exc}")
        raise errors.LlmUnavailable(f"model endpoint failed after retry: {last_exc}")


@dataclass
class MockRule:
    match: str
    reply: str
    kind: str = "substring"  # or "sha256" matching the hex digest of the prompt

    def matches(self, prompt: str) -> bool:
        if self.kind == "sha256":
            return hashlib.sha256(prompt.encode("utf-8")).hexdigest() == self.match
        return self.match in prompt


class MockLlmClient(LlmClient):
    """Deterministic scripted client: first matching rule wins, every call is
    logged in order. A rule with an empty substring matches everything."""

    def __init__(self, rules: list[MockRule] | None = None, default_reply: str = ""):
        self.rules = list(rules or [])
        self.default_reply = default_reply
        self.call_log: list[tuple[str, str]] = []

    @classmethod
    def from_script(cls, path, default_reply: str = "") -> "MockLlmClient":
        rules = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    rules.append(MockRule(rec["match"], rec["reply"],
                                          rec.get("kind", "substring")))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise errors.FormatError(
                        f"bad mock script line {lineno}: {exc}") from exc
        return cls(rules, default_reply=default_reply)

    def complete(self, prompt: str, max_tokens: int = 1024) -> str:
        reply = self.default_reply
        for rule in self.rules:
            if rule.matches(prompt):
                reply = rule.reply
                break
        self.call_log.append((prompt, reply))
        return reply
