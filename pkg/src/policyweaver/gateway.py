"""Uniform completion interface over model backends, with cost accounting.

Two backends ship: a deterministic scripted mock (substring rules, used for
all offline runs and tests) and an HTTP adapter for OpenAI-style chat
endpoints. Every billed round-trip lands in a CostLedger priced per million
tokens, which is what the cost-accuracy reports consume.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .model import EngineConfig, ModelError

DEFAULT_MODEL = "scripted-small"
ENV_URL = "POLICYWEAVER_LLM_URL"
ENV_API_KEY = "POLICYWEAVER_LLM_API_KEY"
ENV_MODEL = "POLICYWEAVER_LLM_MODEL"


class GatewayError(RuntimeError):
    """Unrecoverable gateway failure (no reply, malformed reply, bad config)."""


class TransportError(GatewayError):
    """Retryable failure: network trouble or rate limiting.

    May carry the usage billed for the failed attempt, which the gateway
    records; a retried call then costs what it actually cost.
    """

    def __init__(self, message: str, usage: "Usage | None" = None):
        super().__init__(message)
        self.usage = usage


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ModelError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    model: str = DEFAULT_MODEL
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ModelError("a completion request needs at least one message")
        if self.max_output_tokens <= 0:
            raise ModelError("max_output_tokens must be positive")

    def text(self) -> str:
        return "\n".join(f"{m.role}: {m.content}" for m in self.messages)


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ModelError("token counts must be non-negative")

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
        )


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: Usage


@dataclass(frozen=True)
class LedgerEntry:
    agent: str
    domain_id: str
    usage: Usage


class CostLedger:
    """Append-only record of billed usage, priced per million tokens."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self._entries: list[LedgerEntry] = []

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def record(self, agent: str, domain_id: str, usage: Usage) -> None:
        self._entries.append(LedgerEntry(agent=agent, domain_id=domain_id, usage=usage))

    def total_usage(self) -> Usage:
        total = Usage(0, 0)
        for entry in self._entries:
            total = total + entry.usage
        return total

    def price(self, usage: Usage) -> float:
        return (
            usage.input_tokens * self.config.price_per_m_input
            + usage.output_tokens * self.config.price_per_m_output
        ) / 1_000_000

    def cost(self) -> float:
        return self.price(self.total_usage())


def cost(ledger: CostLedger) -> float:
    return ledger.cost()


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def _estimate_tokens(text: str) -> int:
    return len(text) // 4 + 1


@dataclass(frozen=True)
class ScriptedRule:
    """Reply for any prompt containing `match`; earlier rules win.

    `extract` is an optional regex searched against the prompt; its capture
    groups fill `<<g1>>`, `<<g2>>`, ... placeholders in the reply. Token
    counts default to a length-derived estimate when not configured.
    """

    match: str
    reply: str
    input_tokens: int | None = None
    output_tokens: int | None = None
    extract: str | None = None

    def render(self, prompt: str) -> str:
        if self.extract is None:
            return self.reply
        found = re.search(self.extract, prompt)
        if found is None:
            raise GatewayError(
                f"scripted rule {self.match!r}: extract pattern {self.extract!r} "
                "did not match the prompt"
            )
        reply = self.reply
        for i, group in enumerate(found.groups(), start=1):
            reply = reply.replace(f"<<g{i}>>", group or "")
        return reply

    def to_dict(self) -> dict[str, Any]:
        return {
            "match": self.match,
            "reply": self.reply,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "extract": self.extract,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedRule":
        return cls(
            match=data["match"],
            reply=data["reply"],
            input_tokens=data.get("input_tokens"),
            output_tokens=data.get("output_tokens"),
            extract=data.get("extract"),
        )


class ScriptedBackend:
    """Deterministic mock: first rule whose match substring hits the prompt."""

    def __init__(self, rules: Sequence[ScriptedRule]):
        self.rules = tuple(rules)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(ScriptedRule.from_dict(r) for r in data["rules"]))

    def save(self, path: str | Path) -> None:
        payload = {"rules": [r.to_dict() for r in self.rules]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        prompt = request.text()
        for rule in self.rules:
            if rule.match in prompt:
                reply = rule.render(prompt)
                usage = Usage(
                    input_tokens=(
                        rule.input_tokens
                        if rule.input_tokens is not None
                        else _estimate_tokens(prompt)
                    ),
                    output_tokens=(
                        rule.output_tokens
                        if rule.output_tokens is not None
                        else _estimate_tokens(reply)
                    ),
                )
                return CompletionResponse(text=reply, usage=usage)
        head = prompt.splitlines()[0] if prompt else ""
        raise GatewayError(f"no scripted reply for prompt starting {head[:160]!r}")


class HttpBackend:
    """OpenAI-style chat-completion endpoint over HTTP.

    Configured by arguments or the POLICYWEAVER_LLM_URL / _API_KEY / _MODEL
    environment variables. Requests are sent with temperature 0.
    """

    def __init__(
        self,
        url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        timeout: float = 30.0,
    ):
        self.url = url or os.environ.get(ENV_URL)
        self.api_key = api_key or os.environ.get(ENV_API_KEY)
        self.model = model or os.environ.get(ENV_MODEL)
        self.timeout = timeout
        if not self.url:
            raise GatewayError(f"http backend not configured: set {ENV_URL}")

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        import httpx

        payload = {
            "model": self.model or request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "max_tokens": request.max_output_tokens,
            "temperature": 0,
        }
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"
        try:
            response = httpx.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"retryable status {response.status_code}")
        if response.status_code != 200:
            raise GatewayError(f"backend returned status {response.status_code}")
        return self._parse(response.json())

    @staticmethod
    def _parse(data: Any) -> CompletionResponse:
        try:
            text = data["choices"][0]["message"]["content"]
            usage = data.get("usage", {})
            return CompletionResponse(
                text=text,
                usage=Usage(
                    input_tokens=int(usage.get("prompt_tokens", 0)),
                    output_tokens=int(usage.get("completion_tokens", 0)),
                ),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed backend reply: {exc}") from exc


class Gateway:
    """Backend plus ledger: every billed round-trip is recorded, retries too."""

    def __init__(
        self,
        backend: Backend,
        ledger: CostLedger,
        max_attempts: int = 3,
        backoff_s: float = 0.2,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ModelError("max_attempts must be at least 1")
        self.backend = backend
        self.ledger = ledger
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._sleep = sleep

    def complete(
        self, agent: str, domain_id: str, request: CompletionRequest
    ) -> CompletionResponse:
        last: TransportError | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self.backend.complete(request)
            except TransportError as exc:
                if exc.usage is not None:
                    self.ledger.record(agent, domain_id, exc.usage)
                last = exc
                if attempt + 1 < self.max_attempts:
                    self._sleep(self.backoff_s * (2**attempt))
                continue
            self.ledger.record(agent, domain_id, response.usage)
            return response
        raise GatewayError(
            f"backend failed after {self.max_attempts} attempts: {last}"
        ) from last
