"""Structured reply envelope: fenced, tagged blocks extracted from agent text.

Every agent reply carries its payload in markdown-style fences whose info
string is the tag (```policy, ```bindings, ```policy:mail_cleanup, ...).
Free text outside fences is ignored; missing or duplicated required tags are
reported by name.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping

from ..model import ModelError, Param, ParameterBinding, PolicySignature

TAG_STEPS = "steps"
TAG_SIGNATURE = "signature"
TAG_BINDINGS = "bindings"
TAG_POLICY = "policy"
TAG_COMPONENTS = "components"
TAG_USAGE_NOTES = "usage-notes"
TAG_REPLACES = "replaces"
POLICY_PREFIX = "policy:"


class AgentReplyError(ValueError):
    """An agent reply that cannot be parsed into the expected blocks."""


_BLOCK_RE = re.compile(
    r"^```([A-Za-z0-9_][A-Za-z0-9_:-]*)[ \t]*\n(.*?)^```[ \t]*$",
    re.MULTILINE | re.DOTALL,
)


@dataclass(frozen=True)
class AgentReplyEnvelope:
    """Raw reply text plus its tagged blocks in order of appearance."""

    raw: str
    blocks: tuple[tuple[str, str], ...]

    @classmethod
    def parse(cls, raw: str) -> "AgentReplyEnvelope":
        blocks = tuple(
            (match.group(1), match.group(2).strip("\n"))
            for match in _BLOCK_RE.finditer(raw)
        )
        return cls(raw=raw, blocks=blocks)

    def tags(self) -> tuple[str, ...]:
        return tuple(tag for tag, _ in self.blocks)

    def all(self, tag: str) -> list[str]:
        return [content for t, content in self.blocks if t == tag]

    def one(self, tag: str) -> str:
        found = self.all(tag)
        if not found:
            raise AgentReplyError(f"reply is missing a ```{tag} block")
        if len(found) > 1:
            raise AgentReplyError(f"reply has {len(found)} ```{tag} blocks, expected one")
        return found[0]

    def prefixed(self, prefix: str) -> dict[str, str]:
        """Blocks whose tag starts with `prefix`, keyed by the remainder."""
        out: dict[str, str] = {}
        for tag, content in self.blocks:
            if tag.startswith(prefix):
                key = tag[len(prefix) :]
                if key in out:
                    raise AgentReplyError(f"reply has duplicate ```{tag} blocks")
                out[key] = content
        return out


_SIGNATURE_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*", re.DOTALL)
_SIG_PARAM_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*([a-z-]+)\s*")


def parse_signature(text: str) -> PolicySignature:
    """`name(param: kind, ...)` -> PolicySignature."""
    match = _SIGNATURE_RE.fullmatch(text.strip())
    if not match:
        raise AgentReplyError(f"malformed signature {text.strip()!r}")
    name, inner = match.group(1), match.group(2).strip()
    params = []
    for part in inner.split(",") if inner else []:
        param_match = _SIG_PARAM_RE.fullmatch(part)
        if not param_match:
            raise AgentReplyError(f"malformed signature parameter {part.strip()!r}")
        params.append((param_match.group(1), param_match.group(2)))
    try:
        return PolicySignature(
            name=name, params=tuple(Param(n, k) for n, k in params)
        )
    except ModelError as exc:
        raise AgentReplyError(f"invalid signature {text.strip()!r}: {exc}") from exc


def parse_bindings(text: str) -> list[ParameterBinding]:
    """One JSON object per line: {"task": id, "values": {param: literal}}."""
    bindings = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AgentReplyError(f"bindings line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict) or "task" not in data or "values" not in data:
            raise AgentReplyError(
                f'bindings line {lineno}: expected {{"task": ..., "values": ...}}'
            )
        try:
            bindings.append(ParameterBinding(task_id=data["task"], values=data["values"]))
        except (ValueError, TypeError) as exc:
            raise AgentReplyError(f"bindings line {lineno}: {exc}") from exc
    return bindings


def parse_usage_notes(text: str) -> dict[str, Mapping[str, str]]:
    """JSON object: component name -> {signature, description, usage}."""
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AgentReplyError(f"usage-notes block: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise AgentReplyError("usage-notes block: expected a JSON object")
    for name, note in data.items():
        if not isinstance(note, dict) or not all(
            isinstance(note.get(key), str) for key in ("signature", "description", "usage")
        ):
            raise AgentReplyError(
                f"usage-notes block: entry {name!r} needs string signature, "
                f"description, and usage fields"
            )
    return data
