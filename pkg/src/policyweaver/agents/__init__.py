"""Model-facing agents: templated prompts, gateway calls, strict reply parsing."""

from .envelope import (
    AgentReplyEnvelope,
    AgentReplyError,
    parse_bindings,
    parse_signature,
    parse_usage_notes,
)
from .suite import (
    AGENT_ABSTRACT,
    AGENT_DECOMPOSE,
    AGENT_GENERALIZE,
    AGENT_POLICY,
    AbstractionResult,
    abstract_domain,
    build_abstract_prompt,
    build_debug_prompt,
    build_decompose_prompt,
    build_generalize_prompt,
    build_policy_prompt,
    debug_policy,
    decompose_policy,
    generalize_dedup,
    generate_policy,
    render_api_docs,
    search_components,
)

__all__ = [
    "AGENT_ABSTRACT",
    "AGENT_DECOMPOSE",
    "AGENT_GENERALIZE",
    "AGENT_POLICY",
    "AbstractionResult",
    "AgentReplyEnvelope",
    "AgentReplyError",
    "abstract_domain",
    "build_abstract_prompt",
    "build_debug_prompt",
    "build_decompose_prompt",
    "build_generalize_prompt",
    "build_policy_prompt",
    "debug_policy",
    "decompose_policy",
    "generalize_dedup",
    "generate_policy",
    "parse_bindings",
    "parse_signature",
    "parse_usage_notes",
    "render_api_docs",
    "search_components",
]
