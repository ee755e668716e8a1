"""Generalized-policy learning engine with a reusable component library.

Solves groups of parameterized tasks by generating policies with an LLM-agent
pipeline, validating them by execution in a simulated multi-app world,
decomposing successes into reusable components, and periodically
generalizing/deduplicating the component library.
"""

__version__ = "0.1.0"
