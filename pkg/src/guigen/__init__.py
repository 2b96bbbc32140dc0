"""guigen: GUI prototype generation from short natural-language requirements
via zero-shot prompting strategies, retrieval over a GUI repository with
LLM-based re-ranking, and an evaluation harness for ranking and agreement
metrics."""

__version__ = "0.1.0"
