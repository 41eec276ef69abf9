"""Runtime harness for multimodal agentic-search episodes."""

__version__ = "0.1.0"
