"""Dynamic clip selection for synthetic video classification."""

__version__ = "0.1.0"
