"""Self-supervised ontology matching with a shared transformer encoder and TransE."""

__version__ = "0.1.0"
