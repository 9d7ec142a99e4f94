"""langxfer: measure cross-lingual data transfer in byte-level language models."""

__version__ = "0.1.0"
