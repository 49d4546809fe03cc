"""Toolchain for learning and suggesting lemma names in Coq developments."""

__version__ = "0.1.0"
