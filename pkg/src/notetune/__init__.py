"""notetune: reference-free note-level pitch correction for monophonic singing."""

__version__ = "0.1.0"
