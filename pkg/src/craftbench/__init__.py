"""Cross-task targeted attacks on a small unified vision-language model."""

__version__ = "0.1.0"
