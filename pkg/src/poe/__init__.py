"""Distill a generic classifier into a shared library plus per-task experts,
then assemble task-specific models with no training, via CLI or HTTP service."""

__version__ = "0.1.0"
