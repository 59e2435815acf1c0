"""Curriculum-guided progressive distillation on synthetic reasoning tasks."""

__version__ = "0.1.0"
