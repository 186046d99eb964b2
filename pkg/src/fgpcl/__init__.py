"""Class-incremental learning with feature-graph preserving distillation."""

__version__ = "0.1.0"
