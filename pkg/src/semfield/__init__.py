"""Multi-view encoder pretraining against semantic neural fields, plus RL agents."""

__version__ = "0.1.0"
