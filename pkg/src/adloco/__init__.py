"""Desk-scale simulator for adaptive-batch DiLoCo with trainer merging and switch-mode accumulation."""

__version__ = "0.1.0"
