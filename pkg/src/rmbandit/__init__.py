"""Robust multitask estimation and batched multitask contextual bandits."""

__version__ = "0.1.0"
