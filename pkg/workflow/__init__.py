"""Experiment configuration, orchestration and progress tracking."""
