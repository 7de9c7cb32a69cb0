"""Experiment harness: synthetic data, evaluation, benchmarks and images."""
