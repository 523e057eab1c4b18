"""Transformer families for sequential tabular data, with preprocessing,
upsampling, training, evaluation metrics, and a deterministic benchmark
harness."""

__version__ = "0.1.0"
