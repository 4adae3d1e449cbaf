"""Positive-unlabeled learning lab: nnPU, self-paced trusted selection, dual students and EMA teachers."""

__version__ = "0.1.0"
