"""Semantic parsing with grammar-based data recombination.

The pipeline: load a dataset of (utterance, logical form) pairs, induce a
synchronous context-free grammar from it, sample recombinant examples from
the grammar during training, and fit an attention-based copying
sequence-to-sequence model, decoded with beam search.
"""

__version__ = "0.1.0"
