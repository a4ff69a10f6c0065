"""Diverse paraphrase generation trained with a multi-class Wasserstein critic.

The package wires together a GRU auto-encoder, a pattern-conditioned
transcoder sharing the auto-encoder's decoder, and a conditional critic
operating on decoder hidden states. Corpus tooling, evaluation metrics and
a command-line interface round out the artifact.
"""

__version__ = "0.1.0"
