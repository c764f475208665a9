"""Desk-scale audio-visual speech transduction toolkit.

Two character-level architectures over synthetic audio-visual utterances:
an autoregressive dual-attention transducer and a frame-wise self-attention
stack trained with CTC, plus their beam decoders with language-model shallow
fusion, edit-distance scoring, and the staged training strategy.
"""

__version__ = "0.1.0"
