"""Denoising seq2seq pre-training and evaluation toolkit for Vietnamese text
at syllable and word granularity."""

__version__ = "0.1.0"
