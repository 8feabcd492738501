"""Diffusion-map embedding, Nystrom out-of-sample extension, and
ensemble-voted two-class diagnosis."""

__version__ = "0.1.0"
