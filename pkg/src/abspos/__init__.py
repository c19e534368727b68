"""Controlled absolute-position VQA datasets and evaluation toolkit."""

__version__ = "0.1.0"
