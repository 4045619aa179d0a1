"""This package defines reusable I/O utilities for the planning pipeline.
Each module groups one concern: artifact storage, HTTP access, embedding
providers, prompt rendering, LLM transports and response parsing.
"""
