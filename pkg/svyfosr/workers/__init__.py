"""Replicate and generation tasks run on a thread pool."""

