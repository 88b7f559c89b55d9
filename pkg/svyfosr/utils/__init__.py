"""Seeding and run-manifest helpers."""

