"""Core configuration and utilities."""

