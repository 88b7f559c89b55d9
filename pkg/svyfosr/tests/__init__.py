"""Tests for svyfosr."""
