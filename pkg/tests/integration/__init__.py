"""Integration test layer."""
