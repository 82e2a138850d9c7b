"""Unit test layer."""
