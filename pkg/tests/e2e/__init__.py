"""End-to-end test layer."""
