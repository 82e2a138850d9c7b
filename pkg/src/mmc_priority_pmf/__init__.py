"""Joint queue-length distributions for the non-preemptive priority M/M/c queue."""

__all__ = ["__version__"]

__version__ = "0.1.0"
