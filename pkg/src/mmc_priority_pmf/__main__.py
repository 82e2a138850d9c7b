"""Run the package as a module."""

from mmc_priority_pmf.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
