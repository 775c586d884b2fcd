"""
Package entry point.

Allows running the tool via:

    python -m doanet

This simply forwards execution to doanet.cli.main().
"""

from doanet.cli import main

if __name__ == "__main__":
    main()
