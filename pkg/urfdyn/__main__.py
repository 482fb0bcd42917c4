"""
Entry point for `python -m urfdyn`.

Same main() the `urfdyn` console script calls; its return value is the
process exit code.
"""

from .main import main

if __name__ == "__main__":
    raise SystemExit(main())
