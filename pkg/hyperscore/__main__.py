"""Run the command line with python -m hyperscore."""

from .cli import main

raise SystemExit(main())
