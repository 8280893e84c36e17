"""Run the command-line interface with ``python -m thingcrawl``."""

from .cli import main

raise SystemExit(main())
