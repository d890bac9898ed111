"""Entry point for python -m coexist_twin."""

import sys

from .cli import main

sys.exit(main())
