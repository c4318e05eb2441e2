"""Entry point for ``python -m algdich``."""

import sys

from .cli import main

sys.exit(main())
