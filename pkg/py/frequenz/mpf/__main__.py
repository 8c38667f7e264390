# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Run the command line with `python -m frequenz.mpf`."""

import sys

from ._cli import main

sys.exit(main())
