# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Collect the docstring examples of `frequenz.mpf` as tests.

Examples in fenced `python` blocks are executed and linted with pylint, so
the documented calls stay in sync with the package.
"""

from frequenz.repo.config.pytest import examples
from sybil import Sybil

pytest_collect_file = Sybil(**examples.get_sybil_arguments()).pytest()
