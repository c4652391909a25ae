# SPDX-License-Identifier: Apache-2.0
"""Generalizable human radiance field: synthetic captures, training, rendering."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
