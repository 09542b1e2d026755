"""Backend switch for the hot numeric kernels.

The numba path is used when numba is installed and ``OSM_DISABLE_NUMBA`` is
unset (or ``0``/``false``). Setting ``OSM_DISABLE_NUMBA=1`` forces the
pure-numpy implementations, which are also what the test-suite compares the
compiled kernels against.
"""

import importlib.util
import os

_FLAG = os.environ.get("OSM_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

HAS_NUMBA = importlib.util.find_spec("numba") is not None

USE_NUMBA = HAS_NUMBA and not DISABLED


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
