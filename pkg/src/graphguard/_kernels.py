"""Select the byte-scanning backend at import time.

The compiled ``_speedups`` extension is used when it was built; otherwise the
pure-Python ``_pure`` module. Setting ``GRAPHGUARD_PURE_PYTHON=1`` forces the
fallback (handy for benchmarking and debugging).
"""

import os

if os.environ.get("GRAPHGUARD_PURE_PYTHON", "") not in ("", "0"):
    from graphguard._pure import scan_parameters, split_message
    BACKEND = "python"
else:
    try:
        from graphguard._speedups import scan_parameters, split_message
        BACKEND = "cython"
    except ImportError:
        from graphguard._pure import scan_parameters, split_message
        BACKEND = "python"

__all__ = ["BACKEND", "scan_parameters", "split_message"]
