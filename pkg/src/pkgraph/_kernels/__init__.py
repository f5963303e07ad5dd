"""Kernel backend selection: compiled extension when available, pure Python otherwise.

Set ``PKG_PURE_PYTHON=1`` to force the fallback (useful for the benchmark and
for debugging). ``BACKEND`` reports which implementation is active.
"""

import os

from . import pure

if os.environ.get("PKG_PURE_PYTHON"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        _impl = pure
        BACKEND = "pure"

fnv1a64 = _impl.fnv1a64
hash_accumulate = _impl.hash_accumulate
simple_paths_from = _impl.simple_paths_from
