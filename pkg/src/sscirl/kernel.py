"""Kernel selection: compiled Cython core when available, pure Python otherwise.

Set ``SSCIRL_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and the bit-identity test).
"""

import os

if os.environ.get("SSCIRL_PURE_PYTHON") == "1":
    from . import _kernel_py as _impl
else:
    try:
        from . import _kernel as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernel_py as _impl

USING_COMPILED = _impl.COMPILED
simulate_segments = _impl.simulate_segments
