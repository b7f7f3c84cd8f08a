"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set GASTRO3D_DISABLE_NATIVE=1 to force the numpy fallback (used by the
benchmark and by tests that compare the two implementations).
"""

import os

from . import _fallback

IMPLEMENTATION = "fallback"

if not os.environ.get("GASTRO3D_DISABLE_NATIVE"):
    try:
        from . import _native  # compiled extension, optional

        IMPLEMENTATION = "native"
    except ImportError:
        _native = None
else:
    _native = None

_impl = _native if IMPLEMENTATION == "native" else _fallback

orientation_histograms = _impl.orientation_histograms
descriptors = _impl.descriptors
march_rays = _impl.march_rays
