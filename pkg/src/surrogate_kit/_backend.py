"""Kernel selection: the compiled extension when importable, else pure Python.

Set ``SURROGATE_KIT_PURE=1`` to force the fallback.
"""

import os

from . import _pycore

BACKEND = "python"
simulate_block = _pycore.simulate_block
forward_block = _pycore.forward_block
ForwardModel = _pycore.ForwardModel

if os.environ.get("SURROGATE_KIT_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        simulate_block = _kernels.simulate_block
        forward_block = _kernels.forward_block
        ForwardModel = _kernels.ForwardModel
        BACKEND = "compiled"
