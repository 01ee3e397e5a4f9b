"""Backend selection for the sampling hot loops.

Prefers the compiled Cython extension; falls back to the pure-numpy
reference when the extension is missing or NEGSEQ_PURE_PYTHON=1 is set.
Both backends produce identical outputs for identical inputs.
"""

import os

from . import pyref

compiled = None
if os.environ.get("NEGSEQ_PURE_PYTHON", "0").lower() not in ("1", "true", "yes"):
    try:
        from . import _sampling as compiled
    except ImportError:
        compiled = None

if compiled is not None:
    BACKEND = "cython"
    accept_draws = compiled.accept_draws
    member_mask = compiled.member_mask
else:
    BACKEND = "python"
    accept_draws = pyref.accept_draws
    member_mask = pyref.member_mask
