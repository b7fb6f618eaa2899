"""Hot-loop backend selection.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
numpy implementation in ``_pykernels`` is used. Setting the environment
variable ``SYNFIRE_BP_PURE_PYTHON=1`` forces the fallback.
"""

import os

from synfire_bp import _pykernels
from synfire_bp._pykernels import (  # noqa: F401  (stat column names)
    N_BH,
    N_D1M,
    N_D1M_RAW,
    N_D1P,
    N_D1P_RAW,
    N_D2M,
    N_D2P,
    N_ERR,
    N_H,
    N_HSTART,
    N_HSTOP,
    N_O,
    N_OSTART,
    N_OSTOP,
    N_STATS,
    N_X,
    PRED,
)

_impl = _pykernels
if not os.environ.get("SYNFIRE_BP_PURE_PYTHON"):
    try:
        from synfire_bp import _ckernels as _impl
    except ImportError:
        pass

BACKEND = "cython" if _impl is not _pykernels else "python"

accumulate_columns = _impl.accumulate_columns
hebbian_update = _impl.hebbian_update
run_oracle = _impl.run_oracle


def backends():
    """All importable backends, keyed by name (used by tests and benchmarks)."""
    found = {"python": _pykernels}
    try:
        from synfire_bp import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
