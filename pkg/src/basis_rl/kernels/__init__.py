"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time. Set ``BASIS_RL_BACKEND=numpy`` to
force the numpy path (also used automatically when numba cannot be
imported). Both backends are importable directly as ``numpy_impl`` and
``numba_impl`` for comparison.
"""

import os

import numpy as np

from . import numpy_impl
from .numpy_impl import RVG, UNB, VOP

VARIANT_CODES = {"unb": UNB, "vop": VOP, "rvg": RVG}

_requested = os.environ.get("BASIS_RL_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"BASIS_RL_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

_impl = numpy_impl
BACKEND = "numpy"
if _requested == "numba":
    try:
        from . import numba_impl as _impl  # noqa: F811

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = numpy_impl


def refined_baselines(values, odds, rewards, active, variant):
    return _impl.refined_baselines(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(odds, dtype=np.float64),
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(active, dtype=np.bool_),
        int(variant),
    )


def baseline_grid(p_hat, rewards, grid, epsilon, variant):
    return _impl.baseline_grid(
        np.ascontiguousarray(p_hat, dtype=np.float64),
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(grid, dtype=np.float64),
        float(epsilon),
        int(variant),
    )


def policy_update(logits, prompt_rows, actions, advantages, lr):
    """Apply one REINFORCE step to ``logits`` in place and return it."""
    return _impl.policy_update(
        logits,
        np.ascontiguousarray(prompt_rows, dtype=np.int64),
        np.ascontiguousarray(actions, dtype=np.int64),
        np.ascontiguousarray(advantages, dtype=np.float64),
        float(lr),
    )
