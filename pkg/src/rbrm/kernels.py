"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``RBRM_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

STOCHASTIC = _pykernels.STOCHASTIC
SIMPLIFIED = _pykernels.SIMPLIFIED
UNIFORM = _pykernels.UNIFORM
VARIANTS = {"stochastic": STOCHASTIC, "simplified": SIMPLIFIED, "uniform": UNIFORM}

_backend = _pykernels
if os.environ.get("RBRM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _backend
    except ImportError:  # extension not built
        _backend = _pykernels

BACKEND = "cython" if _backend.is_compiled() else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None)."""
    if name is None:
        return _backend
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def variant_code(variant) -> int:
    if isinstance(variant, int):
        return variant
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown bound variant {variant!r}") from None


subset_weights = _backend.subset_weights
step_value = _backend.step_value
fold_bound = _backend.fold_bound
fold_covariance = _backend.fold_covariance
exact_expectation = _backend.exact_expectation
