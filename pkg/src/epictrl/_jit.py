"""JIT switch for the numeric kernels.

Set ``EPICTRL_DISABLE_JIT=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) to run
every kernel as plain numpy. Results agree to rounding; the compiled path is
what makes the property suites fit in their time budget.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


JIT_DISABLED = _flag("EPICTRL_DISABLE_JIT") or _flag("NUMBA_DISABLE_JIT")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    JIT_DISABLED = True

NJIT_OPTS = {"cache": True, "nogil": True}


def jit(fn):
    """``numba.njit`` with the package options, or identity when disabled."""
    if JIT_DISABLED:
        return fn
    return numba.njit(**NJIT_OPTS)(fn)


def backend():
    return "numpy" if JIT_DISABLED else f"numba-{numba.__version__}"
