"""Backend selection for the hot loops.

The compiled extension ``driftmle._kernels`` is used when it imports;
otherwise, or when ``DRIFTMLE_PURE=1`` is set, the numpy implementations in
``driftmle._fallback`` are used. Both expose the same functions.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("DRIFTMLE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

box_muller = _impl.box_muller
linear_recursion = _impl.linear_recursion
eval_program = _impl.eval_program
em_perturbed = _impl.em_perturbed
mle_sums = _impl.mle_sums
zeta_stats = _impl.zeta_stats


def get_backend(name: str | None = None):
    """Return the kernel module for ``"cython"`` / ``"python"`` (default: active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
