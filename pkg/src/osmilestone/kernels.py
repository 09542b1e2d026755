"""Dispatch to the numba or numpy kernel backend (see ``_accel``)."""

from . import _accel
from . import _kernels_np as numpy_backend

if _accel.USE_NUMBA:
    from . import _kernels_nb as _impl
else:
    _impl = numpy_backend

BACKEND = _accel.backend_name()

weibull_logterms = _impl.weibull_logterms
tl_chaz_factor = _impl.tl_chaz_factor
clayton_logterms = _impl.clayton_logterms
tl_ppd_solve = _impl.tl_ppd_solve
tl_integrated_os = _impl.tl_integrated_os


def numba_backend():
    """The compiled backend module, or None when numba is unavailable."""
    if not _accel.HAS_NUMBA:
        return None
    from . import _kernels_nb

    return _kernels_nb
