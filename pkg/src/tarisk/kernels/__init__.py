"""Hot numeric kernels, dispatched to numba loops or vectorised NumPy.

The active implementation is chosen once at import from ``TARISK_BACKEND``
(see :mod:`tarisk._accel`). Both implementations stay importable as
``kernels.numpy_impl`` and ``kernels.loop_impl`` for testing and
benchmarking.
"""
from .._accel import BACKEND
from . import _loops as loop_impl
from . import _numpy as numpy_impl

_impl = loop_impl if BACKEND == "numba" else numpy_impl

accumulate_counts = _impl.accumulate_counts
ring_corr = _impl.ring_corr
poisson_small = _impl.poisson_small
lstm_recurrence = _impl.lstm_recurrence
lstm_recurrence_backward = _impl.lstm_recurrence_backward
best_split = _impl.best_split
lasso_cd = _impl.lasso_cd
arma_filter = _impl.arma_filter
ring_offsets = numpy_impl.ring_offsets

__all__ = [
    "BACKEND",
    "accumulate_counts",
    "arma_filter",
    "best_split",
    "lasso_cd",
    "loop_impl",
    "lstm_recurrence",
    "lstm_recurrence_backward",
    "numpy_impl",
    "poisson_small",
    "ring_corr",
    "ring_offsets",
]
