"""Grid-based traffic accident risk analysis and prediction.

Submodules: ``ingest`` (events to count cubes), ``synth`` (synthetic
events), ``patterns`` (spatial and spatio-temporal correlation, exports),
``risk`` (risk target and samples), ``nn`` (stacked LSTM regressor),
``baselines``, ``evaluation`` and ``cli``.

Hot loops run under numba when it is installed; set ``TARISK_BACKEND=numpy``
to force the pure numpy implementations.
"""
from ._accel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
